"""Sequential augmentation chain for underrepresented classes.

Fixed op order: horizontal flip, random crop (resized back), Gaussian noise,
affine transform, contrast change. Every sampled parameter lives in the
recipe, so an augmented image is a pure function of (source image, recipe),
and a plan is a pure function of (manifest, policy).
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .dataset import ClassStats, SampleRecord, class_stats
from .seeding import rng_for, subseed


@dataclass(frozen=True)
class AugmentationPolicy:
    class_threshold: int = 100
    target_count: int | None = None  # defaults to class_threshold
    flip_prob: float = 0.5
    crop_area: tuple[float, float] = (0.8, 1.0)
    noise_sigma: tuple[float, float] = (2.0, 12.0)  # on the 0-255 scale
    max_rotation_deg: float = 15.0
    max_translate: float = 0.1  # fraction of each axis
    scale_range: tuple[float, float] = (0.9, 1.1)
    contrast_range: tuple[float, float] = (0.7, 1.3)
    seed: int = 0

    def __post_init__(self):
        if self.class_threshold < 1:
            raise ValueError(f"class_threshold must be >= 1, got {self.class_threshold}")

    @property
    def target(self) -> int:
        return self.target_count if self.target_count is not None else self.class_threshold


@dataclass(frozen=True)
class AugmentationRecipe:
    """Concrete sampled parameters; fully determines the output image.

    crop is (x0, y0, side) as fractions of the image extent; affine is a 2x3
    matrix over center-normalized coordinates (x and y in [-0.5, 0.5]).
    """

    flip: bool
    crop: tuple[float, float, float]
    noise_sigma: float
    noise_seed: int
    affine: tuple[tuple[float, float, float], tuple[float, float, float]]
    contrast: float

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(doc: dict) -> "AugmentationRecipe":
        return AugmentationRecipe(
            flip=doc["flip"],
            crop=tuple(doc["crop"]),
            noise_sigma=doc["noise_sigma"],
            noise_seed=doc["noise_seed"],
            affine=tuple(tuple(row) for row in doc["affine"]),
            contrast=doc["contrast"],
        )


def sample_recipe(policy: AugmentationPolicy, label: str, index: int) -> AugmentationRecipe:
    rng = rng_for(policy.seed, "recipe", label, index)
    flip = bool(rng.random() < policy.flip_prob)
    side = math.sqrt(rng.uniform(*policy.crop_area))
    x0 = rng.uniform(0.0, 1.0 - side)
    y0 = rng.uniform(0.0, 1.0 - side)
    sigma = rng.uniform(*policy.noise_sigma)
    rot = math.radians(rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg))
    tx = rng.uniform(-policy.max_translate, policy.max_translate)
    ty = rng.uniform(-policy.max_translate, policy.max_translate)
    s = rng.uniform(*policy.scale_range)
    affine = (
        (s * math.cos(rot), -s * math.sin(rot), tx),
        (s * math.sin(rot), s * math.cos(rot), ty),
    )
    contrast = rng.uniform(*policy.contrast_range)
    return AugmentationRecipe(flip, (x0, y0, side), sigma, subseed(policy.seed, "noise", label, index), affine, contrast)


def identity_recipe() -> AugmentationRecipe:
    return AugmentationRecipe(
        flip=False,
        crop=(0.0, 0.0, 1.0),
        noise_sigma=0.0,
        noise_seed=0,
        affine=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
        contrast=1.0,
    )


def _apply_affine(arr: np.ndarray, matrix) -> np.ndarray:
    """Forward-map pixels through the center-normalized affine, edge-replicated."""
    h, w = arr.shape[:2]
    a = np.array(matrix, dtype=np.float64)
    lin = a[:, :2]
    trans = a[:, 2]
    if np.allclose(lin, np.eye(2)) and np.allclose(trans, 0.0):
        return arr
    # ndimage maps output -> input, so invert the forward transform.
    inv = np.linalg.inv(lin)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    scale = np.array([[1.0 / w, 0.0], [0.0, 1.0 / h]])  # pixel -> normalized (x, y)
    # input_xy_norm = inv @ (output_xy_norm - trans)
    m_xy = np.linalg.inv(scale) @ inv @ scale  # pixel-space linear part (x, y)
    # reorder to ndimage's (row, col) = (y, x) convention
    m_yx = np.array([[m_xy[1, 1], m_xy[1, 0]], [m_xy[0, 1], m_xy[0, 0]]])
    t_pix = np.linalg.inv(scale) @ inv @ (-trans)
    offset_yx = np.array([cy, cx]) - m_yx @ np.array([cy, cx]) + np.array([t_pix[1], t_pix[0]])
    out = np.empty_like(arr, dtype=np.float64)
    for c in range(arr.shape[2]):
        out[:, :, c] = ndimage.affine_transform(
            arr[:, :, c].astype(np.float64),
            m_yx,
            offset=offset_yx,
            order=1,
            mode="nearest",
        )
    return out


def apply(image, recipe: AugmentationRecipe) -> np.ndarray:
    """Run the chain on an RGB image; returns uint8 (H, W, 3) of the same size."""
    if isinstance(image, Image.Image):
        arr = np.asarray(image.convert("RGB"))
    else:
        arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected non-empty (H, W, 3) RGB image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    out = arr.astype(np.float64)

    if recipe.flip:
        out = out[:, ::-1]

    x0f, y0f, side = recipe.crop
    if not (0.0 <= x0f and 0.0 <= y0f and x0f + side <= 1.0 + 1e-9 and y0f + side <= 1.0 + 1e-9 and side > 0):
        raise ValueError(f"crop rectangle {recipe.crop} falls outside the unit square")
    if (x0f, y0f, side) != (0.0, 0.0, 1.0):
        cw = max(1, round(side * w))
        ch = max(1, round(side * h))
        cx = min(round(x0f * w), w - cw)
        cy = min(round(y0f * h), h - ch)
        cropped = np.clip(np.rint(out[cy : cy + ch, cx : cx + cw]), 0, 255).astype(np.uint8)
        out = np.asarray(
            Image.fromarray(cropped, "RGB").resize((w, h), Image.BILINEAR)
        ).astype(np.float64)

    if recipe.noise_sigma > 0:
        noise = np.random.default_rng(recipe.noise_seed).standard_normal(out.shape)
        out = out + recipe.noise_sigma * noise

    out = _apply_affine(out, recipe.affine)

    if recipe.contrast != 1.0:
        mean = out.mean()
        out = (out - mean) * recipe.contrast + mean

    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class PlanItem:
    source: SampleRecord
    recipe: AugmentationRecipe
    output_name: str  # file name under <output_root>/<label>/


def plan(records, policy: AugmentationPolicy) -> tuple[list[PlanItem], list[str]]:
    """Recipes topping every deficient class up to the policy target.

    Counts training originals only; sources cycle round-robin in path order.
    """
    warnings = []
    by_class = defaultdict(list)
    labels = set()
    for r in records:
        labels.add(r.label)
        if r.provenance == "original" and r.split == "train":
            by_class[r.label].append(r)
    items = []
    for label in sorted(labels):
        sources = sorted(by_class[label], key=lambda r: r.path)
        count = len(sources)
        if count >= policy.class_threshold:
            continue
        if count == 0:
            warnings.append(f"class {label} has no training originals; skipped")
            continue
        for i in range(policy.target - count):
            items.append(
                PlanItem(
                    source=sources[i % count],
                    recipe=sample_recipe(policy, label, i),
                    output_name=f"{label}_aug_{i:04d}.png",
                )
            )
    return items, warnings


def materialize(records, items, output_root) -> tuple[list[SampleRecord], "AugmentationReport"]:
    """Write augmented PNGs and append their records to the manifest.

    A line-per-item journal under the output root makes interrupted runs
    resumable: finished outputs are skipped on rerun.
    """
    output_root = Path(output_root)
    try:
        output_root.mkdir(parents=True, exist_ok=True)
        probe = output_root / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ValueError(f"output root {output_root} is not writable: {exc}") from exc

    journal_path = output_root / "plan_journal.jsonl"
    done = set()
    if journal_path.exists():
        for line in journal_path.read_text().splitlines():
            if line.strip():
                done.add(json.loads(line)["output"])

    before = class_stats(records)
    new_records = list(records)
    with open(journal_path, "a") as journal:
        for item in items:
            out_rel = f"{item.source.label}/{item.output_name}"
            out_path = output_root / out_rel
            if out_rel not in done:
                out_path.parent.mkdir(parents=True, exist_ok=True)
                with Image.open(item.source.path) as img:
                    result = apply(img, item.recipe)
                Image.fromarray(result, "RGB").save(out_path, format="PNG")
                journal.write(
                    json.dumps(
                        {"output": out_rel, "source": item.source.path, "recipe": item.recipe.to_json()},
                        sort_keys=True,
                    )
                    + "\n"
                )
            new_records.append(
                SampleRecord(
                    path=str(out_path),
                    raw_label=item.source.raw_label,
                    label=item.source.label,
                    split="train",
                    fold=None,
                    provenance="augmented",
                    source=item.source.path,
                )
            )
    new_records.sort(key=lambda r: r.path)
    after = class_stats(new_records)
    return new_records, AugmentationReport(before, after)


@dataclass(frozen=True)
class AugmentationReport:
    before: ClassStats
    after: ClassStats

    def to_text(self) -> str:
        """Train/test/total counts without and with augmentation."""

        def row(name, stats):
            train = sum(stats.train_original.values()) + sum(stats.train_augmented.values())
            test = sum(stats.test.values())
            return f"{name:<22}{train:>10}{test:>10}{train + test:>10}"

        header = f"{'':<22}{'Train Set':>10}{'Test Set':>10}{'Total':>10}"
        return "\n".join(
            [header, row("Without augmentation", self.before), row("With augmentation", self.after)]
        ) + "\n"
