"""Deterministic synthetic image corpus for desk-scale experiments.

The real Middle Eastern food corpus is not redistributable, so tests and
demos run on a generated stand-in: 27 raw classes whose consolidation yields
23 final classes, with five final classes deliberately underrepresented.
Images of one final class share a color/texture signature, so merged raw
classes are near-duplicates of each other and classes are learnable from
cheap features.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import DEFAULT_CONSOLIDATION

MERGED_RAW_COUNTS = {
    "baklava": 8,
    "kinafah": 7,
    "khubz": 8,
    "pita": 7,
    "salad": 5,
    "tabouleh": 5,
    "fattoush": 5,
}

BIG_CLASSES = (
    "dolma", "falafel", "fatteh", "hummus", "kabsa", "kibbeh", "kofta",
    "manakish", "mansaf", "maqluba", "mujadara", "sambousek", "shakshuka",
    "shawarma", "warak_enab",
)

SMALL_CLASSES = ("basbousa", "couscous", "halloumi", "harira", "labneh")


def default_counts() -> dict[str, int]:
    """300 images over 27 raw classes; small classes stay deficient."""
    counts = dict(MERGED_RAW_COUNTS)
    counts.update({name: 15 for name in BIG_CLASSES})
    counts.update({name: 6 for name in SMALL_CLASSES})
    return counts


def class_signature(final_label: str) -> np.ndarray:
    """Stable RGB base color for a final class."""
    digest = hashlib.sha256(final_label.encode()).digest()
    return np.array(list(digest[:3]), dtype=np.float64)


def render_image(final_label: str, rng: np.random.Generator, size: int = 48) -> np.ndarray:
    base = class_signature(final_label)
    img = np.tile(base, (size, size, 1))
    # class-specific stripe frequency plus per-image jitter
    freq = 2 + class_signature(final_label)[1] % 5
    yy = np.arange(size)[:, None, None]
    img = img + 30 * np.sin(2 * np.pi * freq * yy / size + rng.uniform(0, 2 * np.pi))
    img = img + rng.normal(0, 12, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_corpus(root, counts: dict[str, int] | None = None, size: int = 48, seed: int = 0):
    """Write root/<raw-label>/img_####.png; deterministic for a fixed seed."""
    root = Path(root)
    counts = counts if counts is not None else default_counts()
    for raw_label in sorted(counts):
        final = DEFAULT_CONSOLIDATION.get(raw_label, raw_label)
        class_dir = root / raw_label
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(counts[raw_label]):
            rng = np.random.default_rng(
                abs(int.from_bytes(hashlib.sha256(f"{seed}|{raw_label}|{i}".encode()).digest()[:8], "little"))
            )
            arr = render_image(final, rng, size=size)
            Image.fromarray(arr, "RGB").save(class_dir / f"img_{i:04d}.png", format="PNG")
    return root
