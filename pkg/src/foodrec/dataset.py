"""Corpus scanning, class consolidation, stratified splits, and k-fold
assignment. A corpus is a directory of per-raw-label subdirectories of
JPEG/PNG images; manifests are line-delimited JSON, one record per line.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, replace, asdict
from pathlib import Path

from PIL import Image

from .seeding import rng_for

# The three consolidations named by the source dataset analysis; merged-class
# names are this toolkit's convention.
DEFAULT_CONSOLIDATION = {
    "baklava": "baklava_kinafah",
    "kinafah": "baklava_kinafah",
    "khubz": "khubz_pita",
    "pita": "khubz_pita",
    "tabouleh": "salad",
    "fattoush": "salad",
}

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png"}


@dataclass(frozen=True)
class ClassTaxonomy:
    raw_labels: tuple[str, ...]
    consolidation_map: dict[str, str]
    final_labels: tuple[str, ...]  # alphabetical; defines class indices

    @staticmethod
    def build(raw_labels, consolidation_map=None) -> "ClassTaxonomy":
        cmap = dict(consolidation_map or {})
        raw = tuple(sorted(set(raw_labels)))
        final = tuple(sorted({cmap.get(l, l) for l in raw}))
        return ClassTaxonomy(raw, cmap, final)

    def index(self, label: str) -> int:
        return self.final_labels.index(label)


def consolidate(raw_label: str, taxonomy: ClassTaxonomy) -> str:
    """Apply the consolidation map; identity for unmapped labels."""
    return taxonomy.consolidation_map.get(raw_label, raw_label)


def load_consolidation(path) -> dict[str, str]:
    """Parse a plain-text map, one "raw -> final" pair per line."""
    cmap = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'raw -> final', got {line!r}")
        raw, final = (part.strip() for part in line.split("->", 1))
        cmap[raw] = final
    return cmap


def save_consolidation(cmap: dict[str, str], path):
    lines = [f"{raw} -> {final}" for raw, final in sorted(cmap.items())]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SampleRecord:
    path: str
    raw_label: str
    label: str
    split: str = "train"  # "train" | "test"
    fold: int | None = None
    provenance: str = "original"  # "original" | "augmented"
    source: str | None = None  # originating record path for augmented samples


@dataclass
class ScanReport:
    scanned: int = 0
    accepted: int = 0
    skipped: list[tuple[str, str]] = None  # (path, reason)
    warnings: list[str] = None

    def __post_init__(self):
        self.skipped = self.skipped or []
        self.warnings = self.warnings or []

    def to_text(self) -> str:
        lines = [f"scanned {self.scanned} files, accepted {self.accepted}"]
        for path, reason in self.skipped:
            lines.append(f"skipped {path}: {reason}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"


def scan_corpus(root, consolidation_map=None) -> tuple[list[SampleRecord], ClassTaxonomy, ScanReport]:
    """One record per decodable image under root/<raw-label>/, path-sorted."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root {root} is not a directory")
    report = ScanReport()
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    taxonomy = ClassTaxonomy.build((p.name for p in class_dirs), consolidation_map)
    records = []
    for class_dir in class_dirs:
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            report.warnings.append(f"class directory {class_dir.name} is empty")
            continue
        for f in files:
            report.scanned += 1
            try:
                with Image.open(f) as img:
                    img.verify()
            except Exception as exc:
                report.skipped.append((str(f), str(exc)))
                continue
            report.accepted += 1
            records.append(
                SampleRecord(
                    path=str(f),
                    raw_label=class_dir.name,
                    label=consolidate(class_dir.name, taxonomy),
                )
            )
    records.sort(key=lambda r: r.path)
    return records, taxonomy, report


def split(records, train_fraction: float, seed: int) -> tuple[list[SampleRecord], list[str]]:
    """Stratified train/test assignment over original records.

    Pure function of (seed, sorted paths); augmented records are untouched
    and never reach the test split.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction {train_fraction} outside (0, 1)")
    warnings = []
    by_class = defaultdict(list)
    for i, r in enumerate(records):
        if r.provenance == "original":
            by_class[r.label].append(i)
    assignment = {}
    for label in sorted(by_class):
        idx = sorted(by_class[label], key=lambda i: records[i].path)
        if len(idx) < 2:
            warnings.append(f"class {label} has {len(idx)} sample(s); all assigned to train")
            for i in idx:
                assignment[i] = "train"
            continue
        order = rng_for(seed, "split", label).permutation(len(idx))
        n_train = max(1, int(len(idx) * train_fraction))
        n_train = min(n_train, len(idx) - 1)  # keep at least one test sample
        for rank, j in enumerate(order):
            assignment[idx[j]] = "train" if rank < n_train else "test"
    out = []
    for i, r in enumerate(records):
        if i in assignment:
            out.append(replace(r, split=assignment[i], fold=None))
        else:
            out.append(r)
    return out, warnings


def assign_folds(records, k: int = 10, seed: int = 0) -> tuple[list[SampleRecord], list[str]]:
    """Stratified fold indices over training originals; per-class sizes differ by <= 1."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    warnings = []
    by_class = defaultdict(list)
    for i, r in enumerate(records):
        if r.provenance == "original" and r.split == "train":
            by_class[r.label].append(i)
    folds = {}
    for label in sorted(by_class):
        idx = sorted(by_class[label], key=lambda i: records[i].path)
        if len(idx) < k:
            warnings.append(
                f"class {label} has {len(idx)} training samples for {k} folds; "
                "some folds will be empty for this class"
            )
        order = rng_for(seed, "folds", label).permutation(len(idx))
        for rank, j in enumerate(order):
            folds[idx[j]] = rank % k
    out = []
    for i, r in enumerate(records):
        if i in folds:
            out.append(replace(r, fold=folds[i]))
        else:
            out.append(r)
    return out, warnings


@dataclass(frozen=True)
class ClassStats:
    """Per-label sample counts reconciling exactly with the manifest."""

    original: dict[str, int]
    augmented: dict[str, int]
    train_original: dict[str, int]
    train_augmented: dict[str, int]
    test: dict[str, int]

    def total(self) -> int:
        return sum(self.original.values()) + sum(self.augmented.values())


def class_stats(records) -> ClassStats:
    cells = [defaultdict(int) for _ in range(5)]
    original, augmented, train_orig, train_aug, test = cells
    for r in records:
        if r.provenance == "original":
            original[r.label] += 1
            if r.split == "train":
                train_orig[r.label] += 1
        else:
            augmented[r.label] += 1
            if r.split == "train":
                train_aug[r.label] += 1
        if r.split == "test":
            test[r.label] += 1
    return ClassStats(*(dict(c) for c in cells))


def save_manifest(records, path):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def load_manifest(path) -> list[SampleRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(SampleRecord(**json.loads(line)))
    return records
