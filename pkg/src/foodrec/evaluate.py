"""Top-k evaluation, confusion matrices, cross-validation, and the
pre-processing ablation grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from .augment import AugmentationPolicy, materialize, plan
from .dataset import DEFAULT_CONSOLIDATION, scan_corpus, split
from .model import Model, replace_head
from .trainer import FeatureCache, HeadWeights, TrainConfig, extract_features, train_head


@dataclass(frozen=True)
class Metrics:
    top_k: dict[int, float]  # k -> accuracy in [0, 1]
    confusion: np.ndarray  # [true, predicted] counts
    precision: dict[str, float]
    recall: dict[str, float]
    label_names: tuple[str, ...]
    n: int
    mispredictions: tuple[tuple[str, str, str, float], ...] = ()  # path, true, pred, prob

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "top_k": {str(k): v for k, v in self.top_k.items()},
            "confusion": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "label_names": list(self.label_names),
            "mispredictions": [list(m) for m in self.mispredictions],
        }


def _ranked(probs: np.ndarray) -> np.ndarray:
    # stable sort on negated probabilities: ties go to the lower class index
    return np.argsort(-probs, axis=1, kind="stable")


def evaluate_probs(
    probs: np.ndarray,
    true_idx: np.ndarray,
    label_names,
    k_list=(1, 5),
    paths=None,
) -> Metrics:
    """Score a probability matrix against true class indices."""
    label_names = tuple(label_names)
    n, c = probs.shape
    if n == 0:
        raise ValueError("cannot evaluate an empty subset")
    if true_idx.min() < 0 or true_idx.max() >= c:
        bad = int(true_idx[(true_idx < 0) | (true_idx >= c)][0])
        raise ValueError(f"label index {bad} outside taxonomy of {c} classes")
    order = _ranked(probs)
    top_k = {}
    for k in k_list:
        k_eff = min(k, c)
        hits = (order[:, :k_eff] == true_idx[:, None]).any(axis=1)
        top_k[k] = float(hits.mean())
    pred = order[:, 0]
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (true_idx, pred), 1)
    precision, recall = {}, {}
    for i, label in enumerate(label_names):
        col = confusion[:, i].sum()
        row = confusion[i, :].sum()
        precision[label] = float(confusion[i, i] / col) if col else 0.0
        recall[label] = float(confusion[i, i] / row) if row else 0.0
    missed = []
    for j in range(n):
        if pred[j] != true_idx[j]:
            missed.append(
                (
                    paths[j] if paths else str(j),
                    label_names[true_idx[j]],
                    label_names[pred[j]],
                    float(probs[j, pred[j]]),
                )
            )
    missed.sort(key=lambda m: (-m[3], m[0]))  # confident mistakes first
    return Metrics(top_k, confusion, precision, recall, label_names, n, tuple(missed))


def evaluate_head(head: HeadWeights, cache: FeatureCache, k_list=(1, 5)) -> Metrics:
    return evaluate_probs(
        head.probabilities(cache.features),
        cache.labels,
        cache.label_names,
        k_list,
        paths=cache.paths,
    )


def _subset(cache: FeatureCache, mask: np.ndarray) -> FeatureCache:
    idx = np.flatnonzero(mask)
    return FeatureCache(
        features=cache.features[idx],
        labels=cache.labels[idx],
        paths=[cache.paths[i] for i in idx],
        label_names=cache.label_names,
        hashes=[cache.hashes[i] for i in idx] if cache.hashes else [],
    )


@dataclass(frozen=True)
class CrossValidationResult:
    per_fold: tuple[Metrics, ...]
    mean_top_k: dict[int, float]
    std_top_k: dict[int, float]


def cross_validate(
    cache: FeatureCache,
    folds: np.ndarray,
    config: TrainConfig,
    k: int = 10,
    k_list=(1, 5),
) -> CrossValidationResult:
    """Train on folds != i, score fold i; features are extracted once upstream."""
    results = []
    for i in range(k):
        held = folds == i
        if not held.any():
            raise ValueError(f"fold {i} is empty")
        if held.all():
            raise ValueError(f"fold {i} holds every sample; nothing to train on")
        head, _ = train_head(_subset(cache, ~held), dc_replace(config, seed=config.seed))
        results.append(evaluate_head(head, _subset(cache, held), k_list))
    mean = {kk: float(np.mean([m.top_k[kk] for m in results])) for kk in k_list}
    std = {kk: float(np.std([m.top_k[kk] for m in results])) for kk in k_list}
    return CrossValidationResult(tuple(results), mean, std)


# Published results on the original (non-distributed) corpus, kept as a
# documented expectation for report footers; not reproducible at desk scale.
REFERENCE_ABLATION = {
    (False, True): 0.900,
    (True, False): 0.935,
    (True, True): 0.940,
}
DEFAULT_ABLATION_GRID = ((False, True), (True, False), (True, True))


@dataclass(frozen=True)
class AblationRow:
    consolidation: bool
    augmentation: bool
    num_classes: int
    top1: float
    reference_top1: float | None = None


@dataclass(frozen=True)
class AblationReport:
    rows: tuple[AblationRow, ...]

    def to_text(self) -> str:
        lines = [
            f"{'combined classes':>18}{'augmentation':>15}{'classes':>9}{'top-1':>9}{'published*':>12}"
        ]
        for r in self.rows:
            ref = f"{r.reference_top1:.1%}" if r.reference_top1 is not None else "-"
            lines.append(
                f"{'yes' if r.consolidation else 'no':>18}"
                f"{'yes' if r.augmentation else 'no':>15}"
                f"{r.num_classes:>9}{r.top1:>9.1%}{ref:>12}"
            )
        lines.append(
            "* published figures come from the original corpus, which is not"
        )
        lines.append(
            "  distributed; rows with different class counts are not directly comparable."
        )
        return "\n".join(lines) + "\n"


def run_ablation(
    corpus_root,
    backbone: Model,
    config: TrainConfig,
    policy: AugmentationPolicy,
    workdir,
    grid=DEFAULT_ABLATION_GRID,
    train_fraction: float = 0.9,
    seed: int = 0,
    consolidation_map=None,
) -> AblationReport:
    """Run scan -> split -> (augment) -> features -> head -> eval per grid cell."""
    workdir = Path(workdir)
    consolidation_map = (
        consolidation_map if consolidation_map is not None else DEFAULT_CONSOLIDATION
    )
    rows = []
    for consolidation, augmentation in grid:
        cmap = consolidation_map if consolidation else {}
        records, taxonomy, _ = scan_corpus(corpus_root, cmap)
        records, _ = split(records, train_fraction, seed)
        if augmentation:
            items, _ = plan(records, policy)
            cell_dir = workdir / f"cell_c{int(consolidation)}_a{int(augmentation)}"
            records, _ = materialize(records, items, cell_dir)
        model = replace_head(
            backbone, len(taxonomy.final_labels), seed=seed, labels=taxonomy.final_labels
        )
        train_records = [r for r in records if r.split == "train"]
        test_records = [r for r in records if r.split == "test"]
        train_cache, _ = extract_features(model, train_records, taxonomy.final_labels)
        test_cache, _ = extract_features(model, test_records, taxonomy.final_labels)
        head, _ = train_head(train_cache, config)
        metrics = evaluate_head(head, test_cache)
        rows.append(
            AblationRow(
                consolidation=consolidation,
                augmentation=augmentation,
                num_classes=len(taxonomy.final_labels),
                top1=metrics.top_k[1],
                reference_top1=REFERENCE_ABLATION.get((consolidation, augmentation)),
            )
        )
    return AblationReport(tuple(rows))
