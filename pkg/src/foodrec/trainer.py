"""Head-only training on frozen-backbone features.

The backbone never receives gradients here; images are reduced once to
pooled feature vectors, and a softmax cross-entropy classifier is trained
on them with a hand-rolled Adam (bias-corrected, seeded shuffling).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .model import Model, preprocess
from .seeding import rng_for
from .tensor import softmax
from .weights import read_container, write_container


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    head_lr: float = 1e-3
    backbone_lr: float = 1e-4  # recorded for fidelity; backbone stays frozen
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    epochs: int = 30
    early_stop_patience: int = 5
    early_stop_delta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.head_lr <= 0 or self.backbone_lr <= 0:
            raise ValueError("learning rates must be > 0")


@dataclass
class FeatureCache:
    """Pooled backbone features, one row per manifest record."""

    features: np.ndarray  # (N, D) float32
    labels: np.ndarray  # (N,) int64 indices into label_names
    paths: list[str]
    label_names: tuple[str, ...]
    hashes: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.paths)


def _content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_feature_cache(cache: FeatureCache, path):
    write_container(
        path,
        {"features": cache.features, "labels": cache.labels.astype(np.float32)},
        {
            "kind": "feature-cache",
            "paths": cache.paths,
            "label_names": list(cache.label_names),
            "hashes": cache.hashes,
        },
    )


def load_feature_cache(path) -> FeatureCache:
    arrays, manifest = read_container(path)
    meta = manifest.metadata
    return FeatureCache(
        features=arrays["features"],
        labels=arrays["labels"].astype(np.int64),
        paths=list(meta["paths"]),
        label_names=tuple(meta["label_names"]),
        hashes=list(meta["hashes"]),
    )


def extract_features(
    model: Model,
    records,
    label_names,
    batch_size: int = 16,
    cache_path=None,
) -> tuple[FeatureCache, list[tuple[str, str]]]:
    """Backbone features for every readable record, content-hash cached.

    Returns the cache plus (path, reason) for records that failed to load.
    """
    label_names = tuple(label_names)
    index = {l: i for i, l in enumerate(label_names)}
    cached: dict[str, np.ndarray] = {}
    if cache_path is not None and Path(cache_path).exists():
        old = load_feature_cache(cache_path)
        if old.label_names == label_names and old.features.shape[1:] == (model.spec.head_width,):
            cached = dict(zip(old.hashes, old.features))

    skipped: list[tuple[str, str]] = []
    rows: list[np.ndarray | None] = []
    keep: list = []
    hashes: list[str] = []
    pending: list[int] = []
    batch: list[np.ndarray] = []

    def flush():
        if not batch:
            return
        feats = model.features(np.concatenate(batch, axis=0))
        for slot, feat in zip(pending, feats):
            rows[slot] = feat
        batch.clear()
        pending.clear()

    for r in records:
        if r.label not in index:
            raise ValueError(f"record label '{r.label}' outside the taxonomy")
        try:
            digest = _content_hash(r.path)
            if digest in cached:
                rows.append(cached[digest])
            else:
                with Image.open(r.path) as img:
                    x = preprocess(img, model.spec)
                rows.append(None)
                pending.append(len(rows) - 1)
                batch.append(x)
                if len(batch) >= batch_size:
                    flush()
        except (OSError, ValueError) as exc:
            skipped.append((r.path, str(exc)))
            continue
        keep.append(r)
        hashes.append(digest)
    flush()

    features = (
        np.stack(rows).astype(np.float32)
        if rows
        else np.zeros((0, model.spec.head_width), dtype=np.float32)
    )
    cache = FeatureCache(
        features=features,
        labels=np.array([index[r.label] for r in keep], dtype=np.int64),
        paths=[r.path for r in keep],
        label_names=label_names,
        hashes=hashes,
    )
    if cache_path is not None:
        save_feature_cache(cache, cache_path)
    return cache, skipped


@dataclass(frozen=True)
class HeadWeights:
    weight: np.ndarray  # (num_classes, D)
    bias: np.ndarray  # (num_classes,)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return (features @ self.weight.T + self.bias).astype(np.float32)

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))


def cross_entropy_loss_and_grad(weight, bias, features, labels, num_classes):
    """Mean -log p_true plus its analytic gradient.

    The gradient is (softmax - one-hot) averaged over the batch, outer-product
    with the features for the weight term.
    """
    n = features.shape[0]
    with np.errstate(invalid="ignore", over="ignore"):
        logits = (features @ weight.T + bias).astype(np.float64)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
    eps = np.finfo(np.float64).tiny
    loss = float(-np.log(probs[np.arange(n), labels] + eps).mean())
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grad_w = delta.T @ features
    grad_b = delta.sum(axis=0)
    return loss, grad_w.astype(np.float64), grad_b.astype(np.float64)


class AdamState:
    """First/second moment accumulators with bias correction."""

    def __init__(self, shape):
        self.m = np.zeros(shape, dtype=np.float64)
        self.v = np.zeros(shape, dtype=np.float64)
        self.t = 0

    def step(self, grad, lr, betas, eps):
        b1, b2 = betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return -lr * m_hat / (np.sqrt(v_hat) + eps)


def train_head(cache: FeatureCache, config: TrainConfig) -> tuple[HeadWeights, list[float]]:
    """Minimize mean cross-entropy over seeded shuffled mini-batches.

    Returns the head and the per-epoch mean loss curve.
    """
    n = len(cache)
    if n == 0:
        raise ValueError("feature cache is empty")
    num_classes = len(cache.label_names)
    dim = cache.features.shape[1]
    rng = rng_for(config.seed, "head-init")
    bound = 1.0 / np.sqrt(dim)
    weight = rng.uniform(-bound, bound, (num_classes, dim))
    bias = np.zeros(num_classes, dtype=np.float64)
    state_w = AdamState(weight.shape)
    state_b = AdamState(bias.shape)

    x = cache.features.astype(np.float64)
    y = cache.labels
    curve: list[float] = []
    best = np.inf
    stale = 0
    for epoch in range(config.epochs):
        order = rng_for(config.seed, "shuffle", epoch).permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, gw, gb = cross_entropy_loss_and_grad(
                weight, bias, x[idx], y[idx], num_classes
            )
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}: "
                    f"loss={loss}, |w|max={np.abs(weight).max():.3g}"
                )
            losses.append(loss * len(idx))
            weight += state_w.step(gw, config.head_lr, config.betas, config.epsilon)
            bias += state_b.step(gb, config.head_lr, config.betas, config.epsilon)
        epoch_mean = float(np.sum(losses) / n)
        curve.append(epoch_mean)
        if best - epoch_mean < config.early_stop_delta:
            stale += 1
            if stale >= config.early_stop_patience:
                break
        else:
            stale = 0
        best = min(best, epoch_mean)
    return (
        HeadWeights(weight.astype(np.float32), bias.astype(np.float32)),
        curve,
    )
