"""MobileNet-v2 graph construction, weight I/O, preprocessing, and inference.

The network is the standard MobileNet-v2 layout: a stride-2 stem conv, 17
inverted-residual bottlenecks, a final 1x1 conv to the head width, global
average pooling, and a fully-connected classifier. Batch norm is folded into
the preceding conv for the inference hot path; the unfolded path exists for
equivalence checking.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from . import tensor as T
from .weights import read_container, write_container, ContainerError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# (expansion factor, output channels, stride, repeats)
MOBILENETV2_ROWS = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 2, 3),
    (6, 64, 2, 4),
    (6, 96, 1, 3),
    (6, 160, 2, 3),
    (6, 320, 1, 1),
)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture parameters; the default matches the reference table."""

    rows: tuple[tuple[int, int, int, int], ...] = MOBILENETV2_ROWS
    stem_channels: int = 32
    head_width: int = 1280
    input_size: int = 224
    num_classes: int = 23

    def __post_init__(self):
        for i, (t, c, s, n) in enumerate(self.rows):
            if t < 1:
                raise ValueError(f"row {i}: expansion factor {t} must be >= 1")
            if s not in (1, 2):
                raise ValueError(f"row {i}: stride {s} must be 1 or 2")
            if c < 1 or n < 1:
                raise ValueError(f"row {i}: bad channels/repeats ({c}, {n})")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")

    def to_metadata(self) -> dict:
        return {
            "rows": [list(r) for r in self.rows],
            "stem_channels": self.stem_channels,
            "head_width": self.head_width,
            "input_size": self.input_size,
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_metadata(meta: dict) -> "ModelSpec":
        return ModelSpec(
            rows=tuple(tuple(r) for r in meta["rows"]),
            stem_channels=meta["stem_channels"],
            head_width=meta["head_width"],
            input_size=meta["input_size"],
            num_classes=meta["num_classes"],
        )


@dataclass(frozen=True)
class ConvDef:
    name: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    padding: int
    groups: int
    relu: bool


@dataclass(frozen=True)
class BlockDef:
    """One freeze-accounting stage: stem, a bottleneck, or the head conv."""

    name: str
    convs: tuple[ConvDef, ...]
    residual: bool = False


def build_graph(spec: ModelSpec) -> tuple[BlockDef, ...]:
    """Ordered backbone stages; the classifier head is appended separately."""
    blocks = [
        BlockDef(
            "stem",
            (ConvDef("stem.conv", 3, spec.stem_channels, 3, 2, 1, 1, True),),
        )
    ]
    in_ch = spec.stem_channels
    idx = 0
    for t, c, s, n in spec.rows:
        for i in range(n):
            idx += 1
            name = f"block{idx:02d}"
            stride = s if i == 0 else 1
            hidden = in_ch * t
            convs = []
            if t != 1:
                convs.append(ConvDef(f"{name}.expand", in_ch, hidden, 1, 1, 0, 1, True))
            convs.append(
                ConvDef(f"{name}.depthwise", hidden, hidden, 3, stride, 1, hidden, True)
            )
            convs.append(ConvDef(f"{name}.project", hidden, c, 1, 1, 0, 1, False))
            blocks.append(
                BlockDef(name, tuple(convs), residual=(stride == 1 and in_ch == c))
            )
            in_ch = c
    blocks.append(
        BlockDef(
            "head_conv",
            (ConvDef("head_conv.conv", in_ch, spec.head_width, 1, 1, 0, 1, True),),
        )
    )
    return tuple(blocks)


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for block in build_graph(spec):
        for cv in block.convs:
            shapes[f"{cv.name}.weight"] = (
                cv.out_ch,
                cv.in_ch // cv.groups,
                cv.kernel,
                cv.kernel,
            )
            for suffix in ("gamma", "beta", "mean", "var"):
                shapes[f"{cv.name}.bn.{suffix}"] = (cv.out_ch,)
    shapes["classifier.weight"] = (spec.num_classes, spec.head_width)
    shapes["classifier.bias"] = (spec.num_classes,)
    return shapes


@dataclass(frozen=True)
class FreezePolicy:
    """Backbone stages frozen front-to-back; the classifier is always trainable."""

    frozen_block_count: int = 0


@dataclass(frozen=True)
class Prediction:
    items: tuple[tuple[str, float], ...]  # (label, probability), ranked
    latency_ms: float = 0.0

    @property
    def top1(self) -> str:
        return self.items[0][0]


class Model:
    """Immutable loaded model; forward calls are safe to share across threads."""

    def __init__(self, spec: ModelSpec, params: dict[str, np.ndarray], labels=None):
        expected = parameter_shapes(spec)
        if list(params.keys()) != list(expected.keys()):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(
                f"parameter names do not match spec (missing {sorted(missing)[:3]}, "
                f"extra {sorted(extra)[:3]})"
            )
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ValueError(
                    f"parameter '{name}' has shape {tuple(params[name].shape)}, "
                    f"spec requires {shape}"
                )
        if labels is not None and len(labels) != spec.num_classes:
            raise ValueError(
                f"{len(labels)} labels for {spec.num_classes} classes"
            )
        self.spec = spec
        self.params = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in params.items()}
        self.labels = list(labels) if labels is not None else None
        self.graph = build_graph(spec)
        self._folded: list[list[T.Conv2dParams]] | None = None

    # -- parameter accounting -------------------------------------------------

    @property
    def total_blocks(self) -> int:
        return len(self.graph)

    def parameter_count(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def trainable_parameter_count(self, policy: FreezePolicy) -> int:
        k = policy.frozen_block_count
        if not 0 <= k <= self.total_blocks:
            raise ValueError(
                f"frozen_block_count {k} outside [0, {self.total_blocks}]"
            )
        frozen = {b.name for b in self.graph[:k]}
        count = 0
        for name, arr in self.params.items():
            stage = name.split(".", 1)[0]
            if stage not in frozen:
                count += int(arr.size)
        return count

    def backbone_digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.params.items():
            if not name.startswith("classifier."):
                h.update(name.encode())
                h.update(arr.tobytes())
        return h.hexdigest()

    # -- layer assembly -------------------------------------------------------

    def _conv_params(self, cv: ConvDef) -> tuple[T.Conv2dParams, T.BatchNormParams]:
        conv = T.Conv2dParams(
            weights=self.params[f"{cv.name}.weight"],
            bias=None,
            stride=(cv.stride, cv.stride),
            padding=(cv.padding, cv.padding),
            groups=cv.groups,
        )
        bn = T.BatchNormParams(
            gamma=self.params[f"{cv.name}.bn.gamma"],
            beta=self.params[f"{cv.name}.bn.beta"],
            running_mean=self.params[f"{cv.name}.bn.mean"],
            running_var=self.params[f"{cv.name}.bn.var"],
        )
        return conv, bn

    def _folded_layers(self) -> list[list[T.Conv2dParams]]:
        if self._folded is None:
            folded = []
            for block in self.graph:
                folded.append(
                    [T.fold_batchnorm(*self._conv_params(cv)) for cv in block.convs]
                )
            self._folded = folded
        return self._folded

    # -- inference ------------------------------------------------------------

    def _check_batch(self, batch: np.ndarray):
        r = self.spec.input_size
        if batch.ndim != 4 or batch.shape[1] != 3 or batch.shape[2:] != (r, r):
            raise ValueError(
                f"batch shape {batch.shape} does not match required (N, 3, {r}, {r})"
            )

    def features(self, batch: np.ndarray, folded: bool = True) -> np.ndarray:
        """Backbone output after global average pooling: (N, head_width)."""
        self._check_batch(batch)
        x = batch.astype(np.float32, copy=False)
        if folded:
            for block, convs in zip(self.graph, self._folded_layers()):
                y = x
                for cv, p in zip(block.convs, convs):
                    y = T.conv2d(y, p)
                    if cv.relu:
                        y = T.relu6(y)
                x = x + y if block.residual else y
        else:
            for block in self.graph:
                y = x
                for cv in block.convs:
                    conv, bn = self._conv_params(cv)
                    y = T.batchnorm(T.conv2d(y, conv), bn)
                    if cv.relu:
                        y = T.relu6(y)
                x = x + y if block.residual else y
        pooled = T.global_avg_pool(x)
        return pooled.reshape(pooled.shape[0], -1)

    def logits(self, batch: np.ndarray, folded: bool = True) -> np.ndarray:
        feats = self.features(batch, folded=folded)
        return T.fully_connected(
            feats, self.params["classifier.weight"], self.params["classifier.bias"]
        )

    def forward(self, batch: np.ndarray, k: int = 5) -> list[Prediction]:
        """Top-k predictions per image; ties broken toward the lower class index."""
        if not 1 <= k <= self.spec.num_classes:
            raise ValueError(f"k={k} outside [1, {self.spec.num_classes}]")
        start = time.perf_counter()
        probs = T.softmax(self.logits(batch))
        latency = (time.perf_counter() - start) * 1000.0 / max(len(batch), 1)
        labels = self.labels or [str(i) for i in range(self.spec.num_classes)]
        preds = []
        for row in probs:
            order = np.argsort(-row, kind="stable")[:k]
            preds.append(
                Prediction(
                    items=tuple((labels[i], float(row[i])) for i in order),
                    latency_ms=latency,
                )
            )
        return preds


def build_model(spec: ModelSpec, seed: int = 0, labels=None) -> Model:
    """Random-initialized model: He-normal convs, identity batch norm."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(spec).items():
        if name.endswith(".bn.gamma") or name.endswith(".bn.var"):
            params[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bn.beta") or name.endswith(".bn.mean"):
            params[name] = np.zeros(shape, dtype=np.float32)
        elif name == "classifier.bias":
            params[name] = np.zeros(shape, dtype=np.float32)
        elif name == "classifier.weight":
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, shape).astype(np.float32)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = (
                rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            ).astype(np.float32)
    return Model(spec, params, labels=labels)


def replace_head(model: Model, num_classes: int, seed: int = 0, labels=None) -> Model:
    """New model with a fresh classifier; backbone arrays are reused bitwise."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    spec = replace(model.spec, num_classes=num_classes)
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(spec.head_width)
    params = {
        k: v for k, v in model.params.items() if not k.startswith("classifier.")
    }
    params["classifier.weight"] = rng.uniform(
        -bound, bound, (num_classes, spec.head_width)
    ).astype(np.float32)
    params["classifier.bias"] = np.zeros(num_classes, dtype=np.float32)
    return Model(spec, params, labels=labels)


def save_weights(model: Model, path):
    meta = {
        "kind": "model-weights",
        "spec": model.spec.to_metadata(),
        "labels": model.labels,
    }
    return write_container(path, model.params, meta)


def load_weights(path) -> Model:
    arrays, manifest = read_container(path)
    meta = manifest.metadata
    if meta.get("kind") != "model-weights":
        raise ContainerError(f"{path}: not a model-weights container")
    spec = ModelSpec.from_metadata(meta["spec"])
    expected = parameter_shapes(spec)
    for e in manifest.entries:
        if e.name not in expected:
            raise ContainerError(f"{path}: unexpected entry '{e.name}'")
        if e.shape != expected[e.name]:
            raise ContainerError(
                f"{path}: entry '{e.name}' has shape {e.shape}, "
                f"spec requires {expected[e.name]}"
            )
    missing = [n for n in expected if n not in arrays]
    if missing:
        raise ContainerError(f"{path}: missing entry '{missing[0]}'")
    ordered = {name: arrays[name] for name in expected}
    return Model(spec, ordered, labels=meta.get("labels"))


def preprocess(image, spec: ModelSpec | None = None) -> np.ndarray:
    """Decode-agnostic preprocessing: resize, scale, standardize, (1,3,H,W)."""
    spec = spec or ModelSpec()
    if isinstance(image, np.ndarray):
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) RGB array, got shape {image.shape}")
        image = Image.fromarray(image.astype(np.uint8), "RGB")
    img = image.convert("RGB")
    if img.width < 1 or img.height < 1:
        raise ValueError(f"zero-sized image {img.size}")
    r = spec.input_size
    if img.size != (r, r):
        img = img.resize((r, r), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    mean = np.array(IMAGENET_MEAN, dtype=np.float32)
    std = np.array(IMAGENET_STD, dtype=np.float32)
    arr = (arr - mean) / std
    return arr.transpose(2, 0, 1)[None].astype(np.float32)


def resnet50_reference_entries(num_classes: int = 1000) -> list[tuple[str, tuple[int, ...]]]:
    """Name/shape table for a ResNet-50, used only for size comparison.

    Serializes the same categories as our container (conv weights plus four
    batch-norm vectors per normalized conv, and the classifier).
    """
    entries: list[tuple[str, tuple[int, ...]]] = []

    def convbn(name, out_ch, in_ch, k):
        entries.append((f"{name}.weight", (out_ch, in_ch, k, k)))
        for suffix in ("gamma", "beta", "mean", "var"):
            entries.append((f"{name}.bn.{suffix}", (out_ch,)))

    convbn("conv1", 64, 3, 7)
    in_ch = 64
    for stage, (width, repeats) in enumerate(
        ((64, 3), (128, 4), (256, 6), (512, 3)), start=1
    ):
        out_ch = width * 4
        for i in range(repeats):
            name = f"layer{stage}.{i}"
            convbn(f"{name}.conv1", width, in_ch, 1)
            convbn(f"{name}.conv2", width, width, 3)
            convbn(f"{name}.conv3", out_ch, width, 1)
            if i == 0:
                convbn(f"{name}.downsample", out_ch, in_ch, 1)
            in_ch = out_ch
    entries.append(("fc.weight", (num_classes, 2048)))
    entries.append(("fc.bias", (num_classes,)))
    return entries


def resnet50_reference_bytes(num_classes: int = 1000) -> int:
    """Serialized size the reference network would occupy in our container."""
    total = 0
    for _, shape in resnet50_reference_entries(num_classes):
        n = 4
        for extent in shape:
            n *= extent
        total += n
    return total
