"""Dense-tensor ops for MobileNet-v2 style inference.

All arrays are float32 and laid out (N, C, H, W) row-major. Every op is a
pure function; shape errors raise ValueError naming the offending shapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray  # (N, C, H, W), float32


@dataclass(frozen=True)
class Conv2dParams:
    """Convolution weights plus geometry.

    weights: (Cout, Cin // groups, Kh, Kw); bias: (Cout,) or None.
    groups == Cin == Cout expresses a depthwise convolution.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ValueError(f"conv weights must be 4-D, got shape {self.weights.shape}")
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding[0] < 0 or self.padding[1] < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        cout = self.weights.shape[0]
        if self.groups < 1 or cout % self.groups != 0:
            raise ValueError(f"groups={self.groups} does not divide Cout={cout}")
        if self.bias is not None and self.bias.shape != (cout,):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match Cout={cout}"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(frozen=True)
class BatchNormParams:
    """Inference-mode batch normalization parameters, all length C."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            v = getattr(self, name)
            if v.shape != (c,):
                raise ValueError(f"{name} shape {v.shape} != gamma shape {(c,)}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if np.any(self.running_var < 0):
            raise ValueError("running_var entries must be >= 0")


def conv_output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _check_conv_input(x: Tensor, p: Conv2dParams) -> tuple[int, int]:
    if x.ndim != 4:
        raise ValueError(f"input must be 4-D (N,C,H,W), got shape {x.shape}")
    if x.shape[1] != p.in_channels:
        raise ValueError(
            f"input channels {x.shape[1]} do not match conv expecting "
            f"{p.in_channels} (weights {p.weights.shape}, groups={p.groups})"
        )
    if x.shape[1] % p.groups != 0:
        raise ValueError(f"groups={p.groups} does not divide Cin={x.shape[1]}")
    kh, kw = p.kernel_size
    ho = conv_output_extent(x.shape[2], kh, p.stride[0], p.padding[0])
    wo = conv_output_extent(x.shape[3], kw, p.stride[1], p.padding[1])
    if ho < 0 or wo < 0:
        raise ValueError(
            f"kernel {p.kernel_size} with stride {p.stride}, padding {p.padding} "
            f"does not fit input spatial extents {x.shape[2:]}"
        )
    return ho, wo


def _windows(x: Tensor, kh: int, kw: int, stride, padding) -> np.ndarray:
    """Sliding patches of shape (N, C, Ho, Wo, Kh, Kw) over a zero-padded input."""
    ph, pw = padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    w = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return w[:, :, :: stride[0], :: stride[1]]


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Cross-correlation with zero padding; returns (N, Cout, Ho, Wo)."""
    ho, wo = _check_conv_input(x, p)
    n = x.shape[0]
    cout = p.out_channels
    kh, kw = p.kernel_size
    win = _windows(x, kh, kw, p.stride, p.padding)
    if p.groups == 1:
        # (N, Ho, Wo, C*Kh*Kw) @ (C*Kh*Kw, Cout) via BLAS
        ckk = p.in_channels * kh * kw
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, ckk)
        wm = p.weights.reshape(cout, ckk)
        out = (cols @ wm.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    elif p.groups == p.in_channels == cout:
        out = np.einsum("nchwkl,ckl->nchw", win, p.weights[:, 0], optimize=True)
    else:
        cg_in = p.in_channels // p.groups
        cg_out = cout // p.groups
        out = np.empty((n, cout, ho, wo), dtype=np.float32)
        for g in range(p.groups):
            ckk = cg_in * kh * kw
            cols = (
                win[:, g * cg_in : (g + 1) * cg_in]
                .transpose(0, 2, 3, 1, 4, 5)
                .reshape(n * ho * wo, ckk)
            )
            wm = p.weights[g * cg_out : (g + 1) * cg_out].reshape(cg_out, ckk)
            out[:, g * cg_out : (g + 1) * cg_out] = (
                (cols @ wm.T).reshape(n, ho, wo, cg_out).transpose(0, 3, 1, 2)
            )
    out = np.ascontiguousarray(out, dtype=np.float32)
    if p.bias is not None:
        out += p.bias.astype(np.float32)[None, :, None, None]
    return out


def depthwise_conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Each channel convolved independently; requires groups == Cin == Cout."""
    cout = p.out_channels
    if not (p.groups == cout == x.shape[1] and p.weights.shape[1] == 1):
        raise ValueError(
            f"depthwise requires groups == Cin == Cout, got groups={p.groups}, "
            f"Cin={x.shape[1]}, weights {p.weights.shape}"
        )
    return conv2d(x, p)


def batchnorm(x: Tensor, bn: BatchNormParams) -> Tensor:
    """Inference-mode normalization over the channel axis."""
    if x.shape[1] != bn.gamma.shape[0]:
        raise ValueError(
            f"input channels {x.shape[1]} != batchnorm length {bn.gamma.shape[0]}"
        )
    scale = bn.gamma / np.sqrt(bn.running_var + bn.epsilon)
    shift = bn.beta - bn.running_mean * scale
    return (
        x * scale.astype(np.float32)[None, :, None, None]
        + shift.astype(np.float32)[None, :, None, None]
    )


def fold_batchnorm(conv: Conv2dParams, bn: BatchNormParams) -> Conv2dParams:
    """Absorb inference-mode batchnorm into the preceding convolution.

    conv2d(x, folded) == batchnorm(conv2d(x, conv)) for all x.
    """
    cout = conv.out_channels
    if bn.gamma.shape[0] != cout:
        raise ValueError(
            f"batchnorm length {bn.gamma.shape[0]} does not match Cout={cout}"
        )
    scale = (bn.gamma / np.sqrt(bn.running_var + bn.epsilon)).astype(np.float32)
    weights = conv.weights * scale[:, None, None, None]
    bias = conv.bias if conv.bias is not None else np.zeros(cout, dtype=np.float32)
    bias = (bias - bn.running_mean) * scale + bn.beta
    return Conv2dParams(
        weights=weights.astype(np.float32),
        bias=bias.astype(np.float32),
        stride=conv.stride,
        padding=conv.padding,
        groups=conv.groups,
    )


def relu6(x: Tensor) -> Tensor:
    return np.clip(x, 0.0, 6.0)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W; output (N, C, 1, 1)."""
    if x.ndim != 4:
        raise ValueError(f"input must be 4-D, got shape {x.shape}")
    if x.shape[2] * x.shape[3] == 0:
        raise ValueError(f"cannot pool over empty spatial extent, shape {x.shape}")
    return x.mean(axis=(2, 3), keepdims=True).astype(np.float32)


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x (N, Din) times weights (Dout, Din) transposed, plus bias (Dout,)."""
    if x.ndim != 2 or weights.ndim != 2:
        raise ValueError(
            f"expected 2-D input and weights, got {x.shape} and {weights.shape}"
        )
    if x.shape[1] != weights.shape[1]:
        raise ValueError(
            f"inner dimensions disagree: input {x.shape} vs weights {weights.shape}"
        )
    if bias.shape != (weights.shape[0],):
        raise ValueError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
    return (x @ weights.T + bias).astype(np.float32)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Exp-normalize with max subtraction; works on a vector or on rows of a matrix."""
    logits = np.asarray(logits)
    if logits.size == 0 and logits.ndim == 1:
        raise ValueError("softmax of an empty vector")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)
