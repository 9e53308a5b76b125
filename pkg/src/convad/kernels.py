"""Dense float32 numeric kernels every layer is built from.

Tensors are plain ``numpy.ndarray`` objects in float32, laid out
row-major.  Spatial tensors use (C, H, W); classifier-head tensors are
flat.  All kernels are pure functions with a fixed accumulation order,
so identical inputs give bit-identical outputs across runs.

Convolution is cross-correlation (no kernel flip), matching mainstream
inference semantics so exported weights are a direct copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ShapeMismatchError

Tensor = np.ndarray

DTYPE = np.float32


def as_tensor(data, shape=None) -> Tensor:
    arr = np.asarray(data, dtype=DTYPE)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


@dataclass(frozen=True)
class ConvGeometry:
    """Window geometry shared by convolution and pooling."""

    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    dilation_h: int = 1
    dilation_w: int = 1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise GeometryError(f"kernel must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride_h < 1 or self.stride_w < 1:
            raise GeometryError(f"stride must be >= 1, got {self.stride_h}x{self.stride_w}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise GeometryError(f"padding must be >= 0, got {self.pad_h}x{self.pad_w}")
        if self.dilation_h < 1 or self.dilation_w < 1:
            raise GeometryError(
                f"dilation must be >= 1, got {self.dilation_h}x{self.dilation_w}")

    def out_size(self, in_h: int, in_w: int) -> tuple[int, int]:
        """Output spatial size; raises if the window does not fit."""
        eff_h = self.dilation_h * (self.kernel_h - 1) + 1
        eff_w = self.dilation_w * (self.kernel_w - 1) + 1
        out_h = (in_h + 2 * self.pad_h - eff_h) // self.stride_h + 1
        out_w = (in_w + 2 * self.pad_w - eff_w) // self.stride_w + 1
        if out_h < 1 or out_w < 1:
            raise GeometryError(
                f"window {self.kernel_h}x{self.kernel_w} (dilation "
                f"{self.dilation_h}x{self.dilation_w}, pad {self.pad_h}x{self.pad_w}) "
                f"does not fit input {in_h}x{in_w}")
        return out_h, out_w


def _check_3d(x: Tensor, where: str) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeMismatchError(f"expected (C,H,W) tensor, got shape {x.shape}", where=where)
    return x


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, geom: ConvGeometry) -> Tensor:
    """Cross-correlate ``x`` (C,H,W) with ``weights`` (C',C,kh,kw) plus bias."""
    x = _check_3d(x, "conv2d input")
    w = as_tensor(weights)
    b = as_tensor(bias)
    if w.ndim != 4:
        raise ShapeMismatchError(f"weights must be 4-d, got shape {w.shape}", where="conv2d")
    c_out, c_in, kh, kw = w.shape
    if (kh, kw) != (geom.kernel_h, geom.kernel_w):
        raise ShapeMismatchError(
            f"kernel dims {kh}x{kw} != geometry {geom.kernel_h}x{geom.kernel_w}",
            where="conv2d weights")
    if c_in != x.shape[0]:
        raise ShapeMismatchError(
            f"weight in_channels {c_in} != input channels {x.shape[0]}", where="conv2d")
    if b.shape != (c_out,):
        raise ShapeMismatchError(
            f"bias shape {b.shape} != ({c_out},)", where="conv2d bias")

    out_h, out_w = geom.out_size(x.shape[1], x.shape[2])
    xp = np.pad(x, ((0, 0), (geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))
    out = np.zeros((c_out, out_h, out_w), dtype=DTYPE)
    h_stop = (out_h - 1) * geom.stride_h + 1
    w_stop = (out_w - 1) * geom.stride_w + 1
    # Fixed iteration order: row-major over the window, channels inside tensordot.
    for i in range(kh):
        for j in range(kw):
            r = i * geom.dilation_h
            c = j * geom.dilation_w
            patch = xp[:, r:r + h_stop:geom.stride_h, c:c + w_stop:geom.stride_w]
            out += np.tensordot(w[:, :, i, j], patch, axes=1).astype(DTYPE)
    out += b[:, None, None]
    return out.astype(DTYPE)


def pool2d(x: Tensor, window: ConvGeometry, mode: str) -> Tensor:
    """Per-channel windowed max or mean.

    Average pooling counts padded cells in the denominator (the usual
    inference-framework default); max pooling pads with -inf.
    """
    x = _check_3d(x, "pool2d input")
    if mode not in ("max", "avg"):
        raise GeometryError(f"unknown pool mode {mode!r}")
    out_h, out_w = window.out_size(x.shape[1], x.shape[2])
    fill = -np.inf if mode == "max" else 0.0
    xp = np.pad(x, ((0, 0), (window.pad_h, window.pad_h), (window.pad_w, window.pad_w)),
                constant_values=fill)
    h_stop = (out_h - 1) * window.stride_h + 1
    w_stop = (out_w - 1) * window.stride_w + 1
    patches = []
    for i in range(window.kernel_h):
        for j in range(window.kernel_w):
            r = i * window.dilation_h
            c = j * window.dilation_w
            patches.append(xp[:, r:r + h_stop:window.stride_h, c:c + w_stop:window.stride_w])
    stack = np.stack(patches)
    if mode == "max":
        return stack.max(axis=0).astype(DTYPE)
    return (stack.sum(axis=0, dtype=DTYPE) / DTYPE(len(patches))).astype(DTYPE)


_ELEMENTWISE = {
    "relu": lambda x: np.maximum(x, DTYPE(0.0)),
    "tanh": np.tanh,
    "sigmoid": lambda x: DTYPE(1.0) / (DTYPE(1.0) + np.exp(-x)),
    "silu": lambda x: x / (DTYPE(1.0) + np.exp(-x)),
}


def elementwise(x: Tensor, fn: str) -> Tensor:
    if fn not in _ELEMENTWISE:
        raise GeometryError(f"unknown activation {fn!r}")
    return _ELEMENTWISE[fn](as_tensor(x)).astype(DTYPE)


def batchnorm_infer(x: Tensor, mean: Tensor, var: Tensor, gamma: Tensor, beta: Tensor,
                    eps: float = 1e-5) -> Tensor:
    """Per-channel (x - mean)/sqrt(var + eps) * gamma + beta."""
    x = _check_3d(x, "batchnorm input")
    c = x.shape[0]
    params = {"mean": as_tensor(mean), "var": as_tensor(var),
              "gamma": as_tensor(gamma), "beta": as_tensor(beta)}
    for name, p in params.items():
        if p.shape != (c,):
            raise ShapeMismatchError(
                f"{name} shape {p.shape} != ({c},)", where="batchnorm")
    if np.any(params["var"] < 0):
        raise ShapeMismatchError("variance must be non-negative", where="batchnorm")
    scale = (params["gamma"] / np.sqrt(params["var"] + DTYPE(eps))).astype(DTYPE)
    shift = (params["beta"] - params["mean"] * scale).astype(DTYPE)
    return (x * scale[:, None, None] + shift[:, None, None]).astype(DTYPE)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each source pixel into a factor x factor block."""
    x = _check_3d(x, "upsample input")
    if factor < 2:
        raise GeometryError(f"upsample factor must be >= 2, got {factor}")
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2).astype(DTYPE)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack along channels, ``a`` first; spatial dims must agree."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeMismatchError(
            f"expected (C,H,W) tensors, got {a.shape} and {b.shape}", where="concat")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatchError(
            f"spatial dims differ: {a.shape[1:]} vs {b.shape[1:]}", where="concat")
    return np.concatenate([a, b], axis=0).astype(DTYPE)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """W @ x + b on a flat vector."""
    x = as_tensor(x).reshape(-1)
    w = as_tensor(weights)
    b = as_tensor(bias)
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeMismatchError(
            f"weights {w.shape} incompatible with input length {x.shape[0]}", where="dense")
    if b.shape != (w.shape[0],):
        raise ShapeMismatchError(f"bias shape {b.shape} != ({w.shape[0]},)", where="dense")
    return (w @ x + b).astype(DTYPE)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over a flat vector."""
    x = as_tensor(x).reshape(-1)
    if x.size < 1:
        raise ShapeMismatchError("softmax needs at least one logit", where="softmax")
    shifted = x - x.max()
    e = np.exp(shifted)
    return (e / e.sum(dtype=DTYPE)).astype(DTYPE)
