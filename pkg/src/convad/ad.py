"""Mask co-propagating forward pass and occlusion baselines.

The masked forward pass runs the network layer by layer, updating the
occlusion mask after every convolution and every dimensionality-
altering layer via a position-attribution map (the fraction of
unmasked source cells feeding each output position), thresholding it,
and zeroing activations at the annotated checkpoints.  Padding cells
never count toward a window's denominator, so a fully unmasked input
keeps every position active at any threshold below one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaskError, ShapeMismatchError
from .graph import ModelGraph, WeightStore, apply_layer
from .kernels import DTYPE, ConvGeometry, Tensor
from .masks import flatten_mask, validate_mask

OCCLUSION_POLICIES = ("min", "max", "avg", "zero")


@dataclass(frozen=True)
class ADConfig:
    """Knobs of the masked forward pass.

    tau is the attribution threshold: positions with unmasked-fraction
    strictly greater than tau stay active.  concat_include_external
    decides whether a concatenated skip branch contributes its own
    unmasked positions to the joined mask.
    """

    tau: float = 0.0
    concat_include_external: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise MaskError(f"tau must be in [0, 1), got {self.tau}")


@dataclass
class ADState:
    """Activation/mask pair recorded after one layer of a masked pass."""

    activation: Tensor
    mask: Tensor


def _window_counts(mask: Tensor, geom: ConvGeometry) -> tuple[Tensor, Tensor]:
    """(unmasked count, valid-cell count) per output window.

    Padding cells are excluded: the valid count only covers window taps
    that land inside the input.
    """
    m = validate_mask(mask)
    out_h, out_w = geom.out_size(m.shape[0], m.shape[1])
    mp = np.pad(m, ((geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))
    valid = np.pad(np.ones_like(m), ((geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))
    h_stop = (out_h - 1) * geom.stride_h + 1
    w_stop = (out_w - 1) * geom.stride_w + 1
    unmasked = np.zeros((out_h, out_w), dtype=DTYPE)
    total = np.zeros((out_h, out_w), dtype=DTYPE)
    for i in range(geom.kernel_h):
        for j in range(geom.kernel_w):
            r = i * geom.dilation_h
            c = j * geom.dilation_w
            unmasked += mp[r:r + h_stop:geom.stride_h, c:c + w_stop:geom.stride_w]
            total += valid[r:r + h_stop:geom.stride_h, c:c + w_stop:geom.stride_w]
    return unmasked, total


def position_attribution_conv(mask: Tensor, geom: ConvGeometry) -> Tensor:
    """Unmasked fraction of each convolution window, in [0, 1].

    Windows that fall entirely into padding (possible only with extreme
    padding) attribute 0.
    """
    unmasked, total = _window_counts(mask, geom)
    return np.divide(unmasked, total, out=np.zeros_like(unmasked),
                     where=total > 0).astype(DTYPE)


def position_attribution_pool(mask: Tensor, window: ConvGeometry) -> Tensor:
    """Identical windowed-mean semantics over the pooling window."""
    return position_attribution_conv(mask, window)


def position_attribution_upsample(mask: Tensor, factor: int) -> Tensor:
    """Each mask cell replicates into a factor x factor block."""
    m = validate_mask(mask)
    return np.repeat(np.repeat(m, factor, axis=0), factor, axis=1).astype(DTYPE)


def position_attribution_concat(mask_a: Tensor, mask_b: Tensor,
                                include_external: bool = True) -> Tensor:
    """Joined spatial mask for a channel concatenation.

    With ``include_external`` the second branch's unmasked positions
    count (elementwise max); without it the branch's influence on the
    mask is suppressed.
    """
    a = validate_mask(mask_a)
    b = validate_mask(mask_b)
    if a.shape != b.shape:
        raise MaskError(f"concat mask dims differ: {a.shape} vs {b.shape}")
    if include_external:
        return np.maximum(a, b).astype(DTYPE)
    return a.copy()


def threshold_mask(phi: Tensor, tau: float) -> Tensor:
    """Binary mask of positions with attribution strictly above tau."""
    phi = np.asarray(phi, dtype=DTYPE)
    if np.any(phi < 0) or np.any(phi > 1):
        raise MaskError("attribution values must lie in [0, 1]")
    return (phi > DTYPE(tau)).astype(DTYPE)


def _apply_mask(z: Tensor, mask: Tensor) -> Tensor:
    if z.ndim == 3:
        return (z * mask[None]).astype(DTYPE)
    return (z * mask).astype(DTYPE)


def ad_forward(graph: ModelGraph, weights: WeightStore, x: Tensor, mask: Tensor,
               cfg: ADConfig = ADConfig(), record: bool = False):
    """Masked forward pass per the activation-deactivation scheme.

    Returns the class scores, plus the full per-layer ADState trace
    when ``record`` is set.  Layers past the final checkpoint (the
    classifier head) run unmasked.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != tuple(graph.input_shape):
        raise ShapeMismatchError(
            f"input shape {x.shape} != model input {tuple(graph.input_shape)}",
            where="ad_forward")
    m = validate_mask(mask, spatial=x.shape[1:])
    activations: list[Tensor] = []
    layer_masks: list[Tensor] = []
    trace: list[ADState] = []
    z = x
    for i, layer in enumerate(graph.layers):
        z_in = z
        z = apply_layer(layer, z, weights, activations)
        if layer.kind == "conv":
            m = threshold_mask(position_attribution_conv(m, layer.geometry), cfg.tau)
        elif layer.kind in ("maxpool", "avgpool"):
            m = threshold_mask(position_attribution_pool(m, layer.geometry), cfg.tau)
        elif layer.kind == "upsample":
            m = threshold_mask(position_attribution_upsample(m, layer.factor), cfg.tau)
        elif layer.kind == "concat":
            m = position_attribution_concat(m, layer_masks[layer.concat_source],
                                            cfg.concat_include_external)
        elif layer.kind == "flatten":
            m = flatten_mask(m, channels=z_in.shape[0])
        if i in graph.checkpoints:
            z = _apply_mask(z, m)
        # Skip branches see the post-checkpoint activation and mask.
        activations.append(z)
        layer_masks.append(m)
        if record:
            trace.append(ADState(activation=z, mask=m))
    if record:
        return z, trace
    return z


def occlusion_forward(graph: ModelGraph, weights: WeightStore, x: Tensor,
                      mask: Tensor, value_policy: str) -> Tensor:
    """Classical baseline: edit masked pixels, then run a plain forward.

    Replacement values are computed per channel of this image (min,
    max, mean) or are literal zero in the normalized input space.
    """
    from .graph import forward

    x = np.asarray(x, dtype=DTYPE)
    if x.shape != tuple(graph.input_shape):
        raise ShapeMismatchError(
            f"input shape {x.shape} != model input {tuple(graph.input_shape)}",
            where="occlusion_forward")
    m = validate_mask(mask, spatial=x.shape[1:])
    if value_policy not in OCCLUSION_POLICIES:
        raise MaskError(f"unknown occlusion policy {value_policy!r}")
    if value_policy == "zero":
        fills = np.zeros(x.shape[0], dtype=DTYPE)
    elif value_policy == "min":
        fills = x.min(axis=(1, 2))
    elif value_policy == "max":
        fills = x.max(axis=(1, 2))
    else:
        fills = x.mean(axis=(1, 2), dtype=np.float32).astype(DTYPE)
    edited = np.where(m[None] > 0, x, fills[:, None, None]).astype(DTYPE)
    return forward(graph, weights, edited)
