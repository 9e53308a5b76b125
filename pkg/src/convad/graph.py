"""CNN layer-graph representation, checkpoint annotation, and model I/O.

Models are sequential layer lists with optional single-source concat
skip edges.  The on-disk form is a JSON manifest plus a little-endian
binary weight blob:

  manifest: {"version": 1, "input_shape": [C,H,W], "labels": [...],
             "layers": [{"kind", "geometry"?, "params"?,
                         "concat_source"?, ...}],
             "preprocessing"?: {"mean": [...], "std": [...]}}
  blob:     magic "ADW1", then repeated records of
            name-length (u32 LE), name (UTF-8), rank (u32),
            dims (u32 each), raw float32 payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, ShapeMismatchError
from . import kernels
from .kernels import DTYPE, ConvGeometry, Tensor

BLOB_MAGIC = b"ADW1"

ACTIVATION_KINDS = ("relu", "tanh", "sigmoid", "silu")
# Dimensionality-altering operations: these get pre/post checkpoints.
DA_KINDS = ("maxpool", "avgpool", "upsample", "concat", "flatten")
LAYER_KINDS = ("conv", *ACTIVATION_KINDS, "batchnorm", *DA_KINDS, "dense", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    geometry: ConvGeometry | None = None
    params: tuple[str, ...] = ()
    concat_source: int | None = None
    factor: int | None = None      # upsample only
    eps: float = 1e-5              # batchnorm only


@dataclass
class ModelGraph:
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    class_labels: list[str]
    preprocessing: dict | None = None
    checkpoints: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.checkpoints = annotate_checkpoints(self)


class WeightStore:
    """Immutable name -> float32 tensor map."""

    def __init__(self, blobs: dict[str, Tensor]):
        self._blobs = {name: np.asarray(t, dtype=DTYPE) for name, t in blobs.items()}

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._blobs[name]
        except KeyError:
            raise ModelFormatError(f"unknown weight blob {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._blobs

    def names(self) -> list[str]:
        return sorted(self._blobs)


def annotate_checkpoints(graph: ModelGraph) -> frozenset[int]:
    """Layer indices after which the running mask is applied.

    A checkpoint sits immediately before every convolution that has a
    predecessor convolution, and immediately before and after every
    dimensionality-altering layer.  Depends only on layer kinds/order,
    so the annotation is idempotent.
    """
    kinds = [layer.kind for layer in graph.layers]
    cps: set[int] = set()
    seen_conv = False
    for i, kind in enumerate(kinds):
        if kind == "conv":
            if seen_conv and i > 0:
                cps.add(i - 1)
            seen_conv = True
        elif kind in DA_KINDS:
            if i > 0:
                cps.add(i - 1)
            cps.add(i)
    return frozenset(cps)


def propagate_shapes(graph: ModelGraph, weights: WeightStore | None = None) -> list[tuple]:
    """Per-layer output shapes; raises on any inconsistency."""
    shapes: list[tuple] = []
    current: tuple = tuple(graph.input_shape)
    for i, layer in enumerate(graph.layers):
        loc = f"layer {i} ({layer.kind})"
        if layer.kind == "conv":
            if len(current) != 3:
                raise ShapeMismatchError(f"conv on non-spatial shape {current}", where=loc)
            g = layer.geometry
            if g.in_channels != current[0]:
                raise ShapeMismatchError(
                    f"in_channels {g.in_channels} != incoming channels {current[0]}",
                    where=loc)
            oh, ow = g.out_size(current[1], current[2])
            current = (g.out_channels, oh, ow)
        elif layer.kind in ACTIVATION_KINDS or layer.kind == "batchnorm":
            pass
        elif layer.kind in ("maxpool", "avgpool"):
            oh, ow = layer.geometry.out_size(current[1], current[2])
            current = (current[0], oh, ow)
        elif layer.kind == "upsample":
            current = (current[0], current[1] * layer.factor, current[2] * layer.factor)
        elif layer.kind == "concat":
            src = layer.concat_source
            if src is None or not (0 <= src < i):
                raise ShapeMismatchError(
                    f"concat_source {src} must reference a strictly earlier layer",
                    where=loc)
            src_shape = shapes[src]
            if len(src_shape) != 3 or src_shape[1:] != current[1:]:
                raise ShapeMismatchError(
                    f"concat spatial dims differ: {src_shape} vs {current}", where=loc)
            current = (current[0] + src_shape[0], current[1], current[2])
        elif layer.kind == "flatten":
            current = (int(np.prod(current)),)
        elif layer.kind == "dense":
            if weights is not None:
                w = weights[layer.params[0]]
                if w.shape[1] != int(np.prod(current)):
                    raise ShapeMismatchError(
                        f"dense weight {w.shape} incompatible with input {current}",
                        where=loc)
                current = (w.shape[0],)
            else:
                current = ("dense",)
        elif layer.kind == "softmax":
            pass
        else:
            raise ModelFormatError(f"unknown layer kind {layer.kind!r}", location=loc)
        shapes.append(current)
    return shapes


def apply_layer(layer: LayerSpec, z: Tensor, weights: WeightStore,
                activations: list[Tensor]) -> Tensor:
    """Run one layer; ``activations`` holds earlier outputs for concat."""
    kind = layer.kind
    if kind == "conv":
        w, b = layer.params
        return kernels.conv2d(z, weights[w], weights[b], layer.geometry)
    if kind in ACTIVATION_KINDS:
        return kernels.elementwise(z, kind)
    if kind == "batchnorm":
        m, v, g, b = (weights[p] for p in layer.params)
        return kernels.batchnorm_infer(z, m, v, g, b, layer.eps)
    if kind in ("maxpool", "avgpool"):
        return kernels.pool2d(z, layer.geometry, kind[:3])
    if kind == "upsample":
        return kernels.upsample_nearest(z, layer.factor)
    if kind == "concat":
        return kernels.concat_channels(z, activations[layer.concat_source])
    if kind == "flatten":
        return np.asarray(z, dtype=DTYPE).reshape(-1)
    if kind == "dense":
        w, b = layer.params
        return kernels.dense(z, weights[w], weights[b])
    if kind == "softmax":
        return kernels.softmax(z)
    raise ModelFormatError(f"unknown layer kind {kind!r}")


def forward(graph: ModelGraph, weights: WeightStore, x: Tensor,
            record: bool = False):
    """Plain inference; returns class scores (and the per-layer log if asked)."""
    x = np.asarray(x, dtype=DTYPE)
    if x.shape != tuple(graph.input_shape):
        raise ShapeMismatchError(
            f"input shape {x.shape} != model input {tuple(graph.input_shape)}",
            where="forward")
    activations: list[Tensor] = []
    z = x
    for layer in graph.layers:
        z = apply_layer(layer, z, weights, activations)
        activations.append(z)
    if record:
        return z, activations
    return z


# ---------------------------------------------------------------------------
# serialization

def _geometry_from_dict(d: dict, loc: str) -> ConvGeometry:
    def pair(key, default):
        v = d.get(key, default)
        if isinstance(v, (list, tuple)):
            return int(v[0]), int(v[1])
        return int(v), int(v)

    try:
        kh, kw = pair("kernel", None)
    except TypeError:
        raise ModelFormatError("geometry missing 'kernel'", location=loc) from None
    sh, sw = pair("stride", 1)
    ph, pw = pair("pad", 0)
    dh, dw = pair("dilation", 1)
    return ConvGeometry(kh, kw, sh, sw, ph, pw, dh, dw,
                        in_channels=int(d.get("in_channels", 1)),
                        out_channels=int(d.get("out_channels", 1)))


def _geometry_to_dict(g: ConvGeometry) -> dict:
    return {
        "kernel": [g.kernel_h, g.kernel_w],
        "stride": [g.stride_h, g.stride_w],
        "pad": [g.pad_h, g.pad_w],
        "dilation": [g.dilation_h, g.dilation_w],
        "in_channels": g.in_channels,
        "out_channels": g.out_channels,
    }


_PARAM_COUNTS = {"conv": 2, "batchnorm": 4, "dense": 2}


def _layer_from_dict(d: dict, index: int) -> LayerSpec:
    loc = f"layers[{index}]"
    kind = d.get("kind")
    if kind not in LAYER_KINDS:
        raise ModelFormatError(f"unknown layer kind {kind!r}", location=loc)
    geometry = None
    if kind in ("conv", "maxpool", "avgpool"):
        if "geometry" not in d:
            raise ModelFormatError(f"{kind} layer requires geometry", location=loc)
        geometry = _geometry_from_dict(d["geometry"], loc)
    params = tuple(d.get("params", ()))
    expected = _PARAM_COUNTS.get(kind, 0)
    if len(params) != expected:
        raise ModelFormatError(
            f"{kind} layer expects {expected} param refs, got {len(params)}", location=loc)
    factor = None
    if kind == "upsample":
        factor = int(d.get("factor", 0))
        if factor < 2:
            raise ModelFormatError(f"upsample factor must be >= 2, got {factor}",
                                   location=loc)
    concat_source = d.get("concat_source")
    if kind == "concat":
        if concat_source is None:
            raise ModelFormatError("concat layer requires concat_source", location=loc)
        concat_source = int(concat_source)
    return LayerSpec(kind=kind, geometry=geometry, params=params,
                     concat_source=concat_source, factor=factor,
                     eps=float(d.get("eps", 1e-5)))


def _layer_to_dict(layer: LayerSpec) -> dict:
    d: dict = {"kind": layer.kind}
    if layer.geometry is not None:
        d["geometry"] = _geometry_to_dict(layer.geometry)
    if layer.params:
        d["params"] = list(layer.params)
    if layer.concat_source is not None:
        d["concat_source"] = layer.concat_source
    if layer.factor is not None:
        d["factor"] = layer.factor
    if layer.kind == "batchnorm":
        d["eps"] = layer.eps
    return d


def read_blob(path: str | Path) -> dict[str, Tensor]:
    data = Path(path).read_bytes()
    if data[:4] != BLOB_MAGIC:
        raise ModelFormatError(f"bad magic {data[:4]!r}, expected {BLOB_MAGIC!r}",
                               location=str(path))
    blobs: dict[str, Tensor] = {}
    pos = 4
    while pos < len(data):
        try:
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise ModelFormatError(f"corrupt record at byte {pos}: {exc}",
                                   location=str(path)) from exc
        if len(payload) != count:
            raise ModelFormatError(f"blob {name!r} truncated", location=str(path))
        if name in blobs:
            raise ModelFormatError(f"duplicate blob name {name!r}", location=str(path))
        blobs[name] = payload.reshape(dims).astype(DTYPE)
    return blobs


def write_blob(path: str | Path, blobs: dict[str, Tensor]) -> None:
    out = bytearray(BLOB_MAGIC)
    for name, tensor in blobs.items():
        t = np.asarray(tensor, dtype=DTYPE)
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_model(manifest_path: str | Path,
               blob_path: str | Path) -> tuple[ModelGraph, WeightStore]:
    """Load and fully validate a model; checkpoints come pre-annotated."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read manifest: {exc}",
                               location=str(manifest_path)) from exc
    if manifest.get("version") != 1:
        raise ModelFormatError(f"unsupported manifest version {manifest.get('version')!r}",
                               location=str(manifest_path))
    shape = manifest.get("input_shape")
    if not (isinstance(shape, list) and len(shape) == 3 and all(s >= 1 for s in shape)):
        raise ModelFormatError(f"input_shape must be [C,H,W] >= 1, got {shape!r}",
                               location=str(manifest_path))
    layers = [_layer_from_dict(d, i) for i, d in enumerate(manifest.get("layers", []))]
    if not layers:
        raise ModelFormatError("manifest declares no layers", location=str(manifest_path))
    graph = ModelGraph(layers=layers, input_shape=tuple(shape),
                       class_labels=list(manifest.get("labels", [])),
                       preprocessing=manifest.get("preprocessing"))
    blobs = read_blob(blob_path)
    for i, layer in enumerate(layers):
        for ref in layer.params:
            if ref not in blobs:
                raise ModelFormatError(
                    f"dangling blob reference {ref!r}", location=f"layers[{i}]")
    for name, tensor in blobs.items():
        if not np.isfinite(tensor).all():
            raise ModelFormatError(f"non-finite weights in blob {name!r}",
                                   location=str(blob_path))
    weights = WeightStore(blobs)
    propagate_shapes(graph, weights)
    return graph, weights


def save_model(graph: ModelGraph, weights: WeightStore,
               manifest_path: str | Path, blob_path: str | Path) -> None:
    manifest = {
        "version": 1,
        "input_shape": list(graph.input_shape),
        "labels": list(graph.class_labels),
        "layers": [_layer_to_dict(layer) for layer in graph.layers],
    }
    if graph.preprocessing:
        manifest["preprocessing"] = graph.preprocessing
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    write_blob(blob_path, {name: weights[name] for name in weights.names()})
