"""Synthetic models and datasets used by the test and verification suites.

All builders are deterministic for a given seed.  The "bright square"
classifier is transparent by construction: class 1 fires exactly when
the top-left quadrant carries enough brightness, so the decisive
region is known ground truth for explainer tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ad import ADConfig, ad_forward
from .graph import ModelGraph, WeightStore, forward, save_model
from .images import save_image
from .kernels import DTYPE, ConvGeometry, Tensor
from .masks import full_mask

ARCHITECTURES = ("conv_only", "conv_pool", "conv_upsample", "conv_concat",
                 "conv_flatten_dense")


def _rng_tensor(rng, shape, scale=0.5):
    return (rng.standard_normal(shape) * scale).astype(DTYPE)


def _conv(name, c_in, c_out, k, pad=0, stride=1):
    geom = ConvGeometry(k, k, stride, stride, pad, pad,
                        in_channels=c_in, out_channels=c_out)
    return dict(kind="conv", geometry=geom, params=(f"{name}.w", f"{name}.b"))


def _head(blobs, rng, in_features, n_classes=3):
    blobs["head.w"] = _rng_tensor(rng, (n_classes, in_features), scale=0.3)
    blobs["head.b"] = _rng_tensor(rng, (n_classes,), scale=0.1)
    return [dict(kind="flatten"),
            dict(kind="dense", params=("head.w", "head.b")),
            dict(kind="softmax")]


def make_model(kind: str, seed: int = 0,
               input_shape: tuple[int, int, int] = (3, 12, 12)
               ) -> tuple[ModelGraph, WeightStore]:
    """Small randomly weighted model of one of the covered architectures."""
    from .graph import LayerSpec

    if kind not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {kind!r}; choose from {ARCHITECTURES}")
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    blobs: dict[str, Tensor] = {}
    specs: list[dict] = []

    def add_conv(name, c_in, c_out, k, pad=0, stride=1):
        spec = _conv(name, c_in, c_out, k, pad, stride)
        blobs[f"{name}.w"] = _rng_tensor(rng, (c_out, c_in, k, k))
        blobs[f"{name}.b"] = _rng_tensor(rng, (c_out,), scale=0.1)
        specs.append(spec)
        return c_out

    if kind == "conv_only":
        cc = add_conv("c0", c, 4, 3, pad=1)
        specs.append(dict(kind="relu"))
        cc = add_conv("c1", cc, 4, 3, pad=1)
        specs.append(dict(kind="tanh"))
        cc = add_conv("c2", cc, 2, 1)
        flat = cc * h * w
    elif kind == "conv_pool":
        cc = add_conv("c0", c, 4, 3, pad=1)
        specs.append(dict(kind="relu"))
        specs.append(dict(kind="maxpool",
                          geometry=ConvGeometry(2, 2, 2, 2)))
        cc = add_conv("c1", cc, 4, 3, pad=1)
        specs.append(dict(kind="silu"))
        specs.append(dict(kind="avgpool",
                          geometry=ConvGeometry(2, 2, 2, 2)))
        flat = cc * (h // 4) * (w // 4)
    elif kind == "conv_upsample":
        cc = add_conv("c0", c, 4, 3, pad=1)
        specs.append(dict(kind="relu"))
        specs.append(dict(kind="maxpool", geometry=ConvGeometry(2, 2, 2, 2)))
        cc = add_conv("c1", cc, 3, 3, pad=1)
        specs.append(dict(kind="upsample", factor=2))
        specs.append(dict(kind="sigmoid"))
        cc = add_conv("c2", cc, 2, 3, pad=1)
        flat = cc * h * w
    elif kind == "conv_concat":
        cc = add_conv("c0", c, 4, 3, pad=1)            # 0
        specs.append(dict(kind="relu"))                # 1  <- skip source
        cc = add_conv("c1", cc, 4, 3, pad=1)           # 2
        specs.append(dict(kind="tanh"))                # 3
        specs.append(dict(kind="concat", concat_source=1))  # 4
        cc = add_conv("c2", 8, 3, 3, pad=1)            # 5
        flat = 3 * h * w
    else:  # conv_flatten_dense
        cc = add_conv("c0", c, 4, 3, pad=1)
        blobs["bn.mean"] = _rng_tensor(rng, (cc,), scale=0.1)
        blobs["bn.var"] = np.abs(_rng_tensor(rng, (cc,), scale=0.5)) + DTYPE(0.5)
        blobs["bn.gamma"] = _rng_tensor(rng, (cc,), scale=0.5) + DTYPE(1.0)
        blobs["bn.beta"] = _rng_tensor(rng, (cc,), scale=0.1)
        specs.append(dict(kind="batchnorm",
                          params=("bn.mean", "bn.var", "bn.gamma", "bn.beta")))
        specs.append(dict(kind="relu"))
        cc = add_conv("c1", cc, 3, 3, pad=1)
        flat = cc * h * w

    specs.extend(_head(blobs, rng, flat))
    layers = [LayerSpec(kind=s["kind"], geometry=s.get("geometry"),
                        params=tuple(s.get("params", ())),
                        concat_source=s.get("concat_source"),
                        factor=s.get("factor")) for s in specs]
    graph = ModelGraph(layers=layers, input_shape=input_shape,
                       class_labels=[f"class{i}" for i in range(3)])
    return graph, WeightStore(blobs)


def make_bright_square_model(size: int = 16) -> tuple[ModelGraph, WeightStore]:
    """Transparent 2-class model: class 1 iff the top-left quadrant is bright.

    A smoothing convolution feeds a dense head whose class-1 weights
    cover only the top-left size/2 x size/2 block, against a fixed
    class-0 bias.  The decisive region is exactly that block.
    """
    from .graph import LayerSpec

    q = size // 2
    smooth = np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=DTYPE)
    w_head = np.zeros((2, size * size), dtype=DTYPE)
    sel = np.zeros((size, size), dtype=DTYPE)
    sel[:q, :q] = 1.0
    w_head[1] = sel.reshape(-1) * DTYPE(8.0 / (q * q))
    # Class-0 bias sits close under the full-brightness logit, so a class-1
    # call needs most of the quadrant visible and losing the explanation
    # flips the class.
    b_head = np.array([5.0, 0.0], dtype=DTYPE)
    layers = [
        LayerSpec(kind="conv",
                  geometry=ConvGeometry(3, 3, pad_h=1, pad_w=1,
                                        in_channels=1, out_channels=1),
                  params=("smooth.w", "smooth.b")),
        LayerSpec(kind="relu"),
        LayerSpec(kind="flatten"),
        LayerSpec(kind="dense", params=("head.w", "head.b")),
        LayerSpec(kind="softmax"),
    ]
    graph = ModelGraph(layers=layers, input_shape=(1, size, size),
                       class_labels=["dark", "bright_square"])
    weights = WeightStore({
        "smooth.w": smooth,
        "smooth.b": np.zeros(1, dtype=DTYPE),
        "head.w": w_head,
        "head.b": b_head,
    })
    return graph, weights


def bright_square_image(size: int = 16, bright: float = 1.0, dark: float = 0.05,
                        noise_seed: int | None = None) -> Tensor:
    """Image whose top-left quadrant is bright, matching the detector."""
    q = size // 2
    img = np.full((1, size, size), dark, dtype=DTYPE)
    img[0, :q, :q] = bright
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        img = np.clip(img + rng.normal(0, 0.02, img.shape).astype(DTYPE), 0, 1)
    return img.astype(DTYPE)


def make_dataset(directory: str | Path, count: int = 20, size: int = 16,
                 seed: int = 0) -> list[Path]:
    """Bright-square images with per-image noise; writes PNGs plus labels.json."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    labels = {}
    for i in range(count):
        img = bright_square_image(size=size, bright=0.85 + 0.15 * (i % 3) / 2,
                                  dark=0.02 + 0.01 * (i % 4),
                                  noise_seed=seed * 1000 + i)
        path = directory / f"img{i:03d}.png"
        save_image(path, img)
        labels[path.name] = "bright_square"
        paths.append(path)
    (directory / "labels.json").write_text(json.dumps(labels, indent=2))
    return paths


def make_background_pool(directory: str | Path, count: int = 120, size: int = 16,
                         seed: int = 7) -> list[Path]:
    """Textured non-target images for the IID background set."""
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    labels = {}
    for i in range(count):
        img = rng.uniform(0.0, 0.35, (1, size, size)).astype(DTYPE)
        path = directory / f"bg{i:03d}.png"
        save_image(path, img)
        labels[path.name] = "dark"
        paths.append(path)
    (directory / "labels.json").write_text(json.dumps(labels, indent=2))
    return paths


@dataclass
class EquivalenceResult:
    passed: bool
    max_deviation: float
    trials: int
    taus: tuple[float, ...]
    first_failure: str = ""


def verify_equivalence(graph: ModelGraph, weights: WeightStore, trials: int = 100,
                       taus: tuple[float, ...] = (0.0, 0.25, 0.49), seed: int = 0,
                       tolerance: float = 1e-5,
                       checkpoints_override: frozenset[int] | None = None
                       ) -> EquivalenceResult:
    """Masked pass with an all-ones mask must match the plain forward.

    ``checkpoints_override`` exists for negative-control tests: it
    substitutes a corrupted checkpoint table before running.
    """
    rng = np.random.default_rng(seed)
    c, h, w = graph.input_shape
    if checkpoints_override is not None:
        graph = ModelGraph(layers=graph.layers, input_shape=graph.input_shape,
                           class_labels=graph.class_labels,
                           preprocessing=graph.preprocessing)
        graph.checkpoints = frozenset(checkpoints_override)
    ones = full_mask(h, w)
    worst = 0.0
    first_failure = ""
    structural_failure = False
    for t in range(trials):
        x = rng.random((c, h, w)).astype(DTYPE)
        ref = forward(graph, weights, x)
        for tau in taus:
            try:
                out = ad_forward(graph, weights, x, ones, ADConfig(tau=tau))
                dev = float(np.max(np.abs(out - ref)))
            except Exception as exc:  # bogus checkpoint -> mask/activation mismatch
                structural_failure = True
                if not first_failure:
                    first_failure = f"trial {t}, tau {tau}: {exc}"
                continue
            if dev > worst:
                worst = dev
            if dev > tolerance and not first_failure:
                first_failure = f"trial {t}, tau {tau}: max deviation {dev:.3e}"
    return EquivalenceResult(passed=worst <= tolerance and not structural_failure,
                             max_deviation=worst,
                             trials=trials, taus=tuple(taus),
                             first_failure=first_failure)


def export_model(kind: str, prefix: str | Path, seed: int = 0,
                 input_shape=(3, 12, 12)) -> tuple[Path, Path]:
    """Write a zoo model to the manifest/blob wire format."""
    if kind == "bright_square":
        graph, weights = make_bright_square_model(input_shape[1])
    else:
        graph, weights = make_model(kind, seed=seed, input_shape=input_shape)
    prefix = Path(prefix)
    manifest = prefix.with_suffix(".json")
    blob = prefix.with_suffix(".adw")
    save_model(graph, weights, manifest, blob)
    return manifest, blob
