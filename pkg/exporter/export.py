#!/usr/bin/env python3
"""Export a torch nn.Sequential checkpoint to the engine's manifest/blob format.

The exporter is deliberately decoupled from the engine package: it
emits the documented wire formats (JSON manifest + "ADW1" weight blob)
and talks to the engine only through its command-line interface, so it
can live alongside any conforming implementation.

Checkpoint layout (torch.save):
  either a bare nn.Sequential, or a dict with keys
    model: nn.Sequential          (required)
    input_shape: [C, H, W]        (else pass --input-shape)
    labels: [str, ...]            (optional)
    preprocessing: {mean, std}    (optional)

Usage: export.py <ckpt> <out-prefix> [--input-shape C,H,W] [--labels a,b]
                 [--self-check N]
"""

from __future__ import annotations

import argparse
import json
import logging
import struct
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

log = logging.getLogger("exporter")

BLOB_MAGIC = b"ADW1"

SUPPORTED_OPS = ("Conv2d", "ReLU", "Tanh", "Sigmoid", "SiLU", "BatchNorm2d",
                 "MaxPool2d", "AvgPool2d", "Upsample", "Flatten", "Linear",
                 "Softmax")


class ExportError(Exception):
    pass


@dataclass
class ExportSpec:
    checkpoint: Path
    out_manifest: Path
    out_blob: Path
    input_shape: tuple[int, int, int] | None = None
    labels: list[str] = field(default_factory=list)


def _pair(v) -> list[int]:
    if isinstance(v, (tuple, list)):
        return [int(v[0]), int(v[1])]
    return [int(v), int(v)]


def load_checkpoint(path: Path):
    obj = torch.load(path, map_location="cpu", weights_only=False)
    meta = {}
    if isinstance(obj, dict):
        meta = {k: obj[k] for k in ("input_shape", "labels", "preprocessing")
                if k in obj}
        obj = obj.get("model")
    if not isinstance(obj, nn.Sequential):
        raise ExportError("checkpoint must contain an nn.Sequential model")
    obj.eval()
    return obj, meta


def _convert_layer(module: nn.Module, index: int, blobs: dict) -> dict:
    """One torch module -> one manifest layer dict (weights into blobs)."""
    name = type(module).__name__
    prefix = f"l{index}"
    if isinstance(module, nn.Conv2d):
        if module.groups != 1:
            raise ExportError(f"layer {index}: grouped conv not supported")
        if module.padding_mode != "zeros":
            raise ExportError(f"layer {index}: padding mode "
                              f"{module.padding_mode!r} not supported")
        w = module.weight.detach().numpy().astype("<f4")   # [out,in,kh,kw]
        b = (module.bias.detach().numpy().astype("<f4") if module.bias is not None
             else np.zeros(module.out_channels, "<f4"))
        blobs[f"{prefix}.w"], blobs[f"{prefix}.b"] = w, b
        return {"kind": "conv",
                "geometry": {"kernel": _pair(module.kernel_size),
                             "stride": _pair(module.stride),
                             "pad": _pair(module.padding),
                             "dilation": _pair(module.dilation),
                             "in_channels": module.in_channels,
                             "out_channels": module.out_channels},
                "params": [f"{prefix}.w", f"{prefix}.b"]}
    if isinstance(module, (nn.ReLU, nn.Tanh, nn.Sigmoid, nn.SiLU)):
        return {"kind": name.lower()}
    if isinstance(module, nn.BatchNorm2d):
        n = module.num_features
        blobs[f"{prefix}.mean"] = module.running_mean.numpy().astype("<f4")
        blobs[f"{prefix}.var"] = module.running_var.numpy().astype("<f4")
        blobs[f"{prefix}.gamma"] = (module.weight.detach().numpy().astype("<f4")
                                    if module.affine else np.ones(n, "<f4"))
        blobs[f"{prefix}.beta"] = (module.bias.detach().numpy().astype("<f4")
                                   if module.affine else np.zeros(n, "<f4"))
        return {"kind": "batchnorm", "eps": module.eps,
                "params": [f"{prefix}.mean", f"{prefix}.var",
                           f"{prefix}.gamma", f"{prefix}.beta"]}
    if isinstance(module, (nn.MaxPool2d, nn.AvgPool2d)):
        if getattr(module, "ceil_mode", False):
            raise ExportError(f"layer {index}: ceil_mode pooling not supported")
        if isinstance(module, nn.AvgPool2d) and not module.count_include_pad:
            raise ExportError(f"layer {index}: count_include_pad=False "
                              "not supported")
        stride = module.stride if module.stride is not None else module.kernel_size
        geom = {"kernel": _pair(module.kernel_size), "stride": _pair(stride),
                "pad": _pair(module.padding)}
        if isinstance(module, nn.MaxPool2d):
            geom["dilation"] = _pair(module.dilation)
        kind = "maxpool" if isinstance(module, nn.MaxPool2d) else "avgpool"
        return {"kind": kind, "geometry": geom}
    if isinstance(module, nn.Upsample):
        if module.mode != "nearest":
            raise ExportError(f"layer {index}: upsample mode {module.mode!r} "
                              "not supported")
        factor = module.scale_factor
        if isinstance(factor, (tuple, list)):
            if factor[0] != factor[1]:
                raise ExportError(f"layer {index}: anisotropic upsample "
                                  "not supported")
            factor = factor[0]
        if factor is None or int(factor) != factor or int(factor) < 2:
            raise ExportError(f"layer {index}: upsample factor must be an "
                              f"integer >= 2, got {factor}")
        return {"kind": "upsample", "factor": int(factor)}
    if isinstance(module, nn.Flatten):
        if module.start_dim not in (0, 1):
            raise ExportError(f"layer {index}: Flatten(start_dim="
                              f"{module.start_dim}) not supported")
        return {"kind": "flatten"}
    if isinstance(module, nn.Linear):
        w = module.weight.detach().numpy().astype("<f4")
        b = (module.bias.detach().numpy().astype("<f4") if module.bias is not None
             else np.zeros(module.out_features, "<f4"))
        blobs[f"{prefix}.w"], blobs[f"{prefix}.b"] = w, b
        return {"kind": "dense", "params": [f"{prefix}.w", f"{prefix}.b"]}
    if isinstance(module, nn.Softmax):
        if module.dim not in (-1, 1):
            raise ExportError(f"layer {index}: Softmax(dim={module.dim}) "
                              "not supported")
        return {"kind": "softmax"}
    raise ExportError(name)    # caller aggregates unsupported-op names


def write_blob(path: Path, blobs: dict[str, np.ndarray]) -> None:
    out = bytearray(BLOB_MAGIC)
    for name, tensor in blobs.items():
        t = np.ascontiguousarray(tensor, dtype="<f4")
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.tobytes()
    path.write_bytes(bytes(out))


def export(spec: ExportSpec) -> None:
    model, meta = load_checkpoint(spec.checkpoint)
    input_shape = spec.input_shape or meta.get("input_shape")
    if input_shape is None:
        raise ExportError("input_shape not in checkpoint; pass --input-shape")
    labels = spec.labels or list(meta.get("labels", []))

    blobs: dict[str, np.ndarray] = {}
    layers = []
    unsupported = []
    for i, module in enumerate(model):
        try:
            layers.append(_convert_layer(module, i, blobs))
        except ExportError as exc:
            unsupported.append(f"layer {i}: {exc}")
    if unsupported:
        raise ExportError("unsupported ops:\n  " + "\n  ".join(unsupported))

    manifest = {"version": 1, "input_shape": list(input_shape),
                "labels": labels, "layers": layers}
    if meta.get("preprocessing"):
        manifest["preprocessing"] = meta["preprocessing"]
    spec.out_manifest.write_text(json.dumps(manifest, indent=2) + "\n")
    write_blob(spec.out_blob, blobs)
    log.info("wrote %s and %s (%d layers, %d blobs)",
             spec.out_manifest, spec.out_blob, len(layers), len(blobs))


def self_check(manifest: Path, blob: Path, checkpoint: Path,
               n_inputs: int = 10, seed: int = 0,
               engine_cmd: list[str] | None = None) -> float:
    """Max deviation between torch and the engine CLI over random PNGs.

    Inputs go through a PNG file so both sides see identical 8-bit
    pixels; the torch side replicates the engine's documented
    image-loading semantics (value/255, manifest preprocessing).
    """
    from PIL import Image

    model, _ = load_checkpoint(checkpoint)
    spec = json.loads(manifest.read_text())
    c, h, w = spec["input_shape"]
    pre = spec.get("preprocessing") or {}
    mean = np.asarray(pre.get("mean", 0.0), np.float32).reshape(-1, 1, 1)
    std = np.asarray(pre.get("std", 1.0), np.float32).reshape(-1, 1, 1)
    cmd = engine_cmd or ["convad"]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(n_inputs):
            pixels = rng.integers(0, 256, (h, w) if c == 1 else (h, w, c),
                                  dtype=np.uint8)
            png = Path(tmp) / f"in{i}.png"
            Image.fromarray(pixels, mode="L" if c == 1 else "RGB").save(png)
            x = pixels.astype(np.float32) / 255.0
            x = x[None] if c == 1 else x.transpose(2, 0, 1)
            x = (x - mean) / std
            with torch.no_grad():
                ref = model(torch.from_numpy(x)[None]).numpy()[0]
            proc = subprocess.run(
                cmd + ["infer", str(manifest), str(blob), str(png), "--json"],
                capture_output=True, text=True)
            if proc.returncode != 0:
                raise ExportError(f"engine CLI failed: {proc.stderr.strip()}")
            got = np.asarray(json.loads(proc.stdout)["scores"], np.float32)
            worst = max(worst, float(np.max(np.abs(got - ref))))
    log.info("self-check over %d inputs: max deviation %.3e", n_inputs, worst)
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("checkpoint", type=Path)
    parser.add_argument("out_prefix", type=Path)
    parser.add_argument("--input-shape", default=None,
                        help="C,H,W when the checkpoint carries no shape")
    parser.add_argument("--labels", default=None, help="comma-separated")
    parser.add_argument("--self-check", type=int, default=0, metavar="N",
                        help="verify against the engine CLI on N random inputs")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")

    shape = (tuple(int(s) for s in args.input_shape.split(","))
             if args.input_shape else None)
    spec = ExportSpec(
        checkpoint=args.checkpoint,
        out_manifest=args.out_prefix.parent / (args.out_prefix.name + ".json"),
        out_blob=args.out_prefix.parent / (args.out_prefix.name + ".adw"),
        input_shape=shape,
        labels=args.labels.split(",") if args.labels else [])
    try:
        export(spec)
        if args.self_check:
            worst = self_check(spec.out_manifest, spec.out_blob,
                               args.checkpoint, args.self_check)
            if worst > 1e-4:
                log.error("self-check FAILED: max deviation %.3e > 1e-4", worst)
                return 1
    except ExportError as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
