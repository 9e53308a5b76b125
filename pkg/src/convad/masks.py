"""Binary occlusion masks and their on-disk formats.

A mask is a single-channel float32 array with values in {0, 1}:
1 = unmasked (keep), 0 = masked (occluded).  Spatial masks are (H, W)
and shared across channels; after flattening the mask becomes a flat
0/1 vector aligned with the flattened activation.

Two interchange formats are supported:
  * 8-bit single-channel PGM (binary P5 or ASCII P2); values >= 128
    decode to 1.
  * run-length JSON: {"height": H, "width": W, "runs": [[value, count],
    ...]} covering H*W cells row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import MaskError
from .kernels import DTYPE, Tensor


def validate_mask(mask: Tensor, spatial: tuple[int, int] | None = None) -> Tensor:
    m = np.asarray(mask, dtype=DTYPE)
    if m.ndim != 2:
        raise MaskError(f"mask must be 2-d (H,W), got shape {m.shape}")
    if not np.isin(m, (0.0, 1.0)).all():
        raise MaskError("mask values must all be 0 or 1")
    if spatial is not None and m.shape != tuple(spatial):
        raise MaskError(f"mask shape {m.shape} != expected spatial dims {tuple(spatial)}")
    return m


def full_mask(h: int, w: int) -> Tensor:
    return np.ones((h, w), dtype=DTYPE)


def empty_mask(h: int, w: int) -> Tensor:
    return np.zeros((h, w), dtype=DTYPE)


def flatten_mask(mask: Tensor, channels: int) -> Tensor:
    """Repeat the spatial mask across channels in (C,H,W) row-major flat order."""
    m = validate_mask(mask)
    return np.broadcast_to(m[None], (channels, *m.shape)).reshape(-1).astype(DTYPE)


def read_mask(path: str | Path) -> Tensor:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _read_rle_json(path)
    return read_pgm_mask(path)


def read_pgm_mask(path: str | Path) -> Tensor:
    """Decode an 8-bit PGM; values >= 128 become 1."""
    data = Path(path).read_bytes()
    magic, fields, pixel_data = _parse_pgm_header(data, path)
    w, h, maxval = fields
    if maxval > 255:
        raise MaskError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    if magic == b"P5":
        if len(pixel_data) < w * h:
            raise MaskError(f"{path}: truncated PGM payload")
        values = np.frombuffer(pixel_data[:w * h], dtype=np.uint8)
    else:  # P2
        tokens = pixel_data.split()
        if len(tokens) < w * h:
            raise MaskError(f"{path}: truncated PGM payload")
        values = np.array([int(t) for t in tokens[:w * h]], dtype=np.uint8)
    return (values.reshape(h, w) >= 128).astype(DTYPE)


def write_pgm_mask(path: str | Path, mask: Tensor) -> None:
    """Encode as binary P5: 0 -> masked, 255 -> unmasked."""
    m = validate_mask(mask)
    h, w = m.shape
    payload = (m * 255).astype(np.uint8).tobytes()
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + payload)


def _parse_pgm_header(data: bytes, path) -> tuple[bytes, tuple[int, int, int], bytes]:
    if not data.startswith((b"P5", b"P2")):
        raise MaskError(f"{path}: not a PGM file")
    magic = data[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise MaskError(f"{path}: malformed PGM header") from None
    pos += 1  # single whitespace after maxval
    return magic, tuple(fields), data[pos:]


def _read_rle_json(path: Path) -> Tensor:
    try:
        spec = json.loads(path.read_text())
        h, w = int(spec["height"]), int(spec["width"])
        runs = spec["runs"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MaskError(f"{path}: malformed run-length mask: {exc}") from exc
    flat = np.empty(h * w, dtype=DTYPE)
    pos = 0
    for value, count in runs:
        if value not in (0, 1) or count < 1 or pos + count > h * w:
            raise MaskError(f"{path}: invalid run [{value}, {count}] at cell {pos}")
        flat[pos:pos + count] = value
        pos += count
    if pos != h * w:
        raise MaskError(f"{path}: runs cover {pos} cells, expected {h * w}")
    return flat.reshape(h, w)


def write_rle_json(path: str | Path, mask: Tensor) -> None:
    m = validate_mask(mask)
    flat = m.reshape(-1)
    runs: list[list[int]] = []
    for v in flat:
        iv = int(v)
        if runs and runs[-1][0] == iv:
            runs[-1][1] += 1
        else:
            runs.append([iv, 1])
    Path(path).write_text(json.dumps(
        {"height": m.shape[0], "width": m.shape[1], "runs": runs}))
