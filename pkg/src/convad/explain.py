"""Causal explanation extraction via responsibility-ranked greedy search.

The landscape builder repeatedly partitions the image into four
quadrants (random split point per iteration), probes every non-empty
quadrant subset through the chosen mutation engine, credits each
minimal class-preserving subset with responsibility 1/|subset| spread
over its pixels, and recurses into the responsible quadrants.  The
extractor then adds pixels in ranked chunks until the restricted input
keeps the original class at the requested confidence fraction, followed
by one backward pruning sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .ad import ADConfig, OCCLUSION_POLICIES, ad_forward, occlusion_forward
from .errors import ConvadError
from .graph import ModelGraph, WeightStore
from .kernels import DTYPE, Tensor
from .masks import validate_mask, write_pgm_mask

ENGINES = ("ad", *OCCLUSION_POLICIES)


class MutationEngine:
    """Evaluates the model on an input restricted to a kept pixel set."""

    def __init__(self, graph: ModelGraph, weights: WeightStore, name: str,
                 cfg: ADConfig = ADConfig()):
        if name not in ENGINES:
            raise ConvadError(f"unknown engine {name!r}; choose from {ENGINES}")
        self.graph = graph
        self.weights = weights
        self.name = name
        self.cfg = cfg

    def scores(self, image: Tensor, keep_mask: Tensor) -> Tensor:
        if self.name == "ad":
            return ad_forward(self.graph, self.weights, image, keep_mask, self.cfg)
        return occlusion_forward(self.graph, self.weights, image, keep_mask, self.name)


@dataclass
class SaliencyLandscape:
    """Accumulated per-pixel responsibility (non-negative, finite)."""

    scores: Tensor

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=DTYPE)
        if s.ndim != 2 or not np.isfinite(s).all() or (s < 0).any():
            raise ConvadError("landscape must be a finite non-negative (H,W) array")
        self.scores = s

    def ranked_pixels(self) -> np.ndarray:
        """Flat pixel indices, responsibility descending, row-major tiebreak."""
        flat = self.scores.reshape(-1)
        return np.argsort(-flat, kind="stable")


@dataclass
class Explanation:
    pixel_set: Tensor          # (H,W) binary, 1 = in explanation
    confidence: float
    gamma: float
    size_fraction: float
    engine: str
    label: int
    seed: int | None = None

    def __post_init__(self):
        self.pixel_set = validate_mask(self.pixel_set)


@dataclass(frozen=True)
class ExplainConfig:
    iterations: int = 20
    min_cell: int = 4          # stop recursing below this region area (pixels)
    chunk_px: int = 4          # greedy step size in pixels


def _quadrants(top: int, left: int, h: int, w: int,
               rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
    """Split a box into up to four boxes at a random interior point."""
    sh = int(rng.integers(1, h)) if h > 1 else h
    sw = int(rng.integers(1, w)) if w > 1 else w
    boxes = []
    for r0, rh in ((top, sh), (top + sh, h - sh)):
        for c0, cw in ((left, sw), (left + sw, w - sw)):
            if rh > 0 and cw > 0:
                boxes.append((r0, c0, rh, cw))
    return boxes


def _box_mask(shape: tuple[int, int], boxes) -> Tensor:
    m = np.zeros(shape, dtype=DTYPE)
    for r, c, h, w in boxes:
        m[r:r + h, c:c + w] = 1.0
    return m


def build_landscape(graph: ModelGraph, weights: WeightStore, image: Tensor,
                    engine: MutationEngine, cfg: ExplainConfig = ExplainConfig(),
                    seed: int = 0) -> SaliencyLandscape:
    """Iterative hierarchical partition-and-test responsibility map."""
    if cfg.iterations < 1:
        raise ConvadError("iterations must be >= 1")
    from .graph import forward

    h, w = image.shape[1:]
    label0 = int(np.argmax(forward(graph, weights, image)))
    resp = np.zeros((h, w), dtype=np.float64)
    rng = np.random.default_rng(seed)

    def preserves(keep: Tensor) -> bool:
        return int(np.argmax(engine.scores(image, keep))) == label0

    def search(box: tuple[int, int, int, int], context: Tensor) -> None:
        top, left, bh, bw = box
        if bh * bw <= cfg.min_cell or (bh < 2 and bw < 2):
            return
        quads = _quadrants(top, left, bh, bw, rng)
        if len(quads) < 2:
            return
        ids = range(len(quads))
        preserving: list[tuple[int, ...]] = []
        for size in range(1, len(quads) + 1):
            for subset in combinations(ids, size):
                keep = np.maximum(context, _box_mask((h, w), [quads[q] for q in subset]))
                if preserves(keep):
                    preserving.append(subset)
        minimal = [s for s in preserving
                   if not any(set(t) < set(s) for t in preserving)]
        responsible: set[int] = set()
        for subset in minimal:
            credit = 1.0 / len(subset)
            for q in subset:
                r, c, qh, qw = quads[q]
                resp[r:r + qh, c:c + qw] += credit
            responsible.update(subset)
        for q in sorted(responsible):
            smallest = min((s for s in minimal if q in s), key=len)
            ctx = np.maximum(context, _box_mask(
                (h, w), [quads[p] for p in smallest if p != q]))
            search(quads[q], ctx)

    for _ in range(cfg.iterations):
        search((0, 0, h, w), np.zeros((h, w), dtype=DTYPE))
    return SaliencyLandscape(scores=resp.astype(DTYPE))


def extract_explanation(landscape: SaliencyLandscape, graph: ModelGraph,
                        weights: WeightStore, image: Tensor, engine: MutationEngine,
                        gamma: float, cfg: ExplainConfig = ExplainConfig(),
                        seed: int | None = None) -> Explanation:
    """Greedy chunked growth to the confidence target, then one pruning sweep."""
    if not 0.0 <= gamma <= 1.0:
        raise ConvadError(f"gamma must be in [0, 1], got {gamma}")
    from .graph import forward

    h, w = image.shape[1:]
    scores0 = forward(graph, weights, image)
    label0 = int(np.argmax(scores0))
    c0 = float(scores0[label0])
    target = gamma * c0

    def satisfied(keep: Tensor) -> tuple[bool, float]:
        s = engine.scores(image, keep)
        conf = float(s[label0])
        return int(np.argmax(s)) == label0 and conf >= target, conf

    order = landscape.ranked_pixels()
    chunks = [order[i:i + cfg.chunk_px] for i in range(0, len(order), cfg.chunk_px)]
    keep = np.zeros((h, w), dtype=DTYPE)
    used: list[np.ndarray] = []
    conf = 0.0
    for chunk in chunks:
        keep.reshape(-1)[chunk] = 1.0
        used.append(chunk)
        ok, conf = satisfied(keep)
        if ok:
            break
    for chunk in reversed(used[:-1]):
        keep.reshape(-1)[chunk] = 0.0
        ok, c = satisfied(keep)
        if ok:
            conf = c
        else:
            keep.reshape(-1)[chunk] = 1.0
    return Explanation(pixel_set=keep, confidence=conf, gamma=gamma,
                       size_fraction=float(keep.sum()) / (h * w),
                       engine=engine.name, label=label0, seed=seed)


def explanation_confidence(explanation: Explanation, graph: ModelGraph,
                           weights: WeightStore, image: Tensor,
                           engine: MutationEngine) -> float:
    """Probability of the original class on the restricted input."""
    return float(engine.scores(image, explanation.pixel_set)[explanation.label])


def check_explanation(explanation: Explanation, graph: ModelGraph,
                      weights: WeightStore, image: Tensor,
                      engine: MutationEngine) -> tuple[bool, bool]:
    """Re-execute the sufficiency and counterfactual conditions.

    Returns (sufficient, counterfactual): the restricted input keeps
    the class at the confidence target, and removing the pixel set
    flips the class or drops the confidence below the target.
    """
    from .graph import forward

    scores0 = forward(graph, weights, image)
    label0 = int(np.argmax(scores0))
    target = explanation.gamma * float(scores0[label0])
    s_keep = engine.scores(image, explanation.pixel_set)
    sufficient = (int(np.argmax(s_keep)) == label0
                  and float(s_keep[label0]) >= target)
    inverse = (1.0 - explanation.pixel_set).astype(DTYPE)
    s_inv = engine.scores(image, inverse)
    counterfactual = (int(np.argmax(s_inv)) != label0
                      or float(s_inv[label0]) < target)
    return sufficient, counterfactual


def save_explanation(explanation: Explanation, prefix: str | Path) -> tuple[Path, Path]:
    """Write the PGM mask and its JSON sidecar; returns both paths."""
    # append rather than with_suffix: the prefix may contain dots (e.g. "_0.9")
    pgm = Path(f"{prefix}.pgm")
    sidecar = Path(f"{prefix}.json")
    write_pgm_mask(pgm, explanation.pixel_set)
    sidecar.write_text(json.dumps({
        "engine": explanation.engine,
        "gamma": explanation.gamma,
        "confidence": round(explanation.confidence, 6),
        "size_fraction": round(explanation.size_fraction, 6),
        "seed": explanation.seed,
        "label": explanation.label,
    }, indent=2) + "\n")
    return pgm, sidecar
