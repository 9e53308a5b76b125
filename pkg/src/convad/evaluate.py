"""Desk-scale robustness/size/confidence evaluation protocol.

For every (image, engine, confidence threshold) the harness extracts an
explanation, plants it onto solid-color and IID background sets, and
records the fraction of composites the model still classifies as the
original label, together with explanation size and confidence.
Composites are classified with the plain forward pass: a planted image
is a real image, not a masked pass.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ad import ADConfig
from .errors import ConvadError, ShapeMismatchError
from .explain import (ENGINES, ExplainConfig, Explanation, MutationEngine,
                      build_landscape, extract_explanation, save_explanation)
from .graph import ModelGraph, WeightStore, forward
from .images import load_image
from .kernels import DTYPE, Tensor

log = logging.getLogger(__name__)

DEFAULT_BACKGROUND_COUNT = 100
REPORT_HEADER = ["engine", "gamma", "rho_solid", "rho_iid",
                 "mean_size", "mean_confidence", "n"]


@dataclass
class BackgroundSet:
    kind: str                  # solid_color | iid
    items: list[Tensor]
    seed: int


@dataclass
class EvalRow:
    engine: str
    gamma: float
    rho_solid: float
    rho_iid: float
    mean_size: float
    mean_confidence: float
    n: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    seed: int = 0


def make_backgrounds(kind: str, seed: int, count: int,
                     shape: tuple[int, int, int],
                     pool: list[tuple[Tensor, str]] | None = None,
                     exclude_label: str | None = None) -> BackgroundSet:
    """Solid-color: uniform random color per image.  IID: sampled without
    replacement from a labelled pool, excluding the original class."""
    c, h, w = shape
    rng = np.random.default_rng(seed)
    if kind == "solid_color":
        items = []
        for _ in range(count):
            color = rng.random(c).astype(DTYPE)
            items.append(np.broadcast_to(color[:, None, None], (c, h, w)).copy())
        return BackgroundSet(kind=kind, items=items, seed=seed)
    if kind == "iid":
        if not pool:
            raise ConvadError("iid backgrounds require a non-empty image pool")
        candidates = [img for img, label in pool if label != exclude_label]
        if len(candidates) < count:
            raise ConvadError(
                f"background pool has {len(candidates)} usable images, need {count}")
        idx = rng.choice(len(candidates), size=count, replace=False)
        items = [candidates[i] for i in idx]
        for img in items:
            if img.shape != (c, h, w):
                raise ShapeMismatchError(
                    f"pool image shape {img.shape} != model input {(c, h, w)}",
                    where="make_backgrounds")
        return BackgroundSet(kind=kind, items=items, seed=seed)
    raise ConvadError(f"unknown background kind {kind!r}")


def plant(explanation: Explanation, original: Tensor, background: Tensor) -> Tensor:
    """Composite: explanation pixels from the original, rest from the background."""
    if original.shape != background.shape:
        raise ShapeMismatchError(
            f"original {original.shape} vs background {background.shape}", where="plant")
    if explanation.pixel_set.shape != original.shape[1:]:
        raise ShapeMismatchError(
            f"explanation {explanation.pixel_set.shape} vs image {original.shape[1:]}",
            where="plant")
    m = explanation.pixel_set[None]
    return np.where(m > 0, original, background).astype(DTYPE)


def rho_robustness(explanation: Explanation, original: Tensor,
                   backgrounds: BackgroundSet, graph: ModelGraph,
                   weights: WeightStore) -> float:
    """Fraction of composites classified (plain forward, top-1) as the label."""
    if not backgrounds.items:
        raise ConvadError("background set is empty")
    hits = 0
    for bg in backgrounds.items:
        composite = plant(explanation, original, bg)
        if int(np.argmax(forward(graph, weights, composite))) == explanation.label:
            hits += 1
    return hits / len(backgrounds.items)


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _load_labelled_dir(directory: Path, input_shape, preprocessing):
    """Images plus labels from an optional labels.json ({filename: label})."""
    labels = {}
    labels_file = directory / "labels.json"
    if labels_file.exists():
        labels = json.loads(labels_file.read_text())
    out = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in (".png", ".ppm", ".pgm"):
            continue
        try:
            img = load_image(path, input_shape, preprocessing)
        except ConvadError as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        out.append((path.stem, img, labels.get(path.name, "")))
    return out


def run_suite(dataset_dir: str | Path, graph: ModelGraph, weights: WeightStore,
              engines: list[str], gammas: list[float],
              cfg: ExplainConfig = ExplainConfig(), ad_cfg: ADConfig = ADConfig(),
              seed: int = 0, out_dir: str | Path = "eval_out",
              n_backgrounds: int = DEFAULT_BACKGROUND_COUNT,
              background_pool_dir: str | Path | None = None) -> EvalReport:
    """Full protocol over a dataset directory; writes report.csv and artifacts."""
    dataset_dir = Path(dataset_dir)
    out_dir = Path(out_dir)
    for engine in engines:
        if engine not in ENGINES:
            raise ConvadError(f"unknown engine {engine!r}")
    dataset = _load_labelled_dir(dataset_dir, graph.input_shape, graph.preprocessing)
    if not dataset:
        raise ConvadError(f"no readable images in {dataset_dir}")
    pool_dir = Path(background_pool_dir) if background_pool_dir else None
    pool = None
    if pool_dir is not None:
        pool = [(img, label)
                for _, img, label in _load_labelled_dir(
                    pool_dir, graph.input_shape, graph.preprocessing)]

    out_dir.mkdir(parents=True, exist_ok=True)
    expl_dir = out_dir / "explanations"
    expl_dir.mkdir(exist_ok=True)

    solid = make_backgrounds("solid_color", _stable_seed(seed, "solid"),
                             n_backgrounds, graph.input_shape)

    accum: dict[tuple[str, float], list[tuple[float, float, float, float]]] = {
        (e, g): [] for e in engines for g in gammas}
    for name, image, label in dataset:
        original_label = graph.class_labels[int(np.argmax(forward(graph, weights, image)))] \
            if graph.class_labels else str(int(np.argmax(forward(graph, weights, image))))
        iid = None
        if pool is not None:
            iid = make_backgrounds("iid", _stable_seed(seed, "iid", name),
                                   n_backgrounds, graph.input_shape,
                                   pool=pool, exclude_label=original_label)
        for engine_name in engines:
            engine = MutationEngine(graph, weights, engine_name, ad_cfg)
            land_seed = _stable_seed(seed, name, engine_name)
            landscape = build_landscape(graph, weights, image, engine, cfg,
                                        seed=land_seed)
            for gamma in gammas:
                expl = extract_explanation(landscape, graph, weights, image,
                                           engine, gamma, cfg, seed=land_seed)
                rho_s = rho_robustness(expl, image, solid, graph, weights)
                rho_i = (rho_robustness(expl, image, iid, graph, weights)
                         if iid is not None else 0.0)
                accum[(engine_name, gamma)].append(
                    (rho_s, rho_i, expl.size_fraction, expl.confidence))
                save_explanation(expl, expl_dir / f"{name}_{engine_name}_{gamma:g}")

    report = EvalReport(seed=seed)
    for engine_name in engines:
        for gamma in gammas:
            samples = accum[(engine_name, gamma)]
            cols = list(zip(*samples))
            report.rows.append(EvalRow(
                engine=engine_name, gamma=gamma,
                rho_solid=float(np.mean(cols[0])), rho_iid=float(np.mean(cols[1])),
                mean_size=float(np.mean(cols[2])),
                mean_confidence=float(np.mean(cols[3])), n=len(samples)))
    write_report_csv(out_dir / "report.csv", report)
    return report


def write_report_csv(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in report.rows:
            writer.writerow([row.engine, f"{row.gamma:g}",
                             f"{row.rho_solid:.6f}", f"{row.rho_iid:.6f}",
                             f"{row.mean_size:.6f}", f"{row.mean_confidence:.6f}",
                             row.n])
