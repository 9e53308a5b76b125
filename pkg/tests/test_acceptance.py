"""Acceptance gate: one criterion per test, one printed PASS/FAIL line each.

The verdict lines bypass pytest's output capture, so a plain
``pytest tests/test_acceptance.py -v`` shows them.  Tolerances are pinned
here and must not be loosened to make a run pass.
"""

import time

import numpy as np
import pytest

from convad.ad import (ADConfig, ad_forward, position_attribution_conv,
                       position_attribution_pool, position_attribution_upsample,
                       threshold_mask)
from convad.errors import GeometryError
from convad.evaluate import run_suite
from convad.explain import (ExplainConfig, Explanation, MutationEngine,
                            build_landscape, check_explanation,
                            extract_explanation)
from convad.graph import forward
from convad.kernels import ConvGeometry
from convad.masks import full_mask
from convad import zoo
from oracles import attribution_window_loops, upsample_index_loops
from test_explainer import _oracle_scores_all_masks, _tiny_linear_model

F32 = np.float32


@pytest.fixture()
def verdict(capfd):
    """One printed PASS/FAIL line per criterion, bypassing pytest capture."""

    def _verdict(name: str, ok: bool, detail: str = ""):
        line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        with capfd.disabled():
            print(line, flush=True)
        assert ok, line

    return _verdict


class TestAcceptance:
    def test_unoccluded_equivalence(self, verdict):
        """All-ones mask matches the plain forward on every architecture."""
        t0 = time.monotonic()
        worst = 0.0
        failures = []
        for kind in zoo.ARCHITECTURES:
            graph, weights = zoo.make_model(kind, seed=17)
            result = zoo.verify_equivalence(graph, weights, trials=100,
                                            taus=(0.0, 0.25, 0.49), seed=23,
                                            tolerance=1e-5)
            worst = max(worst, result.max_deviation)
            if not result.passed:
                failures.append(f"{kind}: {result.first_failure}")
        elapsed = time.monotonic() - t0
        ok = not failures and worst <= 1e-5 and elapsed <= 120
        verdict("unoccluded-equivalence", ok,
                 f"max_dev={worst:.2e}, {len(zoo.ARCHITECTURES)} archs x 100 "
                 f"inputs x 3 taus in {elapsed:.1f}s"
                 + ("; " + "; ".join(failures) if failures else ""))

    def test_attribution_golden_grid(self, verdict):
        """Hand-checked 4x4 mask / 2x2 window attribution grid, exact."""
        mask = np.array([[1, 0, 1, 1],
                         [1, 0, 1, 1],
                         [1, 1, 1, 1],
                         [1, 1, 1, 1]], F32)
        phi = position_attribution_conv(mask, ConvGeometry(2, 2))
        expected = np.array([[0.50, 0.50, 1.00],
                             [0.75, 0.75, 1.00],
                             [1.00, 1.00, 1.00]], F32)
        ok = np.array_equal(phi, expected)
        verdict("attribution-golden-grid", ok, f"got {phi.tolist()}")

    def test_phi_oracle_suite(self, verdict):
        """1,000 randomized cases per attribution op vs. window enumeration."""
        rng = np.random.default_rng(404)
        worst = 0.0
        cases = {"window": 0, "upsample": 0}
        while cases["window"] < 1000:
            h, w = int(rng.integers(3, 13)), int(rng.integers(3, 13))
            try:
                geom = ConvGeometry(int(rng.integers(1, 5)), int(rng.integers(1, 5)),
                                    int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                                    int(rng.integers(0, 3)), int(rng.integers(0, 3)),
                                    int(rng.integers(1, 3)), int(rng.integers(1, 3)))
                geom.out_size(h, w)
            except GeometryError:
                continue
            mask = (rng.random((h, w)) > rng.random()).astype(F32)
            ref = attribution_window_loops(mask, geom)
            # conv and pool share the windowed-mean semantics; check both
            dev = max(float(np.max(np.abs(position_attribution_conv(mask, geom) - ref))),
                      float(np.max(np.abs(position_attribution_pool(mask, geom) - ref))))
            worst = max(worst, dev)
            cases["window"] += 1
        while cases["upsample"] < 1000:
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            factor = int(rng.integers(2, 5))
            mask = (rng.random((h, w)) > rng.random()).astype(F32)
            ref = upsample_index_loops(mask, factor)
            dev = float(np.max(np.abs(
                position_attribution_upsample(mask, factor) - ref)))
            worst = max(worst, dev)
            cases["upsample"] += 1
        ok = worst <= 1e-6
        verdict("phi-oracle-suite", ok,
                 f"{cases['window']} window + {cases['upsample']} upsample "
                 f"cases, max_dev={worst:.2e}")

    def test_mask_invariants_randomized_traces(self, verdict):
        """Binary range + pointwise monotonicity over 1,000 traces."""
        rng = np.random.default_rng(505)
        violations = 0
        traces = 0
        models = {kind: zoo.make_model(kind, seed=31) for kind in zoo.ARCHITECTURES}
        while traces < 1000:
            kind = zoo.ARCHITECTURES[traces % len(zoo.ARCHITECTURES)]
            graph, weights = models[kind]
            c, h, w = graph.input_shape
            x = rng.random((c, h, w), dtype=F32)
            tau = float(rng.uniform(0, 1.0 - 1e-6))
            small = (rng.random((h, w)) > rng.random()).astype(F32)
            large = np.maximum(small, (rng.random((h, w)) > 0.5).astype(F32))
            _, ts = ad_forward(graph, weights, x, small, ADConfig(tau=tau),
                               record=True)
            _, tl = ad_forward(graph, weights, x, large, ADConfig(tau=tau),
                               record=True)
            for a, b in zip(ts, tl):
                if not set(np.unique(a.mask)) <= {0.0, 1.0}:
                    violations += 1
                if not (a.mask <= b.mask).all():
                    violations += 1
            traces += 1
        verdict("mask-invariants", violations == 0,
                 f"{traces} traces, {violations} violations")

    def test_leak_fixtures(self, verdict):
        """Straddling-window activation vs threshold; padded borders stay on."""
        # (a) window straddling a masked half: fraction is exactly 0.5
        mask = full_mask(6, 6)
        mask[:, 3:] = 0.0
        geom = ConvGeometry(2, 2)
        phi = position_attribution_conv(mask, geom)
        straddle = phi[0, 2]        # window covering columns 2-3
        a_ok = (straddle == 0.5
                and threshold_mask(phi, 0.0)[0, 2] == 1.0      # active at 0
                and threshold_mask(phi, 0.5)[0, 2] == 0.0)     # off at tau >= phi
        # (b) fully-unmasked input with padding: no border deactivation
        geom_p = ConvGeometry(3, 3, pad_h=1, pad_w=1)
        phi_p = position_attribution_conv(full_mask(6, 6), geom_p)
        b_ok = all(threshold_mask(phi_p, tau).all()
                   for tau in (0.0, 0.5, 0.99))
        verdict("leak-fixtures", a_ok and b_ok,
                 f"straddle_phi={straddle}, padded_min_phi={phi_p.min()}")

    def test_explainer_correctness(self, bright_square, verdict):
        """Re-executed sufficiency/counterfactual checks + 4x4 brute force."""
        t0 = time.monotonic()
        graph, weights = bright_square
        failures = []
        engine_specs = [("zero", 0.0), ("min", 0.0), ("avg", 0.0),
                        ("ad", 0.49)]
        cfg = ExplainConfig(iterations=10)
        for img_seed in (0, 1):
            image = zoo.bright_square_image(16, noise_seed=img_seed)
            for name, tau in engine_specs:
                engine = MutationEngine(graph, weights, name, ADConfig(tau=tau))
                land = build_landscape(graph, weights, image, engine, cfg,
                                       seed=100 + img_seed)
                for gamma in (0.0, 0.3, 0.5, 0.7, 0.9):
                    expl = extract_explanation(land, graph, weights, image,
                                               engine, gamma, cfg)
                    suff, counter = check_explanation(expl, graph, weights,
                                                      image, engine)
                    if not (suff and counter):
                        failures.append(
                            f"img{img_seed}/{name}/g={gamma}: "
                            f"sufficient={suff}, counterfactual={counter}")

        # exhaustive 4x4 grid: greedy can never beat the optimum, and the
        # optimum itself must satisfy the re-executed sufficiency check
        tgraph, tweights = _tiny_linear_model(4, seed=5)
        timage = np.abs(np.random.default_rng(2).standard_normal(
            (1, 4, 4))).astype(F32)
        masks, all_scores = _oracle_scores_all_masks(tweights, timage)
        tengine = MutationEngine(tgraph, tweights, "zero")
        scores0 = forward(tgraph, tweights, timage)
        label0 = int(np.argmax(scores0))
        gamma = 0.6
        target = gamma * float(scores0[label0])
        sufficient = (np.argmax(all_scores, axis=1) == label0) & \
                     (all_scores[:, label0] >= target)
        sizes = masks.sum(axis=1)
        optimum_idx = int(np.flatnonzero(sufficient)[
            np.argmin(sizes[sufficient])])
        optimum = int(sizes[optimum_idx])
        tcfg = ExplainConfig(iterations=8, min_cell=1, chunk_px=1)
        tland = build_landscape(tgraph, tweights, timage, tengine, tcfg, seed=0)
        texpl = extract_explanation(tland, tgraph, tweights, timage, tengine,
                                    gamma, tcfg)
        if int(texpl.pixel_set.sum()) < optimum:
            failures.append(f"greedy size {int(texpl.pixel_set.sum())} "
                            f"< exhaustive optimum {optimum}")
        opt_expl = Explanation(
            pixel_set=masks[optimum_idx].reshape(4, 4).astype(F32),
            confidence=float(all_scores[optimum_idx, label0]), gamma=gamma,
            size_fraction=optimum / 16.0, engine="zero", label=label0)
        opt_suff, _ = check_explanation(opt_expl, tgraph, tweights, timage,
                                        tengine)
        if not opt_suff:
            failures.append("checker rejected the exhaustive minimum")
        elapsed = time.monotonic() - t0
        ok = not failures and elapsed <= 300
        verdict("explainer-correctness", ok,
                 f"{2 * len(engine_specs) * 5} explanations + 2^16 grid in "
                 f"{elapsed:.1f}s"
                 + ("; " + "; ".join(failures) if failures else ""))

    def test_desk_scale_protocol(self, tmp_path_factory, bright_square, verdict):
        """Full run_suite analogue with monotone robustness and determinism."""
        t0 = time.monotonic()
        graph, weights = bright_square
        root = tmp_path_factory.mktemp("accept_suite")
        data = root / "data"
        pool = root / "pool"
        zoo.make_dataset(data, count=20, size=16, seed=0)
        zoo.make_background_pool(pool, count=120, size=16, seed=7)
        engines = ["ad", "min", "max", "avg", "zero"]
        gammas = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9]
        reports = []
        for run in ("run1", "run2"):
            run_suite(data, graph, weights, engines=engines, gammas=gammas,
                      cfg=ExplainConfig(iterations=20),
                      ad_cfg=ADConfig(tau=0.49), seed=11,
                      out_dir=root / run, n_backgrounds=100,
                      background_pool_dir=pool)
            reports.append((root / run / "report.csv").read_bytes())
        elapsed = time.monotonic() - t0

        rows = [line.split(",") for line in
                reports[0].decode().splitlines()[1:]]
        failures = []
        for engine in engines:
            per = [(float(r[1]), float(r[2]), float(r[3]))
                   for r in rows if r[0] == engine]
            per.sort()
            for col, label in ((1, "rho_solid"), (2, "rho_iid")):
                vals = [p[col] for p in per]
                if any(b < a for a, b in zip(vals, vals[1:])):
                    failures.append(f"{engine}/{label} not monotone: {vals}")
        if reports[0] != reports[1]:
            failures.append("rerun not byte-identical")
        if elapsed > 900:
            failures.append(f"runtime {elapsed:.0f}s > 900s")
        verdict("desk-scale-protocol", not failures,
                 f"20 imgs x {len(engines)} engines x {len(gammas)} gammas, "
                 f"2 runs in {elapsed:.0f}s"
                 + ("; " + "; ".join(failures) if failures else ""))
