"""FastAPI service wrapping the inference/explanation engine.

Models are loaded once into an in-memory registry and shared read-only
across requests; every forward pass keeps its state on the stack, so
concurrent requests against one model are safe.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import zoo
from ..ad import ADConfig, ad_forward, occlusion_forward
from ..errors import ConvadError
from ..evaluate import run_suite
from ..explain import (ExplainConfig, MutationEngine, build_landscape,
                       extract_explanation, save_explanation)
from ..graph import forward, load_model
from ..images import load_image
from ..masks import full_mask, read_mask
from .schemas import (EvalRowModel, EvaluateRequest, EvaluateResponse,
                      ExplainRequest, ExplainResponse, InferRequest,
                      InferResponse, LoadModelRequest, ModelInfo, Prediction,
                      VerifyRequest, VerifyResponse)


def _model_info(model_id: str, entry) -> ModelInfo:
    graph = entry["graph"]
    return ModelInfo(
        model_id=model_id,
        input_shape=list(graph.input_shape),
        labels=list(graph.class_labels),
        n_layers=len(graph.layers),
        layer_kinds=[layer.kind for layer in graph.layers],
        checkpoints=sorted(graph.checkpoints),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="convad", version="0.1.0")
    registry: dict[str, dict] = {}
    app.state.models = registry

    def get_model(model_id: str) -> dict:
        if model_id not in registry:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id!r}")
        return registry[model_id]

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/models", response_model=ModelInfo)
    def load(req: LoadModelRequest):
        try:
            graph, weights = load_model(req.manifest_path, req.blob_path)
        except (ConvadError, OSError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        digest = hashlib.sha256(
            f"{Path(req.manifest_path).resolve()}|{Path(req.blob_path).resolve()}"
            .encode()).hexdigest()[:12]
        registry[digest] = {"graph": graph, "weights": weights}
        return _model_info(digest, registry[digest])

    @app.get("/models", response_model=list[ModelInfo])
    def list_models():
        return [_model_info(mid, entry) for mid, entry in sorted(registry.items())]

    @app.get("/models/{model_id}", response_model=ModelInfo)
    def get_info(model_id: str):
        return _model_info(model_id, get_model(model_id))

    @app.post("/models/{model_id}/infer", response_model=InferResponse)
    def infer(model_id: str, req: InferRequest):
        entry = get_model(model_id)
        graph, weights = entry["graph"], entry["weights"]
        try:
            image = load_image(req.image_path, graph.input_shape, graph.preprocessing)
            if req.mode == "plain":
                scores = forward(graph, weights, image)
            else:
                mask = (read_mask(req.mask_path) if req.mask_path
                        else full_mask(*graph.input_shape[1:]))
                if req.mode == "ad":
                    scores = ad_forward(graph, weights, image, mask,
                                        ADConfig(tau=req.tau))
                elif req.mode == "occlusion":
                    scores = occlusion_forward(graph, weights, image, mask, req.policy)
                else:
                    raise HTTPException(status_code=422,
                                        detail=f"unknown mode {req.mode!r}")
        except ConvadError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        order = np.argsort(-scores, kind="stable")[:req.top_k]
        labels = graph.class_labels or [str(i) for i in range(len(scores))]
        preds = [Prediction(label=labels[i], index=int(i),
                            confidence=float(scores[i])) for i in order]
        return InferResponse(mode=req.mode, predictions=preds,
                             scores=[float(s) for s in scores])

    @app.post("/models/{model_id}/explain", response_model=ExplainResponse)
    def explain(model_id: str, req: ExplainRequest):
        entry = get_model(model_id)
        graph, weights = entry["graph"], entry["weights"]
        cfg = ExplainConfig(iterations=req.iterations, chunk_px=req.chunk_px)
        try:
            image = load_image(req.image_path, graph.input_shape, graph.preprocessing)
            engine = MutationEngine(graph, weights, req.engine, ADConfig(tau=req.tau))
            landscape = build_landscape(graph, weights, image, engine, cfg,
                                        seed=req.seed)
            expl = extract_explanation(landscape, graph, weights, image, engine,
                                       req.gamma, cfg, seed=req.seed)
        except ConvadError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        mask_path = sidecar_path = None
        if req.out_prefix:
            Path(req.out_prefix).parent.mkdir(parents=True, exist_ok=True)
            pgm, sidecar = save_explanation(expl, req.out_prefix)
            mask_path, sidecar_path = str(pgm), str(sidecar)
        labels = graph.class_labels or [str(expl.label)]
        return ExplainResponse(engine=expl.engine, gamma=expl.gamma,
                               confidence=expl.confidence,
                               size_fraction=expl.size_fraction,
                               label=labels[expl.label], seed=req.seed,
                               mask_path=mask_path, sidecar_path=sidecar_path)

    @app.post("/models/{model_id}/evaluate", response_model=EvaluateResponse)
    def evaluate(model_id: str, req: EvaluateRequest):
        entry = get_model(model_id)
        graph, weights = entry["graph"], entry["weights"]
        cfg = ExplainConfig(iterations=req.iterations, chunk_px=req.chunk_px)
        try:
            report = run_suite(req.dataset_dir, graph, weights, req.engines,
                               req.gammas, cfg, ADConfig(tau=req.tau),
                               seed=req.seed, out_dir=req.out_dir,
                               n_backgrounds=req.backgrounds,
                               background_pool_dir=req.background_pool_dir)
        except ConvadError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        rows = [EvalRowModel(engine=r.engine, gamma=r.gamma, rho_solid=r.rho_solid,
                             rho_iid=r.rho_iid, mean_size=r.mean_size,
                             mean_confidence=r.mean_confidence, n=r.n)
                for r in report.rows]
        return EvaluateResponse(rows=rows,
                                report_csv=str(Path(req.out_dir) / "report.csv"),
                                seed=report.seed)

    @app.post("/models/{model_id}/verify", response_model=VerifyResponse)
    def verify(model_id: str, req: VerifyRequest):
        entry = get_model(model_id)
        result = zoo.verify_equivalence(entry["graph"], entry["weights"],
                                        trials=req.trials, taus=tuple(req.taus),
                                        seed=req.seed, tolerance=req.tolerance)
        return VerifyResponse(passed=result.passed,
                              max_deviation=result.max_deviation,
                              trials=result.trials, taus=list(result.taus),
                              first_failure=result.first_failure)

    return app


app = create_app()
