"""Request/response models for the HTTP service.

All file paths are interpreted on the server's filesystem; the CLI runs
the app in-process by default, so paths behave like local paths there.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class LoadModelRequest(BaseModel):
    manifest_path: str
    blob_path: str


class ModelInfo(BaseModel):
    model_id: str
    input_shape: list[int]
    labels: list[str]
    n_layers: int
    layer_kinds: list[str]
    checkpoints: list[int]


class Prediction(BaseModel):
    label: str
    index: int
    confidence: float


class InferRequest(BaseModel):
    image_path: str
    mask_path: str | None = None
    mode: str = "plain"                 # plain | ad | occlusion
    policy: str = "zero"                # occlusion mode only
    tau: float = Field(default=0.0, ge=0.0, lt=1.0)
    top_k: int = Field(default=5, ge=1)


class InferResponse(BaseModel):
    mode: str
    predictions: list[Prediction]
    scores: list[float]


class ExplainRequest(BaseModel):
    image_path: str
    engine: str = "ad"
    gamma: float = Field(ge=0.0, le=1.0)
    seed: int
    tau: float = Field(default=0.0, ge=0.0, lt=1.0)
    iterations: int = Field(default=20, ge=1)
    chunk_px: int = Field(default=4, ge=1)
    out_prefix: str | None = None


class ExplainResponse(BaseModel):
    engine: str
    gamma: float
    confidence: float
    size_fraction: float
    label: str
    seed: int
    mask_path: str | None = None
    sidecar_path: str | None = None


class EvaluateRequest(BaseModel):
    dataset_dir: str
    engines: list[str]
    gammas: list[float]
    seed: int
    out_dir: str
    backgrounds: int = Field(default=100, ge=1)
    background_pool_dir: str | None = None
    tau: float = Field(default=0.0, ge=0.0, lt=1.0)
    iterations: int = Field(default=20, ge=1)
    chunk_px: int = Field(default=4, ge=1)


class EvalRowModel(BaseModel):
    engine: str
    gamma: float
    rho_solid: float
    rho_iid: float
    mean_size: float
    mean_confidence: float
    n: int


class EvaluateResponse(BaseModel):
    rows: list[EvalRowModel]
    report_csv: str
    seed: int


class VerifyRequest(BaseModel):
    trials: int = Field(default=100, ge=1)
    taus: list[float] = [0.0, 0.25, 0.49]
    seed: int = 0
    tolerance: float = 1e-5


class VerifyResponse(BaseModel):
    passed: bool
    max_deviation: float
    trials: int
    taus: list[float]
    first_failure: str
