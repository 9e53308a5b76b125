"""Occlusion-free CNN inference and causal explanation toolkit."""

from .ad import (ADConfig, ADState, ad_forward, occlusion_forward,
                 position_attribution_concat, position_attribution_conv,
                 position_attribution_pool, position_attribution_upsample,
                 threshold_mask)
from .errors import (ConvadError, GeometryError, MaskError, ModelFormatError,
                     ShapeMismatchError)
from .explain import (ENGINES, ExplainConfig, Explanation, MutationEngine,
                      SaliencyLandscape, build_landscape, check_explanation,
                      explanation_confidence, extract_explanation)
from .evaluate import (BackgroundSet, EvalReport, EvalRow, make_backgrounds,
                       plant, rho_robustness, run_suite)
from .graph import (LayerSpec, ModelGraph, WeightStore, annotate_checkpoints,
                    forward, load_model, save_model)
from .kernels import ConvGeometry, Tensor

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
