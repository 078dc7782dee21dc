"""Implicit cross-diffusion schemes with AOS/AMOS splittings and a block Thomas solver."""

from .blocksolve import (
    BlockLUFactors,
    BlockTridiagonalMatrix,
    FactorizationDiagnostics,
    FactorizationError,
    block_lu_factor,
    block_lu_solve,
    dense_solve,
    spectral_norm_2x2,
)
from .grid import Grid, StateW, inner_h, inner_hk_star, norm_W
from .model import (
    ComplexDiffusion,
    GeneralModel,
    ReactionModel,
    ScaledConstant,
    evaluate_coefficients,
    expand_variant,
)
from .schemes import (
    DivergenceError,
    SchemeConfig,
    StepReport,
    step_amos,
    step_aos,
    step_explicit,
    step_full_theta,
)

__version__ = "0.1.0"
