"""Sparse inverse problems with LASSO and the Variational Garrote."""

from .transforms import DctBasis, dct_analyze, dct_synthesize
from .operators import (
    CtGeometry,
    MaskSpec,
    compose,
    column_norms_squared,
    fbp_reconstruct,
    make_identity_operator,
    make_subsample_operator,
    radon_adjoint,
    radon_forward,
)
from .optim import OptConfig, run_loop
from .solvers import (
    LassoParams,
    Solution,
    SparseProblem,
    VgParams,
    VgState,
    brute_force_l0,
    reconstruct,
    solve,
)

__version__ = "0.1.0"
