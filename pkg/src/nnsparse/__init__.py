"""Non-negative, sparsity-promoting solvers for patch-dictionary inverse problems."""

from .dictionary import (
    DictLearnConfig,
    Dictionary,
    PatchGeometry,
    global_dictionary_operator,
    learn_dictionary_admm,
    load_dictionary,
    patchify,
    save_dictionary,
    unpatchify,
)
from .linop import LinearOperator, SparseOperator, apply, apply_adjoint, to_dense
from .metrics import MetricsReport, rel_error, rel_residual, rel_sparsity
from .solvers import (
    MappingParams,
    SolverOptions,
    SolverResult,
    mrnsd,
    sp_mrnsd,
    sp_nngd,
)

__version__ = "0.1.0"
