"""Spline-edged KANs with entropy-driven attraction toward sparse
Fourier/Chebyshev/Bessel edge representations.

The training loop learns free-form spline edges, projects each edge into
candidate orthonormal spaces, scores representation entropy, and freezes
edges into few-parameter truncated series when the fit is good enough; a
regret check reverts freezes that hurt held-out cost.
"""

from .benchmarks import Dataset, NoiseSpec, TestFunction, make_function, sample_dataset
from .cost import CostBreakdown, CostWeights, total_cost, total_cost_and_grad
from .diagnostics import SpectralReport, SymbolicEdge, r2_score, render_symbolic, spectral_spread
from .errors import (
    ConfigError,
    DomainError,
    NumericError,
    ProtocolError,
    TrainingDiverged,
)
from .network import (
    Edge,
    EdgeState,
    Network,
    build_network,
    jacobian,
    load_network,
    network_from_doc,
    network_to_doc,
    save_network,
)
from .spaces import (
    FixedParametric,
    ProjectionReport,
    best_fit,
    coeff_entropy,
    default_spaces,
    eval_fixed,
    get_space,
    lambda_schedule,
    project,
    softmin_entropy,
)
from .splines import KnotGrid, SplineEdge, basis_eval, edge_eval, edge_eval_grid, fit_spline
from .training import (
    Adam,
    RunResult,
    TrainingData,
    finetune,
    fix_round,
    force_fix,
    load_checkpoint,
    pretrain,
    regret_check,
    run,
    save_checkpoint,
)

__version__ = "0.1.0"
