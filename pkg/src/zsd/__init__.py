"""Initialization of the zsd package: learning dynamics for zero-sum matrix games."""

from .dynamics import (  # noqa: F401
    Algorithm,
    DynamicsConfig,
    DynamicsState,
    RunResult,
    StoppingRule,
    StopReason,
    flbr_step,
    ibr_step,
    mwu_step,
    omd_step,
    omwu_step,
    run,
    softmax_reweigh,
)
from .equilibrium import (  # noqa: F401
    EquilibriumResult,
    estimate_nash,
    solve_2x2,
    solve_support_enum,
    verify_eps_nash,
)
from .game import (  # noqa: F401
    MixedStrategy,
    PayoffMatrix,
    StrategyProfile,
    epsilon_of,
    expected_payoff,
    rescale,
)
from .metrics import criterion_kl, kl_divergence, l1_distance  # noqa: F401
from .spectral import certify_contraction, eigen_moduli, jacobian_at_equilibrium  # noqa: F401
