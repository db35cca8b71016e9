"""Site/arc spin market model: micro dynamics, the exact macro chain, its
spectral analysis, the drift skeleton and rescaled-range statistics."""

from .core import (
    MacroState,
    MicroConfig,
    ModelParams,
    TiePolicy,
    global_imbalance,
    heat_bath_update,
    macro_counts,
    run_micro,
)
from .kernel import (
    StepDistribution,
    brute_force_flip_oracle,
    macro_step_distribution,
    p_minus_minus,
    p_plus_plus,
    q_minus_minus,
    q_plus_plus,
    simulate_macro_chain,
)
from .longmem import rs_curve, rs_index, rs_statistic
from .skeleton import analyze_attractors, ca_step, drift_f, drift_field, drift_g, find_equilibria
from .spectral import (
    MeasureGrid,
    assemble_matrix,
    mixing_half_life,
    second_eigenvector,
    spectral_gap,
    spectrum,
    stationary_measure,
)

__version__ = "0.1.0"

__all__ = [
    "MacroState",
    "MicroConfig",
    "ModelParams",
    "TiePolicy",
    "StepDistribution",
    "MeasureGrid",
    "global_imbalance",
    "heat_bath_update",
    "macro_counts",
    "run_micro",
    "brute_force_flip_oracle",
    "macro_step_distribution",
    "p_minus_minus",
    "p_plus_plus",
    "q_minus_minus",
    "q_plus_plus",
    "simulate_macro_chain",
    "rs_curve",
    "rs_index",
    "rs_statistic",
    "analyze_attractors",
    "ca_step",
    "drift_f",
    "drift_field",
    "drift_g",
    "find_equilibria",
    "assemble_matrix",
    "mixing_half_life",
    "second_eigenvector",
    "spectral_gap",
    "spectrum",
    "stationary_measure",
]
