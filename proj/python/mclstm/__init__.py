"""Mass-conserving LSTM cells with a from-scratch autodiff core.

Arrays are float64 NumPy arrays; datasets are dicts with ``mass``, ``aux``,
``targets`` and a regenerating ``descriptor``.
"""

from ._mclstm import (
    ContractError,
    DimensionError,
    DomainError,
    Model,
    ablation_suite,
    check_conservation,
    conservation_suite,
    gen_addition,
    gen_addition_scenario,
    gradcheck,
    load_model,
    markov_suite,
    pendulum_series,
    random_column_stochastic,
    regenerate,
    run_pendulum,
    spectral_norm,
    stationary_distribution,
    train,
    variants,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "DomainError",
    "Model",
    "ablation_suite",
    "check_conservation",
    "conservation_suite",
    "gen_addition",
    "gen_addition_scenario",
    "gradcheck",
    "load_model",
    "markov_suite",
    "pendulum_series",
    "random_column_stochastic",
    "regenerate",
    "run_pendulum",
    "spectral_norm",
    "stationary_distribution",
    "train",
    "variants",
]
