"""Deterministic approximations of Wigner resolvent chains and their Monte Carlo checks."""

__version__ = "0.1.0"

from .ncpart import (  # noqa: E402
    DomainError,
    NonCrossingGraph,
    Partition,
    SizeLimitError,
    catalan,
    connected_components,
    enumerate_ncg,
    enumerate_ncp,
    is_noncrossing,
    kreweras,
)
from .semicircle import (  # noqa: E402
    FunctionKernel,
    QuadratureError,
    SemicircleConfig,
    SpectralKernel,
    divided_difference,
    free_cumulant,
    phi,
    rho,
    sc_function_moment,
    sc_moment,
    stieltjes,
)
from .mchain import (  # noqa: E402
    ChainSpec,
    ChainValue,
    ConditioningError,
    m_avg,
    m_bound,
    m_matrix,
    m_matrix_q,
    ptr,
    recursion_residual,
    sc_chain_value,
)
from .ensemble import (  # noqa: E402
    WignerSample,
    chain_avg,
    chain_iso,
    fw_chain,
    heisenberg_pair,
    make_observables,
    psi_av,
    psi_iso,
    sample_wigner,
)
from .harness import (  # noqa: E402
    ExperimentConfig,
    ResultRecord,
    ScalingFit,
    fit_scaling,
    load,
    persist,
    run_experiment,
)

__all__ = [
    "__version__",
    "DomainError",
    "NonCrossingGraph",
    "Partition",
    "SizeLimitError",
    "catalan",
    "connected_components",
    "enumerate_ncg",
    "enumerate_ncp",
    "is_noncrossing",
    "kreweras",
    "FunctionKernel",
    "QuadratureError",
    "SemicircleConfig",
    "SpectralKernel",
    "divided_difference",
    "free_cumulant",
    "phi",
    "rho",
    "sc_function_moment",
    "sc_moment",
    "stieltjes",
    "ChainSpec",
    "ChainValue",
    "ConditioningError",
    "m_avg",
    "m_bound",
    "m_matrix",
    "m_matrix_q",
    "ptr",
    "recursion_residual",
    "sc_chain_value",
    "WignerSample",
    "chain_avg",
    "chain_iso",
    "fw_chain",
    "heisenberg_pair",
    "make_observables",
    "psi_av",
    "psi_iso",
    "sample_wigner",
    "ExperimentConfig",
    "ResultRecord",
    "ScalingFit",
    "fit_scaling",
    "load",
    "persist",
    "run_experiment",
]
