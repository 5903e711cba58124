"""Continuous-variable quantum relay in a correlated Gaussian environment."""

from .environment import (
    AdditiveEnvironmentParams,
    EnvClassification,
    EnvironmentParams,
    KappaPair,
    UnphysicalEnvironmentError,
    additive_kappas,
    classify,
    eb_threshold,
    env_mutual_info,
    environment_cm,
    kappas,
)
from .gaussian import (
    CovarianceMatrix,
    GaussianState,
    UnphysicalCovarianceError,
    physicality_audit,
    symplectic_spectrum,
)
from .relay import (
    EntanglementStructure,
    NetworkState,
    ProtocolMetrics,
    additive_metrics,
    bell_condition,
    build_network_state,
    coherent_information,
    entanglement_structure,
    qkd_rate,
    qkd_rate_opt_bound,
    relay_metrics,
    swap_conditional_cm,
    swap_eps,
    teleport_fidelity,
)

__version__ = "0.1.0"
