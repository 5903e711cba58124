"""Correlated thermal environment of the two relay links.

Each link is a beam splitter of transmissivity ``tau`` mixing the travelling
mode with one of two ancillas ``E1, E2`` whose joint state has the CM
``[[omega I, G], [G, omega I]]`` with ``G = diag(g, g_prime)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import CovarianceMatrix, trace_out, von_neumann_entropy

BOUNDARY_TOL = 1e-9

QMINUS_PPLUS = "qminus-pplus"
QPLUS_PMINUS = "qplus-pminus"
BELL_CONVENTIONS = (QMINUS_PPLUS, QPLUS_PMINUS)


class UnphysicalEnvironmentError(ValueError):
    pass


@dataclass(frozen=True)
class EnvironmentParams:
    tau: float
    omega: float
    g: float = 0.0
    g_prime: float = 0.0


@dataclass(frozen=True)
class AdditiveEnvironmentParams:
    """Correlated classical displacement noise of variance ``n``."""

    n: float
    c: float = 0.0
    c_prime: float = 0.0

    def __post_init__(self):
        if not self.n >= 0.0:
            raise ValueError(f"additive noise variance must be >= 0, got {self.n}")
        for name in ("c", "c_prime"):
            val = getattr(self, name)
            if not -1.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1], got {val}")

    @property
    def entanglement_breaking(self) -> bool:
        return self.n > 2.0


@dataclass(frozen=True)
class KappaPair:
    kappa: float
    kappa_prime: float

    @property
    def eps_opt(self) -> float:
        return float(np.sqrt(self.kappa * self.kappa_prime))


@dataclass(frozen=True)
class EnvClassification:
    physical: bool
    separable: bool
    entanglement_breaking: bool


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"transmissivity must lie in (0, 1), got {tau}")


def bona_fide_violation(omega: float, g: float, g_prime: float) -> str | None:
    """Name of the first violated bona-fide inequality, or None."""
    if omega < 1.0 - BOUNDARY_TOL:
        return f"omega = {omega} < 1"
    if not abs(g) < omega:
        return f"|g| = {abs(g)} >= omega = {omega}"
    if not abs(g_prime) < omega:
        return f"|g'| = {abs(g_prime)} >= omega = {omega}"
    lhs = omega * abs(g + g_prime)
    rhs = omega**2 + g * g_prime - 1.0
    if lhs > rhs + BOUNDARY_TOL:
        return f"omega|g+g'| = {lhs:.6g} > omega^2 + g g' - 1 = {rhs:.6g}"
    return None


def is_separable_env(omega: float, g: float, g_prime: float) -> bool:
    lhs = omega * abs(g - g_prime)
    rhs = omega**2 - g * g_prime - 1.0
    return lhs <= rhs + BOUNDARY_TOL


def environment_cm(omega: float, g: float, g_prime: float) -> CovarianceMatrix:
    """Normal-form CM of the ancillas; raises on unphysical parameters."""
    bad = bona_fide_violation(omega, g, g_prime)
    if bad is not None:
        raise UnphysicalEnvironmentError(f"unphysical environment: {bad}")
    m = omega * np.eye(4)
    m[0, 2] = m[2, 0] = g
    m[1, 3] = m[3, 1] = g_prime
    return CovarianceMatrix(m)


def eb_threshold(tau: float) -> float:
    """Thermal variance above which each link is entanglement breaking."""
    _check_tau(tau)
    return (1.0 + tau) / (1.0 - tau)


def classify(env: EnvironmentParams) -> EnvClassification:
    """Physical / separable / entanglement-breaking flags. Never raises."""
    physical = bona_fide_violation(env.omega, env.g, env.g_prime) is None
    separable = physical and is_separable_env(env.omega, env.g, env.g_prime)
    try:
        eb = env.omega > eb_threshold(env.tau)
    except ValueError:
        eb = False
    return EnvClassification(physical, separable, eb)


def env_mutual_info(omega: float, g: float, g_prime: float) -> float:
    """Quantum mutual information (bits) between the two ancillas."""
    v = environment_cm(omega, g, g_prime)
    return (
        von_neumann_entropy(trace_out(v, [1]))
        + von_neumann_entropy(trace_out(v, [0]))
        - von_neumann_entropy(v)
    )


def env_symplectic_closed_form(omega: float, g: float, g_prime: float) -> tuple[float, float]:
    return (
        float(np.sqrt((omega + g) * (omega + g_prime))),
        float(np.sqrt((omega - g) * (omega - g_prime))),
    )


def kappas(env: EnvironmentParams, bell: str = QMINUS_PPLUS) -> KappaPair:
    """Effective noise of the q and p Bell-detection channels.

    For the ``qplus-pminus`` detection the correlations enter with the
    opposite sign, which mirrors every region through the origin.
    """
    _check_tau(env.tau)
    if bell not in BELL_CONVENTIONS:
        raise ValueError(f"unknown Bell convention {bell!r}")
    sign = 1.0 if bell == QMINUS_PPLUS else -1.0
    pre = 1.0 / env.tau - 1.0
    return KappaPair(pre * (env.omega - sign * env.g), pre * (env.omega + sign * env.g_prime))


def additive_kappas(add: AdditiveEnvironmentParams, bell: str = QMINUS_PPLUS) -> KappaPair:
    """Limit of :func:`kappas` for ``tau -> 1`` at fixed ``n, c, c'``."""
    if bell not in BELL_CONVENTIONS:
        raise ValueError(f"unknown Bell convention {bell!r}")
    sign = 1.0 if bell == QMINUS_PPLUS else -1.0
    return KappaPair(add.n * (1.0 - sign * add.c), add.n * (1.0 + sign * add.c_prime))


def additive_noise_cm(add: AdditiveEnvironmentParams) -> np.ndarray:
    """Classical CM of the displacements added to the two travelling modes."""
    eye = np.eye(2)
    cc = np.diag([add.c, add.c_prime])
    return add.n * np.block([[eye, cc], [cc, eye]])


def thermal_approximant(add: AdditiveEnvironmentParams, delta: float) -> EnvironmentParams:
    """Thermal environment at ``tau = 1 - delta`` approaching ``add`` as delta -> 0."""
    omega = add.n / delta
    return EnvironmentParams(1.0 - delta, omega, add.c * (omega - 1.0), add.c_prime * (omega - 1.0))
