"""Relay protocols: network state, Bell detection and protocol figures of merit.

Mode order of the pre-relay network is ``(a, b, A', B')``: ``a`` and ``b``
are kept by Alice and Bob, ``A'`` and ``B'`` arrive at the relay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from itertools import combinations

import numpy as np

from .environment import (
    BELL_CONVENTIONS,
    QMINUS_PPLUS,
    AdditiveEnvironmentParams,
    EnvironmentParams,
    KappaPair,
    additive_kappas,
    additive_noise_cm,
    environment_cm,
    kappas,
)
from .gaussian import (
    CovarianceMatrix,
    GaussianState,
    add_classical_noise,
    apply_beamsplitter,
    beamsplitter_matrix,
    coherent_fidelity,
    condition_on_heterodyne,
    condition_on_homodyne,
    _raw_symplectic_values,
    entropy_h,
    epr_cm,
    ppt_min_eigenvalue,
    select_modes,
    tensor_product,
    trace_out,
    vacuum_cm,
    von_neumann_entropy,
)

MODE_NAMES = ("a", "b", "A'", "B'")
A, B, A_OUT, B_OUT = range(4)


def _check_mu(mu: float) -> None:
    if not mu >= 1.0:
        raise ValueError(f"mu must be >= 1, got {mu}")


def _check_bell(bell: str) -> None:
    if bell not in BELL_CONVENTIONS:
        raise ValueError(f"unknown Bell convention {bell!r}")


@dataclass(frozen=True)
class NetworkState:
    cm: CovarianceMatrix
    # effective transmissivity used to scale teleportation feed-forward
    tau: float = 1.0


@dataclass(frozen=True)
class EntanglementStructure:
    """PPT eigenvalues of every 1xN split of the network state.

    Keys are split labels such as ``"a|A'"`` or ``"a|bA'B'"``; a split is
    entangled when its eigenvalue is below 1.
    """

    bipartite: dict[str, float]
    tripartite: dict[str, float]
    quadripartite: dict[str, float]

    @staticmethod
    def flag(eigenvalue: float) -> bool:
        return eigenvalue < 1.0

    def flags(self, group: str) -> dict[str, bool]:
        return {k: self.flag(v) for k, v in getattr(self, group).items()}

    @property
    def any_quadripartite(self) -> bool:
        return any(self.flags("quadripartite").values())

    @property
    def all_quadripartite(self) -> bool:
        return all(self.flags("quadripartite").values())


@dataclass(frozen=True)
class ProtocolMetrics:
    mu: float
    mu_qkd: float
    eps: float
    eps_opt: float
    logneg: float
    fidelity: float
    fidelity_opt: float
    coherent_info: float
    coherent_info_asymptotic: float
    key_distill_bound: float
    qkd_rate: float
    qkd_rate_opt_bound: float
    recon_efficiency: float
    teleport_gain: float
    mutual_info_ab: float
    holevo_eve: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# -- network construction ---------------------------------------------------


def build_network_state(mu: float, env: EnvironmentParams) -> NetworkState:
    """Two EPR pairs whose halves A, B cross the correlated thermal links."""
    _check_mu(mu)
    v_env = environment_cm(env.omega, env.g, env.g_prime)
    if not 0.0 < env.tau < 1.0:
        raise ValueError(f"transmissivity must lie in (0, 1), got {env.tau}")
    # modes: a, A, b, B, E1, E2
    v = tensor_product(tensor_product(epr_cm(mu), epr_cm(mu)), v_env)
    v = apply_beamsplitter(v, 1, 4, env.tau)
    v = apply_beamsplitter(v, 3, 5, env.tau)
    v = trace_out(v, [4, 5])
    return NetworkState(select_modes(v, [0, 2, 1, 3]), env.tau)


def build_additive_network_state(mu: float, add: AdditiveEnvironmentParams) -> NetworkState:
    """Two EPR pairs whose halves A, B receive correlated classical noise."""
    _check_mu(mu)
    v = tensor_product(epr_cm(mu), epr_cm(mu))  # a, A, b, B
    v = add_classical_noise(v, [1, 3], additive_noise_cm(add))
    return NetworkState(select_modes(v, [0, 2, 1, 3]), 1.0)


def _split_label(party, rest) -> str:
    return "".join(MODE_NAMES[m] for m in party) + "|" + "".join(MODE_NAMES[m] for m in rest)


def _structure_splits():
    """(group, label, quadrature index, flipped row) for every tested split."""
    out = []

    def add(group, modes, k):
        m = modes[k]
        rest = [t for t in modes if t != m]
        idx = np.array([q for t in modes for q in (2 * t, 2 * t + 1)])
        out.append((group, _split_label([m], rest), np.ix_(idx, idx), 2 * k + 1))

    for pair in ((A, A_OUT), (B, B_OUT), (A, B)):
        add("bipartite", pair, 0)
    for trio in combinations(range(4), 3):
        for k in range(3):
            add("tripartite", trio, k)
    for k in range(4):
        add("quadripartite", (0, 1, 2, 3), k)
    return out


_SPLITS = _structure_splits()


def _partial_transposes(v: np.ndarray, group: str):
    sel = [s for s in _SPLITS if s[0] == group]
    size = sel[0][2][0].shape[0]
    stack = np.empty((len(sel), size, size))
    for n, (_, _, ix, row) in enumerate(sel):
        stack[n] = v[ix]
        stack[n, row, :] *= -1.0
        stack[n, :, row] *= -1.0
    return sel, stack


def entanglement_structure(ns: NetworkState) -> EntanglementStructure:
    """PPT test of the bipartite, tripartite (1x2) and quadripartite (1x3) splits.

    Every split has a single mode on one side, so the PPT criterion is
    necessary and sufficient for each of them.
    """
    groups = {"bipartite": {}, "tripartite": {}, "quadripartite": {}}
    for group in groups:
        sel, stack = _partial_transposes(ns.cm.matrix, group)
        nu = _raw_symplectic_values(stack)[:, 0]
        for (_, label, _, _), val in zip(sel, nu):
            groups[group][label] = float(val)
    return EntanglementStructure(**groups)


# -- Bell detection ---------------------------------------------------------


def _bell_detect(state: GaussianState, i: int, j: int, bell: str, gamma: complex) -> GaussianState:
    """Balanced BS on modes i, j followed by the two homodynes.

    After the BS, mode i carries ``(x_i + x_j)/sqrt2`` and mode j carries
    ``-(x_i - x_j)/sqrt2``; the outcome is ``gamma = q_- + i p_+`` (or
    ``q_+ + i p_-`` for the alternative detection).
    """
    _check_bell(bell)
    st = GaussianState(
        beamsplitter_matrix(state.n_modes, i, j, 0.5) @ state.mean,
        apply_beamsplitter(state.cm, i, j, 0.5),
    )
    if bell == QMINUS_PPLUS:
        first = (j, "q", -gamma.real)
        second = (i, "p", gamma.imag)
    else:
        first = (i, "q", gamma.real)
        second = (j, "p", -gamma.imag)
    hi, lo = sorted((first, second), key=lambda t: -t[0])
    st = condition_on_homodyne(st, hi[0], hi[1], hi[2])
    st = condition_on_homodyne(st, lo[0], lo[1], lo[2])
    return st


def bell_condition(
    ns: NetworkState, bell: str = QMINUS_PPLUS, gamma: complex = 0j
) -> GaussianState:
    """Conditional state of ``(a, b)`` after the relay's Bell detection."""
    return _bell_detect(GaussianState.zero_mean(ns.cm), A_OUT, B_OUT, bell, complex(gamma))


def _bell_functional(n: int, i: int, j: int, bell: str) -> np.ndarray:
    """Rows mapping the quadrature vector to ``(Re gamma, Im gamma)``."""
    sq = 1.0 / np.sqrt(2.0)
    rows = np.zeros((2, 2 * n))
    sign_q, sign_p = (-1.0, 1.0) if bell == QMINUS_PPLUS else (1.0, -1.0)
    rows[0, 2 * i], rows[0, 2 * j] = sq, sign_q * sq
    rows[1, 2 * i + 1], rows[1, 2 * j + 1] = sq, sign_p * sq
    return rows


# -- swapping ---------------------------------------------------------------


def swap_conditional_cm(mu: float, k: KappaPair) -> CovarianceMatrix:
    """Closed-form CM of ``(a, b)`` after swapping through noise ``k``."""
    _check_mu(mu)
    s = (mu - 1.0) * (mu + 1.0)
    cq = s / (2.0 * (mu + k.kappa))
    cp = s / (2.0 * (mu + k.kappa_prime))
    m = np.diag([mu - cq, mu - cp, mu - cq, mu - cp])
    m[0, 2] = m[2, 0] = cq
    m[1, 3] = m[3, 1] = -cp
    return CovarianceMatrix(m)


def swap_eps(mu: float, k: KappaPair) -> tuple[float, float, float]:
    """``(eps, eps_opt, log-negativity)`` of the swapped state."""
    _check_mu(mu)
    ka, kp = k.kappa, k.kappa_prime
    eps = math.sqrt((1.0 + mu * ka) * (1.0 + mu * kp) / ((mu + ka) * (mu + kp)))
    logneg = max(0.0, -math.log2(eps)) if eps > 0 else math.inf
    return eps, k.eps_opt, logneg


# -- teleportation ----------------------------------------------------------


def fidelity_opt(k: KappaPair) -> float:
    return 1.0 / math.sqrt((1.0 + k.kappa) * (1.0 + k.kappa_prime))


def teleport_output(
    mu: float,
    env: EnvironmentParams | AdditiveEnvironmentParams,
    gain: float = 1.0,
    bell: str = QMINUS_PPLUS,
    alpha: complex = 0j,
) -> GaussianState:
    """Outcome-averaged state of Bob's mode after teleporting ``|alpha>``.

    Alice's input rides on mode A, Bob's EPR pair sits on ``(b, B)``; both
    travelling modes cross the environment, the relay performs Bell
    detection and Bob displaces ``b`` by ``gain * sqrt(2/tau) * gamma``
    (after a pi phase flip for the ``qplus-pminus`` detection).
    """
    _check_mu(mu)
    _check_bell(bell)
    if gain < 0:
        raise ValueError("teleportation gain must be >= 0")
    x_in = np.array([2.0 * alpha.real, 2.0 * alpha.imag])
    if isinstance(env, AdditiveEnvironmentParams):
        tau = 1.0
        v = tensor_product(vacuum_cm(1), epr_cm(mu))  # A, b, B
        v = add_classical_noise(v, [0, 2], additive_noise_cm(env))
        mean = np.concatenate([x_in, np.zeros(4)])
    else:
        tau = env.tau
        v = tensor_product(tensor_product(vacuum_cm(1), epr_cm(mu)),
                           environment_cm(env.omega, env.g, env.g_prime))
        v = apply_beamsplitter(v, 0, 3, tau)  # A with E1
        v = apply_beamsplitter(v, 2, 4, tau)  # B with E2
        v = trace_out(v, [3, 4])
        mean = np.concatenate([np.sqrt(tau) * x_in, np.zeros(4)])
    # modes now: A', b, B'
    st = GaussianState(mean, v)
    st = GaussianState(st.mean[[2, 3, 0, 1, 4, 5]], select_modes(st.cm, [1, 0, 2]))
    # modes: b, A', B'
    funct = _bell_functional(3, 1, 2, bell)
    out_mean_bs = funct @ st.mean
    out_cov = funct @ st.cm.matrix @ funct.T
    base = _bell_detect(st, 1, 2, bell, complex(*out_mean_bs))
    # conditional mean of b moves with the outcome by Cov(b, gamma) Cov(gamma)^-1
    cond_gain = (st.cm.matrix[0:2] @ funct.T) @ np.linalg.inv(out_cov)

    flip = 1.0 if bell == QMINUS_PPLUS else -1.0
    total = flip * cond_gain + gain * math.sqrt(2.0 / tau) * np.eye(2)
    mean_out = flip * base.mean + gain * math.sqrt(2.0 / tau) * out_mean_bs
    cm_out = base.cm.matrix + total @ out_cov @ total.T
    return GaussianState(mean_out, CovarianceMatrix(cm_out))


def teleport_fidelity(
    mu: float,
    env: EnvironmentParams | AdditiveEnvironmentParams,
    gain: float = 1.0,
    bell: str = QMINUS_PPLUS,
) -> tuple[float, float]:
    """``(F, F_opt)`` for teleporting a coherent state (zero amplitude)."""
    out = teleport_output(mu, env, gain, bell)
    f = coherent_fidelity(out, np.zeros(2))
    if isinstance(env, AdditiveEnvironmentParams):
        k = additive_kappas(env, bell)
    else:
        k = kappas(env, bell)
    return f, fidelity_opt(k)


def teleport_fidelity_from_kappas(mu: float, k: KappaPair, gain: float = 1.0) -> float:
    """Closed-form teleportation fidelity at zero input amplitude."""
    _check_mu(mu)
    s = math.sqrt((mu - 1.0) * (mu + 1.0))
    base = mu + gain**2 * (1.0 + mu) - 2.0 * gain * s
    vq = base + 2.0 * gain**2 * k.kappa
    vp = base + 2.0 * gain**2 * k.kappa_prime
    return 2.0 / math.sqrt((vq + 1.0) * (vp + 1.0))


# -- distillation and key rates ---------------------------------------------


def coherent_information_of(v_ab: CovarianceMatrix, s_ab: float | None = None) -> float:
    """``S(b) - S(ab)`` in bits for a two-mode CM (``s_ab`` if already known)."""
    if s_ab is None:
        s_ab = von_neumann_entropy(v_ab)
    return von_neumann_entropy(trace_out(v_ab, [0])) - s_ab


def coherent_information(mu: float, k: KappaPair) -> tuple[float, float]:
    """``(I_C, asymptotic I_C)``; also the lower bound on the distillable key."""
    ic = coherent_information_of(swap_conditional_cm(mu, k))
    eo = k.eps_opt
    asym = -math.log2(math.e * eo) if eo > 0 else math.inf
    return ic, asym


def heterodyne_mutual_info(v_ab: CovarianceMatrix) -> float:
    """Mutual information (bits) between heterodyne outcomes on both modes."""
    gamma = v_ab.matrix + np.eye(4)
    det_a = np.linalg.det(gamma[:2, :2])
    det_b = np.linalg.det(gamma[2:, 2:])
    return float(0.5 * np.log2(det_a * det_b / np.linalg.det(gamma)))


def holevo_eve(
    v_ab: CovarianceMatrix, reconciliation: str = "reverse", s_ab: float | None = None
) -> float:
    """Eve's Holevo information on the reference party's heterodyne outcome."""
    if reconciliation == "reverse":
        ref = 1
    elif reconciliation == "direct":
        ref = 0
    else:
        raise ValueError(f"reconciliation must be 'reverse' or 'direct', got {reconciliation!r}")
    cond = condition_on_heterodyne(GaussianState.zero_mean(v_ab), ref)
    if s_ab is None:
        s_ab = von_neumann_entropy(v_ab)
    return s_ab - von_neumann_entropy(cond.cm)


def qkd_rate_of(
    xi: float, v_ab: CovarianceMatrix, reconciliation: str = "reverse", s_ab: float | None = None
):
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"reconciliation efficiency must lie in [0, 1], got {xi}")
    i_ab = heterodyne_mutual_info(v_ab)
    chi = holevo_eve(v_ab, reconciliation, s_ab)
    return xi * i_ab - chi, i_ab, chi


def qkd_rate(
    xi: float, mu: float, k: KappaPair, reconciliation: str = "reverse"
) -> tuple[float, float, float]:
    """``(R, I_AB, chi)`` of the practical heterodyne protocol, bits per use."""
    return qkd_rate_of(xi, swap_conditional_cm(mu, k), reconciliation)


def qkd_rate_opt_bound(k: KappaPair) -> float:
    """Asymptotic lower bound on the optimal rate; ``inf`` when eps_opt = 0."""
    eo = k.eps_opt
    if eo == 0.0:
        return math.inf
    return math.log2(fidelity_opt(k) / (math.e**2 * eo)) + entropy_h(1.0 + 2.0 * eo)


# -- bundles ----------------------------------------------------------------


def _metrics_from(
    v_ent: CovarianceMatrix,
    v_qkd: CovarianceMatrix,
    k: KappaPair,
    mu: float,
    mu_qkd: float,
    xi: float,
    fidelity: float,
    gain: float,
    eps: float | None = None,
) -> ProtocolMetrics:
    if eps is None:
        eps = ppt_min_eigenvalue(v_ent, [0])
    logneg = max(0.0, -math.log2(eps))
    s_ent = von_neumann_entropy(v_ent)
    ic = coherent_information_of(v_ent, s_ent)
    eo = k.eps_opt
    rate, i_ab, chi = qkd_rate_of(xi, v_qkd, s_ab=s_ent if v_qkd is v_ent else None)
    return ProtocolMetrics(
        mu=mu,
        mu_qkd=mu_qkd,
        eps=eps,
        eps_opt=eo,
        logneg=logneg,
        fidelity=fidelity,
        fidelity_opt=fidelity_opt(k),
        coherent_info=ic,
        coherent_info_asymptotic=-math.log2(math.e * eo) if eo > 0 else math.inf,
        key_distill_bound=ic,
        qkd_rate=rate,
        qkd_rate_opt_bound=qkd_rate_opt_bound(k),
        recon_efficiency=xi,
        teleport_gain=gain,
        mutual_info_ab=i_ab,
        holevo_eve=chi,
    )


def relay_metrics(
    mu: float,
    env: EnvironmentParams,
    xi: float = 1.0,
    mu_qkd: float | None = None,
    gain: float = 1.0,
    bell: str = QMINUS_PPLUS,
) -> ProtocolMetrics:
    """All protocol figures of merit for a thermal environment.

    ``mu`` drives the entanglement-based protocols, ``mu_qkd`` (default
    ``mu``) the modulation of the practical QKD protocol.
    """
    mu_qkd = mu if mu_qkd is None else mu_qkd
    k = kappas(env, bell)
    eps, _, _ = swap_eps(mu, k)
    fid, _ = teleport_fidelity(mu, env, gain, bell)
    v_ent = swap_conditional_cm(mu, k)
    v_qkd = v_ent if mu_qkd == mu else swap_conditional_cm(mu_qkd, k)
    return _metrics_from(v_ent, v_qkd, k, mu, mu_qkd, xi, fid, gain, eps)


def additive_metrics(
    xi: float,
    mu: float,
    add: AdditiveEnvironmentParams,
    path: str = "kappa",
    gain: float = 1.0,
    bell: str = QMINUS_PPLUS,
    mu_qkd: float | None = None,
) -> ProtocolMetrics:
    """Metrics for the correlated-additive environment.

    ``path="kappa"`` evaluates the closed forms at the limiting kappas;
    ``path="exact"`` adds the classical noise to the EPR pairs and runs the
    generic Bell-detection pipeline.
    """
    mu_qkd = mu if mu_qkd is None else mu_qkd
    k = additive_kappas(add, bell)
    if path == "kappa":
        eps, _, _ = swap_eps(mu, k)
        fid = teleport_fidelity_from_kappas(mu, k, gain)
        v_ent = swap_conditional_cm(mu, k)
        v_qkd = v_ent if mu_qkd == mu else swap_conditional_cm(mu_qkd, k)
        return _metrics_from(v_ent, v_qkd, k, mu, mu_qkd, xi, fid, gain, eps)
    if path == "exact":
        v = bell_condition(build_additive_network_state(mu, add), bell).cm
        v_qkd = bell_condition(build_additive_network_state(mu_qkd, add), bell).cm
        fid, _ = teleport_fidelity(mu, add, gain, bell)
        return _metrics_from(v, v_qkd, k, mu, mu_qkd, xi, fid, gain)
    raise ValueError(f"path must be 'kappa' or 'exact', got {path!r}")
