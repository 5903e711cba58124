"""Covariance-matrix algebra for Gaussian states.

Conventions used throughout the package:

* quadratures are ordered ``(q1, p1, q2, p2, ...)``;
* shot-noise units, so the vacuum covariance matrix is the identity;
* a coherent amplitude ``nu`` corresponds to the mean ``(2 Re nu, 2 Im nu)``.

Mode indices are zero-based.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

SYMMETRY_TOL = 1e-12
PHYSICALITY_TOL = 1e-9
PINV_TOL = 1e-12


class CovarianceError(ValueError):
    """Raised for malformed covariance matrices (shape, symmetry, NaN)."""


class UnphysicalCovarianceError(CovarianceError):
    """Raised when a symplectic eigenvalue lies below 1 beyond tolerance."""


# -- physicality audit ------------------------------------------------------

_audit_logs: list["AuditLog"] = []


class AuditLog:
    """Smallest symplectic eigenvalue of every CovarianceMatrix built while active.

    Matrices are buffered per size and their spectra computed in batches,
    which keeps the audit cheap inside long scans.
    """

    batch = 4096

    def __init__(self):
        self._pending: dict[int, list[np.ndarray]] = {}
        self._nu: list[np.ndarray] = []
        self._modes: list[np.ndarray] = []

    def record(self, m: np.ndarray) -> None:
        buf = self._pending.setdefault(m.shape[0], [])
        buf.append(m)
        if len(buf) >= self.batch:
            self._flush_size(m.shape[0])

    def _flush_size(self, size: int) -> None:
        buf = self._pending.pop(size, [])
        if buf:
            self._nu.append(_raw_symplectic_values(np.stack(buf))[:, 0])
            self._modes.append(np.full(len(buf), size // 2))

    def flush(self) -> None:
        for size in list(self._pending):
            self._flush_size(size)

    @property
    def nu_min(self) -> np.ndarray:
        self.flush()
        return np.concatenate(self._nu) if self._nu else np.empty(0)

    @property
    def n_modes(self) -> np.ndarray:
        self.flush()
        return np.concatenate(self._modes) if self._modes else np.empty(0, dtype=int)

    @property
    def count(self) -> int:
        return len(self.nu_min)

    def violations(self, tol: float = PHYSICALITY_TOL) -> np.ndarray:
        """Indices of the recorded matrices with ``nu_min < 1 - tol``."""
        return np.flatnonzero(self.nu_min < 1.0 - tol)

    def worst(self) -> float:
        nu = self.nu_min
        return float(nu.min()) if len(nu) else float("nan")


@contextmanager
def physicality_audit() -> Iterator[AuditLog]:
    """Record the physicality of every covariance matrix created in the block."""
    log = AuditLog()
    _audit_logs.append(log)
    try:
        yield log
    finally:
        _audit_logs.remove(log)


# -- types ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Immutable ``2n x 2n`` real symmetric covariance matrix.

    Construction checks shape, finiteness and symmetry. Physicality
    (``nu >= 1``) is exposed through :meth:`is_physical` and enforced by
    :func:`symplectic_spectrum`.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2 or m.shape[0] == 0:
            raise CovarianceError(f"expected a 2n x 2n matrix, got shape {m.shape}")
        scale = np.abs(m).max()
        if not np.isfinite(scale):
            raise CovarianceError("covariance matrix has non-finite entries")
        asym = np.abs(m - m.T).max()
        if asym > SYMMETRY_TOL * max(1.0, scale):
            raise CovarianceError("covariance matrix is not symmetric")
        if asym:
            m = 0.5 * (m + m.T)
        object.__setattr__(self, "matrix", m)
        self._seal()

    def _seal(self):
        m = self.matrix
        m.flags.writeable = False
        for log in _audit_logs:
            log.record(m)

    @classmethod
    def _trusted(cls, m: np.ndarray) -> "CovarianceMatrix":
        """Wrap a matrix produced by an operation of this module; skips validation."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "matrix", 0.5 * (m + m.T))
        obj._seal()
        return obj

    @property
    def n_modes(self) -> int:
        return self.matrix.shape[0] // 2

    def block(self, i: int, j: int | None = None) -> np.ndarray:
        """2x2 block between modes ``i`` and ``j`` (defaults to ``j = i``)."""
        j = i if j is None else j
        return self.matrix[2 * i:2 * i + 2, 2 * j:2 * j + 2].copy()

    def is_physical(self, tol: float = PHYSICALITY_TOL) -> bool:
        return bool(_raw_symplectic_values(self.matrix)[0] >= 1.0 - tol)

    def allclose(self, other: "CovarianceMatrix", atol: float = 1e-10) -> bool:
        return self.matrix.shape == other.matrix.shape and np.allclose(
            self.matrix, other.matrix, rtol=0.0, atol=atol
        )

    def __array__(self, dtype=None, copy=None):
        return np.array(self.matrix, dtype=dtype)

    def __repr__(self) -> str:
        return f"CovarianceMatrix(n_modes={self.n_modes})"


@dataclass(frozen=True, eq=False)
class GaussianState:
    mean: np.ndarray
    cm: CovarianceMatrix

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        if mean.shape[0] != 2 * self.cm.n_modes:
            raise CovarianceError(
                f"mean has length {mean.shape[0]}, expected {2 * self.cm.n_modes}"
            )
        mean.flags.writeable = False
        object.__setattr__(self, "mean", mean)

    @property
    def n_modes(self) -> int:
        return self.cm.n_modes

    @classmethod
    def zero_mean(cls, cm: CovarianceMatrix) -> "GaussianState":
        return cls(np.zeros(2 * cm.n_modes), cm)


# -- constructors -----------------------------------------------------------


@lru_cache(maxsize=None)
def omega(n: int) -> np.ndarray:
    """Symplectic form for ``n`` modes in (q, p) ordering (read-only)."""
    om = np.kron(np.eye(n), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    om.flags.writeable = False
    return om


def vacuum_cm(n: int = 1) -> CovarianceMatrix:
    return CovarianceMatrix(np.eye(2 * n))


def thermal_cm(omega_: float) -> CovarianceMatrix:
    """Single-mode thermal state with variance ``omega_ >= 1``."""
    return CovarianceMatrix(omega_ * np.eye(2))


def epr_cm(mu: float) -> CovarianceMatrix:
    """Two-mode squeezed vacuum ``[[mu I, s Z], [s Z, mu I]]``, ``s = sqrt(mu^2 - 1)``."""
    if mu < 1.0:
        raise ValueError(f"EPR variance must be >= 1, got {mu}")
    s = np.sqrt((mu - 1.0) * (mu + 1.0))
    m = mu * np.eye(4)
    m[0, 2] = m[2, 0] = s
    m[1, 3] = m[3, 1] = -s
    return CovarianceMatrix(m)


# -- mode bookkeeping -------------------------------------------------------


def _quad_index(modes: Iterable[int]) -> list[int]:
    return [k for m in modes for k in (2 * m, 2 * m + 1)]


def _check_modes(n: int, modes: Iterable[int]) -> list[int]:
    modes = list(modes)
    for m in modes:
        if not 0 <= m < n:
            raise IndexError(f"mode index {m} out of range for {n} modes")
    return modes


def tensor_product(v1: CovarianceMatrix, v2: CovarianceMatrix) -> CovarianceMatrix:
    """Block-diagonal CM of two independent systems, modes of ``v1`` first."""
    a, b = v1.matrix, v2.matrix
    out = np.zeros((a.shape[0] + b.shape[0],) * 2)
    out[:a.shape[0], :a.shape[0]] = a
    out[a.shape[0]:, a.shape[0]:] = b
    return CovarianceMatrix._trusted(out)


def select_modes(v: CovarianceMatrix, modes: Sequence[int]) -> CovarianceMatrix:
    """Principal submatrix on ``modes``, in the order given (also used to reorder)."""
    modes = _check_modes(v.n_modes, modes)
    if len(set(modes)) != len(modes):
        raise ValueError(f"repeated mode in {modes}")
    idx = _quad_index(modes)
    return CovarianceMatrix._trusted(v.matrix[idx][:, idx])


def trace_out(v: CovarianceMatrix, modes: Iterable[int]) -> CovarianceMatrix:
    """Discard ``modes``; kept modes keep their relative order."""
    drop = set(_check_modes(v.n_modes, modes))
    keep = [m for m in range(v.n_modes) if m not in drop]
    if not keep:
        raise ValueError("cannot trace out every mode")
    return select_modes(v, keep)


@lru_cache(maxsize=256)
def beamsplitter_matrix(n: int, i: int, j: int, transmissivity: float) -> np.ndarray:
    """Symplectic matrix of a beam splitter on modes ``i, j`` (read-only)."""
    if i == j:
        raise ValueError("beam splitter needs two distinct modes")
    _check_modes(n, (i, j))
    if not 0.0 < transmissivity <= 1.0:
        raise ValueError(f"transmissivity must lie in (0, 1], got {transmissivity}")
    t, r = np.sqrt(transmissivity), np.sqrt(1.0 - transmissivity)
    s = np.eye(2 * n)
    for k in (0, 1):
        qi, qj = 2 * i + k, 2 * j + k
        s[qi, qi], s[qi, qj] = t, r
        s[qj, qi], s[qj, qj] = -r, t
    s.flags.writeable = False
    return s


def apply_symplectic(v: CovarianceMatrix, s: np.ndarray) -> CovarianceMatrix:
    return CovarianceMatrix._trusted(s @ v.matrix @ s.T)


def apply_beamsplitter(
    v: CovarianceMatrix, i: int, j: int, transmissivity: float
) -> CovarianceMatrix:
    """Mix modes ``i`` and ``j``: ``x_i -> sqrt(t) x_i + sqrt(1-t) x_j``,
    ``x_j -> -sqrt(1-t) x_i + sqrt(t) x_j`` for both quadratures."""
    return apply_symplectic(v, beamsplitter_matrix(v.n_modes, i, j, transmissivity))


def add_classical_noise(
    v: CovarianceMatrix, modes: Sequence[int], noise: np.ndarray
) -> CovarianceMatrix:
    """Random Gaussian displacements with covariance ``noise`` on ``modes``."""
    idx = _quad_index(_check_modes(v.n_modes, modes))
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (len(idx), len(idx)):
        raise ValueError(f"noise matrix must be {len(idx)}x{len(idx)}")
    m = v.matrix.copy()
    m[np.ix_(idx, idx)] += noise
    return CovarianceMatrix(m)


# -- spectra and entropies --------------------------------------------------


def _raw_symplectic_values(m: np.ndarray) -> np.ndarray:
    """Sorted symplectic eigenvalues without clamping or validation.

    Accepts a single ``2n x 2n`` matrix or a stack ``(..., 2n, 2n)``.
    """
    n = m.shape[-1] // 2
    if n == 1:
        det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
        return np.sqrt(np.abs(det))[..., None]
    om = omega(n)
    try:
        # L^T (i Omega) L is Hermitian and similar to i Omega V
        chol = np.linalg.cholesky(m)
        ev = np.linalg.eigvalsh(1j * (np.swapaxes(chol, -1, -2) @ om @ chol))
        nu = np.sort(np.abs(ev), axis=-1)
    except np.linalg.LinAlgError:
        if m.ndim > 2:
            # one bad matrix should not push the whole stack onto the slow path
            flat = m.reshape(-1, 2 * n, 2 * n)
            return np.stack([_raw_symplectic_values(x) for x in flat]).reshape(m.shape[:-2] + (n,))
        nu = np.sort(np.abs(np.linalg.eigvals(om @ m)), axis=-1)
    return nu[..., ::2]


def rounding_tolerance(m: np.ndarray) -> float:
    """Attainable accuracy of a computed symplectic eigenvalue near 1.

    The eigenvalues of a stored CM are only defined up to roughly
    ``eps * cond(V)``; a two-mode squeezed state of variance ``mu`` has
    ``cond ~ 4 mu^2``.
    """
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(m)
    if not np.isfinite(cond):
        return np.inf
    return max(PHYSICALITY_TOL, 8.0 * np.finfo(float).eps * cond)


def symplectic_spectrum(v: CovarianceMatrix) -> np.ndarray:
    """Symplectic eigenvalues of ``v``, ascending, one per mode.

    Values within ``1e-9`` below 1 are clamped to 1. For ill-conditioned
    matrices (large squeezing) the allowance widens to the rounding scale
    of the matrix, see :func:`rounding_tolerance`; anything lower raises
    :class:`UnphysicalCovarianceError`.
    """
    nu = _raw_symplectic_values(v.matrix)
    if nu[0] < 1.0 - PHYSICALITY_TOL and nu[0] < 1.0 - rounding_tolerance(v.matrix):
        raise UnphysicalCovarianceError(
            f"symplectic eigenvalue {nu[0]:.12g} violates the uncertainty principle"
        )
    return np.maximum(nu, 1.0)


def entropy_h(x: float) -> float:
    """Entropy (bits) of a thermal mode with symplectic eigenvalue ``x``."""
    if not np.isfinite(x):
        raise ValueError(f"entropy_h needs a finite argument, got {x}")
    if x < 1.0 - PHYSICALITY_TOL:
        raise ValueError(f"entropy_h needs x >= 1, got {x}")
    if x <= 1.0:
        return 0.0
    # (x+1)/2 log2((x+1)/(x-1)) + log2((x-1)/2), stable for large x
    return float(
        (0.5 * (x + 1.0) * np.log1p(2.0 / (x - 1.0)) + np.log(0.5 * (x - 1.0))) / np.log(2.0)
    )


def von_neumann_entropy(v: CovarianceMatrix) -> float:
    return float(sum(entropy_h(nu) for nu in symplectic_spectrum(v)))


def partial_transpose(v: CovarianceMatrix, party: Iterable[int]) -> np.ndarray:
    """Momentum sign flip on ``party``, as a congruence. Returns a plain array
    since the result is generally not a physical CM."""
    party = _check_modes(v.n_modes, party)
    d = np.ones(2 * v.n_modes)
    for m in party:
        d[2 * m + 1] = -1.0
    return d[:, None] * v.matrix * d[None, :]


def ppt_min_eigenvalue(v: CovarianceMatrix, party: Iterable[int]) -> float:
    """Smallest symplectic eigenvalue of the partial transpose over ``party``.

    Below 1 certifies entanglement across ``party | rest``; for splits with
    one mode on either side, a value ``>= 1`` certifies separability.
    """
    party = set(party)
    if not party or len(party) >= v.n_modes:
        raise ValueError("party must be a nonempty proper subset of the modes")
    return float(_raw_symplectic_values(partial_transpose(v, party))[0])


def log_negativity(v: CovarianceMatrix, party: Iterable[int]) -> float:
    return max(0.0, -float(np.log2(ppt_min_eigenvalue(v, party))))


# -- measurements -----------------------------------------------------------


def _split(state: GaussianState, mode: int):
    _check_modes(state.n_modes, (mode,))
    keep = _quad_index(m for m in range(state.n_modes) if m != mode)
    meas = _quad_index((mode,))
    v = state.cm.matrix
    rows = v[keep]
    return (
        rows[:, keep],
        v[meas][:, meas],
        rows[:, meas],
        state.mean[keep],
        state.mean[meas],
    )


def condition_on_homodyne(
    state: GaussianState, mode: int, quadrature: str, outcome: float = 0.0
) -> GaussianState:
    """Project ``mode`` onto a ``"q"`` or ``"p"`` eigenstate with value ``outcome``.

    The conditional CM ``A - C (P B P)^+ C^T`` does not depend on the outcome;
    the mean shifts linearly with it. The measured mode is removed.
    """
    if quadrature not in ("q", "p"):
        raise ValueError(f"quadrature must be 'q' or 'p', got {quadrature!r}")
    if state.n_modes < 2:
        raise ValueError("homodyne conditioning needs at least two modes")
    a, b, c, xa, xb = _split(state, mode)
    k = 0 if quadrature == "q" else 1
    proj_inv = np.zeros((2, 2))
    if b[k, k] > PINV_TOL:
        proj_inv[k, k] = 1.0 / b[k, k]
    r = np.zeros(2)
    r[k] = outcome
    gain = c @ proj_inv
    return GaussianState(xa + gain @ (r - xb), CovarianceMatrix._trusted(a - gain @ c.T))


def condition_on_heterodyne(
    state: GaussianState, mode: int, outcome: complex = 0j
) -> GaussianState:
    """Condition on a heterodyne outcome ``outcome = q + i p`` on ``mode``."""
    if state.n_modes < 2:
        raise ValueError("heterodyne conditioning needs at least two modes")
    a, b, c, xa, xb = _split(state, mode)
    gain = c @ np.linalg.inv(b + np.eye(2))
    r = np.array([np.real(outcome), np.imag(outcome)])
    return GaussianState(xa + gain @ (r - xb), CovarianceMatrix._trusted(a - gain @ c.T))


def coherent_fidelity(state: GaussianState, target_mean) -> float:
    """Fidelity between a one-mode Gaussian state and a coherent state."""
    if state.n_modes != 1:
        raise ValueError("coherent_fidelity takes a single-mode state")
    delta = state.mean - np.asarray(target_mean, dtype=float)
    s = state.cm.matrix + np.eye(2)
    expo = -0.5 * delta @ np.linalg.solve(s, delta)
    return float(2.0 * np.exp(expo) / np.sqrt(np.linalg.det(s)))
