"""Fermionic Fock space in the Jordan-Wigner realization.

Basis states are bit strings; mode 0 is the most significant bit, so the
ordering agrees with ``kron`` (``a_0`` acts on the leftmost factor).  A set
bit means the mode is occupied.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import FaithfulnessError, ResourceError, ShapeError
from .matrixcore import DensityMatrix, HermitianOperator, as_array, kron_all

DEFAULT_MAX_MODES = 12
DEFAULT_T_EPS = 1e-12

_LOWER = np.array([[0.0, 1.0], [0.0, 0.0]])
_Z = np.diag([1.0, -1.0])
_I2 = np.eye(2)


@dataclass(frozen=True)
class CarBasis:
    """Annihilation operators ``a_0 ... a_{n-1}`` on ``2**n`` dimensions.

    The dense annihilators are built lazily; second quantization works
    directly on occupation bit strings and never needs them.
    """

    n_modes: int

    @property
    def dim(self) -> int:
        return 1 << self.n_modes

    @cached_property
    def annihilators(self) -> list[np.ndarray]:
        n = self.n_modes
        return [
            kron_all([_Z] * x + [_LOWER] + [_I2] * (n - 1 - x)).real for x in range(n)
        ]

    def a(self, x: int) -> np.ndarray:
        return self.annihilators[x]

    def adag(self, x: int) -> np.ndarray:
        return self.annihilators[x].T

    @cached_property
    def occupations(self) -> np.ndarray:
        """``occ[i, x]`` is 1 when mode ``x`` is occupied in basis state ``i``."""
        idx = np.arange(self.dim)
        shifts = self.n_modes - 1 - np.arange(self.n_modes)
        return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int64)

    @cached_property
    def number(self) -> np.ndarray:
        """Diagonal of the total number operator."""
        return self.occupations.sum(axis=1)

    def bit(self, x: int) -> int:
        return 1 << (self.n_modes - 1 - x)


def jordan_wigner(n: int, max_modes: int = DEFAULT_MAX_MODES) -> CarBasis:
    if n < 1:
        raise ValueError("need at least one mode")
    if n > max_modes:
        raise ResourceError(f"{n} modes exceed the budget of {max_modes}")
    return CarBasis(n)


def car_defect(basis: CarBasis) -> float:
    """Largest entrywise violation of the canonical anticommutation relations."""
    n, I = basis.n_modes, np.eye(basis.dim)
    worst = 0.0
    for x in range(n):
        ax = basis.a(x)
        for y in range(n):
            ay = basis.a(y)
            anti_mixed = ax @ ay.T + ay.T @ ax - (I if x == y else 0.0)
            anti_same = ax @ ay + ay @ ax
            worst = max(worst, np.abs(anti_mixed).max(), np.abs(anti_same).max())
    return float(worst)


def _hopping_action(basis: CarBasis, x: int, y: int):
    """Action of ``a_x^dag a_y`` on all basis states: (source, target, sign)."""
    idx = np.arange(basis.dim)
    occ = basis.occupations
    bx, by = basis.bit(x), basis.bit(y)
    if x == y:
        src = idx[(idx & by) != 0]
        return src, src, np.ones(len(src))
    ok = ((idx & by) != 0) & ((idx & bx) == 0)
    src = idx[ok]
    # sign: modes strictly before y in the source, then strictly before x after removing y
    before_y = occ[src, :y].sum(axis=1)
    mid = src ^ by
    occ_mid = occ[src].copy()
    occ_mid[:, y] = 0
    before_x = occ_mid[:, :x].sum(axis=1)
    sign = np.where((before_y + before_x) % 2 == 0, 1.0, -1.0)
    return src, mid | bx, sign


def dgamma(c, n_modes: int | CarBasis) -> np.ndarray:
    """Second quantization ``sum_{x,y} c[x, y] a_x^dag a_y`` (any square ``c``)."""
    basis = n_modes if isinstance(n_modes, CarBasis) else CarBasis(int(n_modes))
    c = as_array(c)
    n = basis.n_modes
    if c.shape != (n, n):
        raise ShapeError(f"one-particle operator of shape {c.shape} on {n} modes")
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    for x, y in zip(*np.nonzero(c)):
        src, dst, sign = _hopping_action(basis, int(x), int(y))
        out[dst, src] += c[x, y] * sign
    return out


def second_quantize(c, basis: CarBasis, label: str = "dGamma") -> HermitianOperator:
    """``dGamma(c)`` for Hermitian ``c``; its norm is bounded by the trace norm of ``c``."""
    return HermitianOperator(dgamma(c, basis), label)


def number_operator(basis: CarBasis) -> np.ndarray:
    return np.diag(basis.number.astype(complex))


def one_particle_log(T, eps: float = DEFAULT_T_EPS) -> np.ndarray:
    """``k_T = log(T (1 - T)^{-1})``, requiring ``eps < T < 1 - eps``."""
    T = HermitianOperator(as_array(T), "T").entries
    t, U = np.linalg.eigh(T)
    if t.min() <= eps or t.max() >= 1.0 - eps:
        raise FaithfulnessError(
            f"one-particle density must satisfy 0 < T < 1 (spectrum in [{t.min():.3e}, {t.max():.3e}])"
        )
    return (U * np.log(t / (1.0 - t))) @ U.conj().T


def quasifree_density(T, basis: CarBasis, eps: float = DEFAULT_T_EPS) -> DensityMatrix:
    """Gauge-invariant quasi-free state with two-point function ``T``.

    ``rho = exp(dGamma(k_T)) / Z`` with ``k_T = log T(1-T)^{-1}``.  The
    exact logarithm ``dGamma(k_T) - log Z``, ``log Z = -sum log(1 - t_i)``,
    is kept on the returned state.
    """
    T = as_array(T)
    if T.shape != (basis.n_modes, basis.n_modes):
        raise ShapeError(f"T of shape {T.shape} on {basis.n_modes} modes")
    k = one_particle_log(T, eps)
    t = np.linalg.eigvalsh(0.5 * (T + T.conj().T))
    log_z = -np.sum(np.log1p(-t))
    log_rho = dgamma(k, basis) - log_z * np.eye(basis.dim)
    log_rho = 0.5 * (log_rho + log_rho.conj().T)
    w, U = np.linalg.eigh(log_rho)
    rho = (U * np.exp(w)) @ U.conj().T
    rho /= np.trace(rho).real
    return DensityMatrix.from_array(rho, log=log_rho, label="rho_T")


def two_point_function(rho, basis: CarBasis) -> np.ndarray:
    """``G[y, x] = tr(rho a_x^dag a_y)``; equals ``T`` for the quasi-free state of ``T``."""
    R = as_array(rho)
    n = basis.n_modes
    G = np.zeros((n, n), dtype=complex)
    for x in range(n):
        for y in range(n):
            src, dst, sign = _hopping_action(basis, x, y)
            # tr(rho A) with A[dst, src] = sign
            G[y, x] = np.sum(R[src, dst] * sign)
    return G


def gauge_invariance_defect(A, basis: CarBasis) -> float:
    """Operator norm of ``[A, N]``; zero exactly on the gauge-invariant algebra."""
    A = as_array(A)
    N = basis.number
    C = A * (N[None, :] - N[:, None])
    return float(np.linalg.norm(C, 2)) if C.any() else 0.0
