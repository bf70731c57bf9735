"""Heisenberg/Schroedinger evolution, the entropy production observable, the
accumulated perturbation ``Q_s``, the interaction cocycle and the entropy
balance.

Sign conventions: ``tau^t(A) = e^{itH} A e^{-itH}`` and the evolved state
``omega_s = omega o tau^s`` has density ``e^{-isH} rho e^{isH}``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import AccuracyError, PreconditionError, ResourceError
from .matrixcore import (
    DensityMatrix,
    HermitianOperator,
    as_array,
    commutator,
    op_norm,
)

DEFAULT_QUAD_TOL = 1e-10
FREE_INVARIANCE_TOL = 1e-10

# Mutation switch used by ``tmeplab validate --mutate``; never set in normal runs.
_STATE_SIGN = 1.0


@contextlib.contextmanager
def evolve_sign_flip():
    """Temporarily flip the sign of the Schroedinger evolution (mutation testing)."""
    global _STATE_SIGN
    old = _STATE_SIGN
    _STATE_SIGN = -old
    try:
        yield
    finally:
        _STATE_SIGN = old


@dataclass(frozen=True)
class Eigensystem:
    """Raw (unclustered) eigendecomposition used for exact time evolution."""

    energies: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, H) -> "Eigensystem":
        w, U = np.linalg.eigh(as_array(H))
        return cls(w, U)

    def to_basis(self, X) -> np.ndarray:
        U = self.vectors
        return U.conj().T @ as_array(X) @ U

    def from_basis(self, X) -> np.ndarray:
        U = self.vectors
        return U @ X @ U.conj().T

    def phases(self, t: float) -> np.ndarray:
        """Matrix ``exp(i t (E_j - E_k))``."""
        e = np.exp(1j * t * self.energies)
        return e[:, None] * e.conj()[None, :]

    def unitary(self, t: float) -> np.ndarray:
        """``e^{itH}``."""
        U = self.vectors
        return (U * np.exp(1j * t * self.energies)) @ U.conj().T

    def heisenberg(self, t: float, A) -> np.ndarray:
        return self.from_basis(self.to_basis(A) * self.phases(t))


def evolve_matrix(H, s: float, X) -> np.ndarray:
    """Schroedinger evolution ``e^{-isH} X e^{isH}`` (``H`` or its Eigensystem)."""
    es = H if isinstance(H, Eigensystem) else Eigensystem.of(H)
    return es.heisenberg(-_STATE_SIGN * s, X)


@dataclass(frozen=True)
class EvolutionSpec:
    """Total Hamiltonian ``H = H_fr + V`` together with a reference state."""

    H: HermitianOperator
    H_fr: HermitianOperator
    V: HermitianOperator
    rho: DensityMatrix

    def __post_init__(self):
        H, Hf, V = as_array(self.H), as_array(self.H_fr), as_array(self.V)
        scale = max(1.0, float(np.abs(H).max()))
        if np.abs(H - Hf - V).max() > 1e-12 * scale:
            raise ValueError("H must equal H_fr + V")

    @classmethod
    def build(cls, H_fr, V, rho: DensityMatrix) -> "EvolutionSpec":
        Hf, Vm = as_array(H_fr), as_array(V)
        return cls(
            H=HermitianOperator(Hf + Vm, "H"),
            H_fr=HermitianOperator(Hf, "H_fr"),
            V=HermitianOperator(Vm, "V"),
            rho=rho,
        )

    @property
    def dim(self) -> int:
        return self.H.dim

    @cached_property
    def eig(self) -> Eigensystem:
        return Eigensystem.of(self.H)

    @cached_property
    def eig_fr(self) -> Eigensystem:
        return Eigensystem.of(self.H_fr)

    @cached_property
    def free_invariance_defect(self) -> float:
        """``||[log rho, H_fr]||``; the Araki identity needs it to vanish."""
        return op_norm(commutator(self.rho.log_matrix, self.H_fr))


def heisenberg(spec: EvolutionSpec, t: float, A) -> np.ndarray:
    """``tau^t(A) = e^{itH} A e^{-itH}``."""
    return spec.eig.heisenberg(t, A)


def evolve_state(spec: EvolutionSpec, s: float) -> DensityMatrix:
    """Density of ``omega_s = omega o tau^s``.

    The exact logarithm is carried along by conjugation, never recomputed.
    """
    rho_s = evolve_matrix(spec.eig, s, spec.rho.matrix)
    log_s = evolve_matrix(spec.eig, s, spec.rho.log_matrix) if spec.rho.faithful else None
    rho_s = 0.5 * (rho_s + rho_s.conj().T)
    rho_s /= np.trace(rho_s).real
    return DensityMatrix.from_array(rho_s, log=log_s, label="rho_s")


def ep_observable(spec: EvolutionSpec) -> HermitianOperator:
    """Entropy production observable ``sigma = i[log rho, V]``."""
    spec.rho.require_faithful("reference state")
    return HermitianOperator(1j * commutator(spec.rho.log_matrix, spec.V), "sigma")


def adaptive_simpson(
    f: Callable[[float], np.ndarray | complex],
    a: float,
    b: float,
    tol: float,
    norm: Callable = np.abs,
    max_depth: int = 40,
    initial_panels: int = 8,
):
    """Adaptive composite Simpson rule with interval halving.

    The local estimate ``|S_2 - S_1| / 15`` on a panel of width ``w`` is
    held below ``tol * w / (b - a)``; accepted panels carry the Richardson
    correction.  Panels are summed left to right, so the result does not
    depend on evaluation order.

    Raises:
        AccuracyError: if a panel reaches ``max_depth`` halvings without
            meeting its share of the tolerance.
    """
    if a == b:
        return 0.0 * f(a)
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    length = b - a
    edges = np.linspace(a, b, initial_panels + 1)
    # each stack entry: (left, right, f(left), f(mid), f(right), whole, depth)
    pending = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        fl, fm, fr = f(lo), f(0.5 * (lo + hi)), f(hi)
        pending.append((lo, hi, fl, fm, fr, (hi - lo) / 6.0 * (fl + 4 * fm + fr), 0))
    pending.reverse()
    accepted = []
    while pending:
        lo, hi, fl, fm, fr, whole, depth = pending.pop()
        mid = 0.5 * (lo + hi)
        flm, frm = f(0.5 * (lo + mid)), f(0.5 * (mid + hi))
        left = (mid - lo) / 6.0 * (fl + 4 * flm + fm)
        right = (hi - mid) / 6.0 * (fm + 4 * frm + fr)
        err = norm(left + right - whole) / 15.0
        if err <= tol * (hi - lo) / length:
            accepted.append((lo, left + right + (left + right - whole) / 15.0))
            continue
        if depth + 1 >= max_depth:
            raise AccuracyError(
                f"quadrature tolerance {tol:g} not met on [{lo:.6g}, {hi:.6g}] after {max_depth} halvings"
            )
        pending.append((mid, hi, fm, frm, fr, right, depth + 1))
        pending.append((lo, mid, fl, flm, fm, left, depth + 1))
    accepted.sort(key=lambda item: item[0])
    total = accepted[0][1]
    for _, piece in accepted[1:]:
        total = total + piece
    return sign * total


def _frobenius(X) -> float:
    # Frobenius norm bounds the operator norm from above: conservative error control.
    return float(np.linalg.norm(X))


def accumulated_perturbation(
    spec: EvolutionSpec, s: float, quad_tol: float = DEFAULT_QUAD_TOL, sigma=None
) -> HermitianOperator:
    """``Q_s = int_0^s tau^{-t}(sigma) dt`` by adaptive Simpson quadrature."""
    sigma = ep_observable(spec) if sigma is None else sigma
    es = spec.eig
    sig = es.to_basis(sigma)
    sig = 0.5 * (sig + sig.conj().T)
    if s == 0 or not np.any(sig):
        return HermitianOperator(np.zeros_like(sig), "Q_s")
    gaps = es.energies[:, None] - es.energies[None, :]

    def integrand(t):
        return sig * np.exp(-1j * t * gaps)

    Q = es.from_basis(adaptive_simpson(integrand, 0.0, float(s), quad_tol, norm=_frobenius))
    # Hermitian up to accumulated roundoff of the panel sums
    return HermitianOperator(0.5 * (Q + Q.conj().T), "Q_s")


def _require_free_invariance(spec: EvolutionSpec) -> None:
    if spec.free_invariance_defect > FREE_INVARIANCE_TOL:
        raise PreconditionError(
            f"reference state is not invariant under the free dynamics "
            f"(||[log rho, H_fr]|| = {spec.free_invariance_defect:.3e})"
        )


def araki_identity_residual(spec: EvolutionSpec, s: float, quad_tol: float = DEFAULT_QUAD_TOL) -> float:
    """``||log rho_s - log rho - Q_s||`` in operator norm."""
    _require_free_invariance(spec)
    log_rho = spec.rho.log_matrix
    log_rho_s = evolve_state(spec, s).log_matrix
    Q = accumulated_perturbation(spec, s, quad_tol)
    return op_norm(log_rho_s - log_rho - Q.entries)


def interaction_cocycle(spec: EvolutionSpec, s: float) -> np.ndarray:
    """``Gamma_s = e^{isH} e^{-isH_fr}``."""
    return spec.eig.unitary(s) @ spec.eig_fr.unitary(-s)


def free_heisenberg(spec: EvolutionSpec, t: float, A) -> np.ndarray:
    return spec.eig_fr.heisenberg(t, A)


def relative_entropy(nu: DensityMatrix, rho: DensityMatrix) -> float:
    """``Ent(nu|rho) = tr nu (log rho - log nu)`` (non-positive)."""
    return float(np.real(np.trace(nu.matrix @ (rho.log_matrix - nu.log_matrix))))


def entropy_balance_terms(spec: EvolutionSpec, s: float, quad_tol: float = DEFAULT_QUAD_TOL):
    """Return ``(Ent(rho_s|rho), int_0^s tr(rho_t sigma) dt)``."""
    sigma = ep_observable(spec)
    ent = relative_entropy(evolve_state(spec, s), spec.rho)
    es = spec.eig
    r = es.to_basis(spec.rho.matrix)
    sg = es.to_basis(sigma).T  # tr(A B) = sum A_jk B_kj
    weights = r * sg
    gaps = es.energies[:, None] - es.energies[None, :]
    if s == 0 or not np.any(weights):
        return ent, 0.0

    def integrand(t):
        return complex(np.sum(weights * np.exp(-1j * t * gaps)))

    flux = adaptive_simpson(integrand, 0.0, float(s), quad_tol, norm=abs)
    return ent, float(np.real(flux))


def entropy_balance_residual(spec: EvolutionSpec, s: float, quad_tol: float = DEFAULT_QUAD_TOL) -> float:
    """``|Ent(rho_s|rho) + int_0^s omega_t(sigma) dt|``."""
    ent, flux = entropy_balance_terms(spec, s, quad_tol)
    return abs(ent + flux)


DEFAULT_SERIES_MAX_ORDER = 64


def _integration_matrix(nodes: np.ndarray) -> np.ndarray:
    """``S[i, m] = int_0^{x_i} l_m(u) du`` for the Lagrange basis on ``nodes`` in [0, 1]."""
    m = len(nodes)
    # work on [-1, 1] in the Legendre basis for conditioning
    y = 2.0 * nodes - 1.0
    Vand = np.polynomial.legendre.legvander(y, m - 1)
    inv = np.linalg.inv(Vand)
    S = np.zeros((m, m))
    for j in range(m):
        coeffs = np.zeros(m)
        coeffs[j] = 1.0
        integ = np.polynomial.legendre.legint(coeffs, lbnd=-1.0)
        S[:, j] = 0.5 * np.polynomial.legendre.legval(y, integ)
    return S @ inv


def cocycle_series(
    rho: DensityMatrix,
    Q_s,
    z: complex,
    order: int,
    degree: int | None = None,
    max_order: int = DEFAULT_SERIES_MAX_ORDER,
) -> np.ndarray:
    """Partial sum of the iterated-integral expansion of ``[D omega_s : D omega]_z``.

    The ``n``-th term is ``z^n`` times the integral over the ordered simplex
    ``0 <= th_1 <= ... <= th_n <= 1`` of ``A(th_1) ... A(th_n)`` with
    ``A(th) = rho^{th z} Q_s rho^{-th z}``.  Nested simplex integrals are
    evaluated by the Volterra recursion ``I_n(x) = int_0^x I_{n-1}(u) A(u) du``
    on Gauss-Legendre nodes, which integrates every nesting level with the
    same spectral accuracy.

    Raises:
        ResourceError: if ``order`` exceeds ``max_order``.
    """
    rho.require_faithful("reference state")
    if order < 0:
        raise ValueError("order must be non-negative")
    if order > max_order:
        raise ResourceError(f"series order {order} exceeds nesting budget {max_order}")
    lam, U = np.linalg.eigh(rho.log_matrix)
    Q = U.conj().T @ as_array(Q_s) @ U
    z = complex(z)
    dim = len(lam)
    if order == 0 or z == 0 or not np.any(Q):
        return np.eye(dim, dtype=complex)
    if degree is None:
        spread = float(lam.max() - lam.min())
        degree = int(min(256, max(24, np.ceil(1.2 * abs(z) * spread) + 24)))
    nodes, weights = np.polynomial.legendre.leggauss(degree)
    nodes, weights = 0.5 * (nodes + 1.0), 0.5 * weights
    S = _integration_matrix(nodes)
    gaps = lam[:, None] - lam[None, :]
    A = np.exp(z * nodes[:, None, None] * gaps[None, :, :]) * Q[None, :, :]
    I_prev = np.broadcast_to(np.eye(dim, dtype=complex), (degree, dim, dim))
    total = np.eye(dim, dtype=complex)
    zn = 1.0 + 0j
    for _ in range(order):
        integrand = I_prev @ A
        zn *= z
        total = total + zn * np.tensordot(weights, integrand, axes=(0, 0))
        I_prev = np.tensordot(S, integrand, axes=(1, 0))
    return U @ total @ U.conj().T
