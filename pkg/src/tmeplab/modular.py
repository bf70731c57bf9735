"""Standard-form modular objects at finite dimension.

GNS vectors are matrices ``X`` with inner product ``tr(X^dag Y)``; the cyclic
vector is ``Omega = rho^{1/2}``, the algebra acts by left multiplication and
its commutant by right multiplication.  ``Delta X = rho X rho^{-1}`` and
``J X = X^dag``.  Superoperators are applied structurally in the eigenbasis
of ``log rho`` and never stored as ``dim**2 x dim**2`` matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dynamics import Eigensystem, evolve_matrix
from .matrixcore import (
    DEFAULT_CLUSTERING_RTOL,
    DensityMatrix,
    SpectralDecomposition,
    as_array,
    spectral_from_eigh,
    trace_norm,
)


@dataclass(frozen=True)
class StandardForm:
    """Modular data of a faithful reference state.

    The modular spectrum is the clustered spectrum of ``log rho``; all
    powers ``rho^z`` are taken on the cluster values, so that the kernel of
    ``log Delta`` is exactly the set of matrices block-diagonal over the
    clusters.
    """

    rho: DensityMatrix
    spectral: SpectralDecomposition

    @classmethod
    def of(cls, rho: DensityMatrix, clustering_rtol: float = DEFAULT_CLUSTERING_RTOL) -> "StandardForm":
        rho.require_faithful("reference state")
        w, U = np.linalg.eigh(rho.log_matrix)
        return cls(rho=rho, spectral=spectral_from_eigh(w, U, clustering_rtol))

    @property
    def dim(self) -> int:
        return self.spectral.dim

    @cached_property
    def log_values(self) -> np.ndarray:
        """Cluster value of ``log rho`` for every eigenvector."""
        return self.spectral.eigenvalues

    @cached_property
    def modular_gaps(self) -> np.ndarray:
        lam = self.log_values
        return lam[:, None] - lam[None, :]

    @cached_property
    def same_cluster(self) -> np.ndarray:
        labels = self.spectral.labels
        return labels[:, None] == labels[None, :]

    def to_basis(self, X) -> np.ndarray:
        return self.spectral.to_basis(X)

    def from_basis(self, X) -> np.ndarray:
        return self.spectral.from_basis(X)

    def power(self, z: complex) -> np.ndarray:
        """``rho^z`` (principal branch)."""
        return self.spectral.apply(np.exp(complex(z) * self.log_values))

    @cached_property
    def sqrt(self) -> np.ndarray:
        return self.power(0.5)

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        return self.power(-0.5)

    @property
    def omega(self) -> np.ndarray:
        """Cyclic and separating vector ``rho^{1/2}``."""
        return self.sqrt

    def delta(self, X, z: complex = 1.0) -> np.ndarray:
        """``Delta^z X = rho^z X rho^{-z}``."""
        Xb = self.to_basis(X)
        return self.from_basis(Xb * np.exp(complex(z) * self.modular_gaps))

    @staticmethod
    def J(X) -> np.ndarray:
        return as_array(X).conj().T

    @staticmethod
    def inner(X, Y) -> complex:
        return complex(np.vdot(as_array(X), as_array(Y)))


@dataclass(frozen=True)
class CommutantElement:
    """Matrix ``b`` acting on GNS vectors by ``X -> X b``.

    Normalized so that ``tr(rho b b^dag) = 1``; the induced vector state is
    ``nu_b = rho^{1/2} b b^dag rho^{1/2}``.
    """

    b: np.ndarray
    residual: float = 0.0

    def state(self, sf: StandardForm) -> np.ndarray:
        v = sf.sqrt @ self.b
        return v @ v.conj().T

    def vector(self, sf: StandardForm) -> np.ndarray:
        """``B Omega``."""
        return sf.sqrt @ self.b

    def norm(self, sf: StandardForm) -> float:
        return float(np.real(np.trace(self.state(sf))))


def modular_flow(sf: StandardForm, theta: float, A) -> np.ndarray:
    """``varsigma^theta(A) = rho^{i theta} A rho^{-i theta}``."""
    return sf.delta(A, 1j * theta)


def _power_of(state: DensityMatrix, z: complex) -> np.ndarray:
    w, U = np.linalg.eigh(state.log_matrix)
    return (U * np.exp(complex(z) * w)) @ U.conj().T


def connes_cocycle(sf: StandardForm, rho_other: DensityMatrix, z: complex) -> np.ndarray:
    """``[D nu : D omega]_z = rho_nu^z rho^{-z}``, entire in ``z``."""
    rho_other.require_faithful("state")
    return _power_of(rho_other, z) @ sf.power(-z)


def decoherence_projection(sf: StandardForm, X) -> np.ndarray:
    """Projection onto the kernel of ``log Delta``: ``sum_e P_e X P_e``."""
    Xb = sf.to_basis(X)
    return sf.from_basis(np.where(sf.same_cluster, Xb, 0.0))


def trapezoid_phase_average(omega: np.ndarray, R: float, steps: int) -> np.ndarray:
    """Trapezoid average of ``theta -> exp(i omega theta)`` over ``[0, R]``.

    The ``steps + 1`` node sum is a geometric series and is summed in closed
    form (``expm1`` keeps small phases accurate); the result is exactly the
    trapezoid rule, not the continuous average.
    """
    omega = np.asarray(omega, dtype=float)
    h = R / steps
    q = 1j * h * omega
    out = np.ones(omega.shape, dtype=complex)
    nz = omega != 0
    qn = q[nz]
    geom = np.expm1((steps + 1) * qn) / np.expm1(qn)
    out[nz] = (geom - 0.5 * (1.0 + np.exp(steps * qn))) / steps
    return out


def _default_steps(sf: StandardForm, R: float) -> int:
    wmax = float(np.abs(sf.modular_gaps).max())
    # resolve the fastest modular frequency with >= 16 nodes per period
    return max(16, int(np.ceil(R * wmax * 16 / (2 * np.pi))))


def cesaro_average(sf: StandardForm, X, R: float, steps: int | None = None) -> np.ndarray:
    """Finite-``R`` trapezoid average of ``theta -> varsigma^theta(X)`` on ``[0, R]``."""
    if R <= 0:
        raise ValueError("R must be positive")
    steps = _default_steps(sf, R) if steps is None else int(steps)
    Xb = sf.to_basis(X)
    return sf.from_basis(Xb * trapezoid_phase_average(sf.modular_gaps, R, steps))


def _psd_sqrt(M) -> np.ndarray:
    w, U = np.linalg.eigh(as_array(M))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.conj().T


def commutant_from_state(sf: StandardForm, nu) -> CommutantElement:
    """Canonical commutant element ``b = rho^{-1/2} nu^{1/2}`` inducing ``nu``."""
    sf.rho.require_faithful("reference state")
    nu_m = as_array(nu)
    b = sf.inv_sqrt @ _psd_sqrt(nu_m)
    el = CommutantElement(b)
    return CommutantElement(b, residual=trace_norm(el.state(sf) - nu_m))


def slexam_B(sf: StandardForm, H, s: float) -> CommutantElement:
    """Commutant element ``J [D omega_s : D omega]_{1/2} J`` inducing ``omega_s``.

    As a right multiplier it is ``b_s = rho^{-1/2} rho_s^{1/2}`` with
    ``rho_s^{1/2} = e^{-isH} rho^{1/2} e^{isH}``.
    """
    es = H if isinstance(H, Eigensystem) else Eigensystem.of(H)
    root_s = evolve_matrix(es, s, sf.sqrt)
    cocycle_half = root_s @ sf.inv_sqrt  # [D omega_s : D omega]_{1/2}
    b = StandardForm.J(cocycle_half)  # J C J acts as X -> X C^dag
    rho_s = root_s @ root_s.conj().T
    el = CommutantElement(b)
    return CommutantElement(b, residual=trace_norm(el.state(sf) - rho_s))
