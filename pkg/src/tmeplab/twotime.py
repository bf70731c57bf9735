"""Two-time measurement entropy production: the measurement-protocol law and
its moment generating function by three independent routes.

The entropic observable is ``-log omega``; an atom ``s`` is the second
outcome minus the first, ``s = log e - log e'`` for a transition between
eigenvalues ``e -> e'`` of ``rho``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Eigensystem, evolve_matrix
from .matrixcore import DEFAULT_CLUSTERING_RTOL, as_array
from .modular import (
    CommutantElement,
    StandardForm,
    commutant_from_state,
    decoherence_projection,
    trapezoid_phase_average,
    _default_steps,
)

DEFAULT_MERGE_ATOL = 1e-9


@dataclass(frozen=True)
class TwoTimeLaw:
    """Atomic probability measure, atoms in ascending order (nats)."""

    s: np.ndarray
    p: np.ndarray
    merge_atol: float = DEFAULT_MERGE_ATOL

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.s.tolist(), self.p.tolist()))

    def __len__(self):
        return len(self.s)

    def mgf(self, alpha: complex) -> complex:
        return mgf_from_law(self, alpha)

    def mean(self) -> float:
        return mean_entropy_production(self)


@dataclass(frozen=True)
class MgfGrid:
    alphas: np.ndarray
    values: np.ndarray


def merge_atoms(s, p, merge_atol: float) -> tuple[np.ndarray, np.ndarray]:
    """Sort atoms and merge chains closer than ``merge_atol``.

    A merged atom sits at the probability-weighted mean (plain mean when
    the weights cancel).
    """
    s, p = np.asarray(s, float), np.asarray(p, float)
    order = np.argsort(s, kind="stable")
    s, p = s[order], p[order]
    if s.size == 0:
        return s, p
    labels = np.concatenate([[0], np.cumsum(np.diff(s) > merge_atol)])
    P = np.bincount(labels, weights=p)
    count = np.bincount(labels)
    first = np.bincount(labels, weights=s) / count
    weighted = np.bincount(labels, weights=s * p)
    with np.errstate(invalid="ignore", divide="ignore"):
        loc = np.where(np.abs(P) > 0, weighted / np.where(P == 0, 1, P), first)
    # never move an atom outside the span of its members
    starts = np.flatnonzero(np.r_[True, np.diff(labels) != 0])
    lo, hi = np.minimum.reduceat(s, starts), np.maximum.reduceat(s, starts)
    return np.clip(loc, lo, hi), P


def _standard_form(rho, clustering_rtol) -> StandardForm:
    if isinstance(rho, StandardForm):
        return rho
    return StandardForm.of(rho, clustering_rtol)


def law_oracle(
    rho,
    nu,
    H,
    t: float,
    clustering_rtol: float = DEFAULT_CLUSTERING_RTOL,
    merge_atol: float = DEFAULT_MERGE_ATOL,
    prob_atol: float = 0.0,
) -> TwoTimeLaw:
    """Brute-force two-time measurement protocol.

    First measurement of ``-log omega`` on ``nu`` (projections ``P_e``),
    evolution ``e^{-itH}``, second measurement.  The joint probability of
    ``e -> e'`` is ``tr(P_e' U P_e nu P_e U^dag)``.  Atoms whose probability
    does not exceed ``prob_atol`` in absolute value are dropped.

    ``rho`` may be a :class:`DensityMatrix` or a prepared :class:`StandardForm`;
    sharing the latter with the modular route shares the clustering.
    """
    sf = _standard_form(rho, clustering_rtol)
    sd = sf.spectral
    es = H if isinstance(H, Eigensystem) else Eigensystem.of(H)
    U = sd.to_basis(es.unitary(-t))  # e^{-itH} in the eigenbasis of rho
    nub = sd.to_basis(as_array(nu))
    slices = sd.cluster_slices()
    n_c = len(slices)
    joint = np.zeros((n_c, n_c))
    labels = sd.labels
    for e, sl in enumerate(slices):
        block = U[:, sl]
        diag = np.einsum("ij,jk,ik->i", block, nub[sl, sl], block.conj()).real
        joint[e] = np.bincount(labels, weights=diag, minlength=n_c)
    lv = sd.values
    s = (lv[:, None] - lv[None, :]).ravel()
    p = joint.ravel()
    keep = np.abs(p) > prob_atol
    s, p = merge_atoms(s[keep], p[keep], merge_atol)
    return TwoTimeLaw(s=s, p=p, merge_atol=merge_atol)


def mgf_from_law(Q: TwoTimeLaw, alpha: complex) -> complex:
    """``int e^{-alpha s} dQ(s)``."""
    return complex(np.sum(Q.p * np.exp(-complex(alpha) * Q.s)))


def mean_entropy_production(Q: TwoTimeLaw) -> float:
    return float(np.sum(Q.p * Q.s))


def _cocycle_minus_t(sf: StandardForm, es: Eigensystem, t: float, alpha: complex) -> np.ndarray:
    """``[D omega_{-t} : D omega]_alpha = rho_{-t}^alpha rho^{-alpha}``."""
    return evolve_matrix(es, -t, sf.power(alpha)) @ sf.power(-alpha)


def mgf_modular(sf: StandardForm, b, H, t: float, alpha: complex) -> complex:
    """``<B^* B Omega, P [D omega_{-t} : D omega]_alpha Omega>``.

    ``b`` is a :class:`CommutantElement` (or a state, converted with
    :func:`commutant_from_state`).  In matrix form this is
    ``tr(b b^dag rho^{1/2} P(C) rho^{1/2})``.
    """
    if not isinstance(b, CommutantElement):
        b = commutant_from_state(sf, b)
    es = H if isinstance(H, Eigensystem) else Eigensystem.of(H)
    C = _cocycle_minus_t(sf, es, t, alpha)
    PC = decoherence_projection(sf, C)
    bb = b.b @ b.b.conj().T
    return complex(np.trace(bb @ sf.sqrt @ PC @ sf.sqrt))


def mgf_cesaro(
    sf: StandardForm,
    nu,
    H,
    t: float,
    alpha: complex,
    R: float,
    steps: int | None = None,
) -> complex:
    """Finite-``R`` trapezoid average of ``theta -> nu(varsigma^theta(C))``."""
    alpha = complex(alpha)
    if alpha.real != 0:
        raise ValueError("the Cesaro route is defined for imaginary alpha only")
    es = H if isinstance(H, Eigensystem) else Eigensystem.of(H)
    C = sf.to_basis(_cocycle_minus_t(sf, es, t, alpha))
    nub = sf.to_basis(as_array(nu))
    steps = _default_steps(sf, R) if steps is None else int(steps)
    avg = trapezoid_phase_average(sf.modular_gaps, R, steps)
    return complex(np.sum(nub.T * C * avg))


def mgf_grid(f, alphas) -> MgfGrid:
    alphas = np.asarray(alphas, dtype=complex)
    return MgfGrid(alphas=alphas, values=np.array([f(a) for a in alphas], dtype=complex))
