"""Electronic black box models: a small tight-binding system coupled by
hopping terms to free-fermion chain leads, their finite-volume truncation
schemes, and the volume sweep of the two-time entropy production MGF.

Site order (the Jordan-Wigner order, part of the report contract): the
small-system sites first, then every lead in index order, each lead
listed from the site nearest to the small system outwards.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .dynamics import Eigensystem, EvolutionSpec
from .errors import ConfigError, ResourceError, ValidationError
from .fock import DEFAULT_MAX_MODES, CarBasis, dgamma, jordan_wigner, quasifree_density
from .matrixcore import (
    DEFAULT_CLUSTERING_RTOL,
    HermitianOperator,
    as_array,
    commutator,
    op_norm,
    trace_norm,
)
from .modular import StandardForm, commutant_from_state, slexam_B
from .twotime import mgf_modular

SCHEMES = ("compressed_hamiltonian", "restricted_state", "combined")
NU_SPECS = ("reference", "evolved", "local")
SCHEMA_VERSION = "1.0"
T_S_NOTE = (
    "small-system one-particle density T_S replaces the non-faithful projection 1_S; "
    "default 1/2 * 1_S (tracial small system)"
)


def fermi_dirac(h, beta: float, mu: float) -> np.ndarray:
    """``(1 + exp(beta (h - mu)))^{-1}`` by spectral calculus."""
    w, U = np.linalg.eigh(as_array(h))
    x = beta * (w - mu)
    occ = np.where(x > 0, np.exp(-x) / (1.0 + np.exp(-x)), 1.0 / (1.0 + np.exp(np.minimum(x, 0.0))))
    return (U * occ) @ U.conj().T


def log_odds(T) -> np.ndarray:
    """``log(T (1 - T)^{-1})``."""
    w, U = np.linalg.eigh(as_array(T))
    if w.min() <= 0 or w.max() >= 1:
        raise ValidationError("one-particle density must lie strictly between 0 and 1")
    return (U * np.log(w / (1.0 - w))) @ U.conj().T


@dataclass(frozen=True)
class Lead:
    """Uniform tight-binding chain reservoir."""

    hopping: float = 1.0
    onsite: float = 0.0
    beta: float = 1.0
    mu: float = 0.0
    length: int | None = None  # None: arbitrarily long chain

    def hamiltonian(self, n: int) -> np.ndarray:
        if self.length is not None:
            n = min(n, self.length)
        h = np.diag(np.full(n, self.onsite, dtype=complex))
        idx = np.arange(n - 1)
        h[idx, idx + 1] = self.hopping
        h[idx + 1, idx] = np.conj(self.hopping)
        return h

    def sites(self, L: int) -> int:
        return L if self.length is None else min(L, self.length)


@dataclass(frozen=True)
class OneParticleSystem:
    """One-particle data of an EBBM.

    ``v_window`` is the coupling on the finite window ``G_0`` made of the
    small system and the first ``window`` sites of every lead (canonical
    order).  ``interaction`` lists density-density terms ``U n_x n_y`` on
    the small system (``x == y`` gives an on-site ``U n_x``).
    """

    h_S: np.ndarray
    leads: tuple[Lead, ...]
    v_window: np.ndarray
    window: int = 1
    T_S: np.ndarray | None = None
    interaction: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        self.validate()

    @property
    def n_system(self) -> int:
        return self.h_S.shape[0]

    @property
    def n_leads(self) -> int:
        return len(self.leads)

    @property
    def betas(self) -> tuple[float, ...]:
        return tuple(l.beta for l in self.leads)

    @property
    def mus(self) -> tuple[float, ...]:
        return tuple(l.mu for l in self.leads)

    @property
    def small_density(self) -> np.ndarray:
        if self.T_S is None:
            return 0.5 * np.eye(self.n_system, dtype=complex)
        return np.asarray(self.T_S, dtype=complex)

    def window_partition(self) -> list[np.ndarray]:
        """Index arrays of S and of every lead inside the window."""
        nS, w = self.n_system, self.window
        parts = [np.arange(nS)]
        for j in range(self.n_leads):
            parts.append(nS + j * w + np.arange(w))
        return parts

    def validate(self) -> None:
        nS, M, w = self.n_system, self.n_leads, self.window
        if M < 1 or w < 1:
            raise ValidationError("need at least one lead and a window of at least one site")
        if any(l.length is not None and l.length < w for l in self.leads):
            raise ValidationError("window is longer than a finite lead")
        v = np.asarray(self.v_window)
        if v.shape != (nS + M * w, nS + M * w):
            raise ValidationError(f"coupling of shape {v.shape} does not match the window G_0")
        if np.abs(v - v.conj().T).max(initial=0.0) > 1e-14:
            raise ValidationError("coupling v is not Hermitian")
        if np.abs(self.h_S - np.conj(self.h_S).T).max(initial=0.0) > 1e-14:
            raise ValidationError("h_S is not Hermitian")
        parts = self.window_partition()
        for i in range(1, M + 1):
            for j in range(1, M + 1):
                if i != j and np.any(v[np.ix_(parts[i], parts[j])] != 0):
                    raise ValidationError(f"direct coupling between reservoirs {i} and {j}")
        if any(l.beta <= 0 for l in self.leads):
            raise ValidationError("inverse temperatures must be positive")
        T_S = self.small_density
        if T_S.shape != (nS, nS):
            raise ValidationError("T_S has the wrong shape")
        t = np.linalg.eigvalsh(0.5 * (T_S + T_S.conj().T))
        if t.min() <= 0 or t.max() >= 1:
            raise ValidationError("T_S must satisfy 0 < T_S < 1")
        for x, y, _ in self.interaction:
            if not (0 <= x < nS and 0 <= y < nS):
                raise ValidationError(f"interaction term ({x}, {y}) is not supported on S")

    def lead_couplings(self, j: int) -> np.ndarray:
        """``v_j``: the window coupling restricted to entries touching lead ``j``."""
        parts = self.window_partition()
        mask = np.zeros(self.v_window.shape[0], dtype=bool)
        mask[parts[j + 1]] = True
        vj = np.where(mask[:, None] | mask[None, :], self.v_window, 0.0)
        return vj


def build_chain(
    n_system: int = 1,
    n_leads: int = 2,
    system_onsite: float | Sequence[float] = 0.0,
    system_hopping: float = 1.0,
    lead_hopping: float | Sequence[float] = 1.0,
    lead_onsite: float | Sequence[float] = 0.0,
    lead_length: int | None = None,
    coupling: float | Sequence[float] = 0.5,
    attach: Sequence[int] | None = None,
    betas: Sequence[float] = (1.0, 2.0),
    mus: Sequence[float] | None = None,
    T_S=None,
    interaction: Sequence[Sequence[float]] = (),
    window: int = 1,
    extra_couplings: Sequence[Sequence] = (),
) -> OneParticleSystem:
    """Star geometry: a small chain with ``n_leads`` chain leads.

    Lead ``j`` is attached by a bond of strength ``coupling[j]`` between
    small-system site ``attach[j]`` (default ``j mod n_system``) and its own
    first site.  ``extra_couplings`` adds window entries ``(a, b, value)``
    with sites written as ``"S<i>"`` or ``"R<j>.<i>"`` (leads numbered from
    1); they are validated like everything else.
    """
    M = n_leads

    def per_lead(x, name):
        vals = [x] * M if np.isscalar(x) else list(x)
        if len(vals) != M:
            raise ConfigError(f"expected {M} values", key=name)
        return vals

    betas = per_lead(betas, "betas") if not np.isscalar(betas) else [float(betas)] * M
    mus = [0.0] * M if mus is None else per_lead(mus, "mus")
    hop = per_lead(lead_hopping, "lead_hopping")
    ons = per_lead(lead_onsite, "lead_onsite")
    kap = per_lead(coupling, "coupling")
    att = [j % n_system for j in range(M)] if attach is None else list(attach)
    if len(att) != M or any(not 0 <= a < n_system for a in att):
        raise ConfigError("attach sites must index the small system", key="attach")
    leads = tuple(
        Lead(hopping=hop[j], onsite=ons[j], beta=float(betas[j]), mu=float(mus[j]), length=lead_length)
        for j in range(M)
    )
    eps = [float(system_onsite)] * n_system if np.isscalar(system_onsite) else list(system_onsite)
    if len(eps) != n_system:
        raise ConfigError(f"expected {n_system} values", key="system_onsite")
    h_S = np.diag(np.asarray(eps, dtype=complex))
    for i in range(n_system - 1):
        h_S[i, i + 1] = h_S[i + 1, i] = system_hopping
    size = n_system + M * window
    v = np.zeros((size, size), dtype=complex)

    def index(label: str) -> int:
        try:
            if label.startswith("S"):
                i = int(label[1:])
                if not 0 <= i < n_system:
                    raise ValueError
                return i
            if label.startswith("R"):
                j, i = label[1:].split(".")
                j, i = int(j) - 1, int(i)
                if not 0 <= j < M or i < 0:
                    raise ValueError
                if i >= window:
                    raise ValidationError(f"coupling site {label} lies outside the window G_0")
                return n_system + j * window + i
        except ValidationError:
            raise
        except ValueError:
            pass
        raise ConfigError(f"cannot parse site label {label!r}", key="extra_couplings")

    for j in range(M):
        a, r = att[j], n_system + j * window
        v[a, r] += kap[j]
        v[r, a] += np.conj(kap[j])
    for a, b, val in extra_couplings:
        ia, ib = index(str(a)), index(str(b))
        v[ia, ib] += val
        if ia != ib:
            v[ib, ia] += np.conj(val)
    return OneParticleSystem(
        h_S=h_S,
        leads=leads,
        v_window=v,
        window=window,
        T_S=None if T_S is None else np.asarray(T_S, dtype=complex),
        interaction=tuple((int(x), int(y), float(u)) for x, y, u in interaction),
    )


@dataclass(frozen=True)
class TruncatedSystem:
    """Finite-volume one-particle data for one scheme and volume ``L``."""

    scheme: str
    L: int
    n_system: int
    lead_slices: tuple[slice, ...]
    h_fr: np.ndarray  # generator of the free dynamics on the volume
    v: np.ndarray
    T: np.ndarray  # one-particle density of the reference state
    h_state: tuple[np.ndarray, ...]  # per-lead h with T_j = FD(h_state_j)
    betas: tuple[float, ...]
    mus: tuple[float, ...]
    interaction: tuple[tuple[int, int, float], ...]
    L_ref: int | None = None

    @property
    def n_modes(self) -> int:
        return self.h_fr.shape[0]

    @property
    def h(self) -> np.ndarray:
        return self.h_fr + self.v

    def lead_block(self, j: int) -> np.ndarray:
        mask = np.zeros(self.n_modes, dtype=bool)
        mask[self.lead_slices[j]] = True
        return mask

    def lead_coupling(self, j: int) -> np.ndarray:
        m = self.lead_block(j)
        return np.where(m[:, None] | m[None, :], self.v, 0.0)

    def modular_kernel(self) -> np.ndarray:
        """``k = log T(1-T)^{-1}``; ``log rho = dGamma(k) + const``."""
        return log_odds(self.T)

    def sigma_kernel(self) -> np.ndarray:
        """One-particle kernel ``phi = i[k, v]`` of ``sigma`` (without the ``W`` part)."""
        return 1j * commutator(self.modular_kernel(), self.v)

    def sigma_kernel_lifted(self) -> np.ndarray:
        """``sum_j beta_j i[v_j, h_j - mu_j 1_j]`` plus the small-system term."""
        n = self.n_modes
        phi = np.zeros((n, n), dtype=complex)
        for j, sl in enumerate(self.lead_slices):
            hj = np.zeros((n, n), dtype=complex)
            hj[sl, sl] = self.h_state[j] - self.mus[j] * np.eye(sl.stop - sl.start)
            phi += self.betas[j] * 1j * commutator(self.lead_coupling(j), hj)
        kS = np.zeros((n, n), dtype=complex)
        nS = self.n_system
        kS[:nS, :nS] = log_odds(self.T[:nS, :nS])
        return phi + 1j * commutator(kS, self.v)

    def sigma_kernel_literal(self) -> np.ndarray:
        """``sum_j beta_j i[v_j, h_j]`` with the chemical potentials dropped."""
        n = self.n_modes
        phi = np.zeros((n, n), dtype=complex)
        for j, sl in enumerate(self.lead_slices):
            hj = np.zeros((n, n), dtype=complex)
            hj[sl, sl] = self.h_state[j]
            phi += self.betas[j] * 1j * commutator(self.lead_coupling(j), hj)
        return phi

    def free_invariance_defect(self) -> float:
        """``||[k, h_fr]||`` on one-particle space (zero iff the Fock-space defect is)."""
        return op_norm(commutator(self.modular_kernel(), self.h_fr))


def truncate(sys: OneParticleSystem, L: int, scheme: str, L_ref: int | None = None) -> TruncatedSystem:
    """Finite-volume data keeping the ``L`` sites of every lead nearest to S."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}", key="schemes")
    if L < sys.window:
        raise ConfigError(f"volume L={L} does not contain the coupling window ({sys.window})", key="L_list")
    if scheme != "compressed_hamiltonian":
        if L_ref is None:
            L_ref = 16 * L
        if L_ref <= L:
            raise ConfigError(f"L_ref={L_ref} must exceed every swept L (got L={L})", key="L_ref")
    nS = sys.n_system
    blocks_fr, blocks_T, h_state, slices = [sys.h_S], [sys.small_density], [], []
    offset = nS
    for lead in sys.leads:
        n = lead.sites(L)
        h_trunc = lead.hamiltonian(n)
        if scheme == "compressed_hamiltonian":
            T = fermi_dirac(h_trunc, lead.beta, lead.mu)
            hs = h_trunc
        else:
            ref = lead.hamiltonian(L_ref)
            T = fermi_dirac(ref, lead.beta, lead.mu)[:n, :n]
            hs = -log_odds(T) / lead.beta + lead.mu * np.eye(n)
            hs = 0.5 * (hs + hs.conj().T)
        blocks_fr.append(h_trunc if scheme in ("compressed_hamiltonian", "combined") else hs)
        blocks_T.append(T)
        h_state.append(hs)
        slices.append(slice(offset, offset + n))
        offset += n
    h_fr = _block_diag(blocks_fr)
    T = _block_diag(blocks_T)
    v = np.zeros_like(h_fr)
    win = np.concatenate(sys.window_partition())
    # window index -> volume index
    vol_index = np.concatenate(
        [np.arange(nS)] + [np.arange(sl.start, sl.start + sys.window) for sl in slices]
    )
    v[np.ix_(vol_index, vol_index)] = sys.v_window[np.ix_(win, win)]
    return TruncatedSystem(
        scheme=scheme,
        L=L,
        n_system=nS,
        lead_slices=tuple(slices),
        h_fr=h_fr,
        v=v,
        T=T,
        h_state=tuple(h_state),
        betas=sys.betas,
        mus=sys.mus,
        interaction=sys.interaction,
        L_ref=None if scheme == "compressed_hamiltonian" else L_ref,
    )


def _block_diag(blocks) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), dtype=complex)
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i : i + k, i : i + k] = b
        i += k
    return out


def interaction_operator(terms, basis: CarBasis) -> np.ndarray:
    """``W = sum U n_x n_y`` on the Fock space."""
    occ = basis.occupations
    diag = np.zeros(basis.dim)
    for x, y, u in terms:
        diag += u * occ[:, x] * occ[:, y]
    return np.diag(diag.astype(complex))


@dataclass(frozen=True)
class FockSystem:
    spec: EvolutionSpec
    sigma: HermitianOperator
    sigma_lifted: HermitianOperator
    basis: CarBasis
    trunc: TruncatedSystem

    @property
    def sigma_route_discrepancy(self) -> float:
        return op_norm(self.sigma.entries - self.sigma_lifted.entries)


def assemble_fock(trunc: TruncatedSystem, max_modes: int = DEFAULT_MAX_MODES) -> FockSystem:
    """Fock-space Hamiltonians, reference state and ``sigma`` computed two ways.

    Route (a) is ``i[log rho, V]``; route (b) lifts the one-particle kernel
    ``sum_j beta_j i[v_j, h_j - mu_j]`` (plus ``i[dGamma(k_S), W]``, zero for
    a tracial small system).
    """
    basis = jordan_wigner(trunc.n_modes, max_modes=max_modes)
    W = interaction_operator(trunc.interaction, basis)
    H_fr = dgamma(trunc.h_fr, basis)
    V = W + dgamma(trunc.v, basis)
    rho = quasifree_density(trunc.T, basis)
    spec = EvolutionSpec.build(H_fr, V, rho)
    sigma = HermitianOperator(1j * commutator(rho.log_matrix, V), "sigma")
    nS = trunc.n_system
    kS = np.zeros_like(trunc.h_fr)
    kS[:nS, :nS] = log_odds(trunc.T[:nS, :nS])
    lifted = dgamma(trunc.sigma_kernel_lifted(), basis) + 1j * commutator(dgamma(kS, basis), W)
    return FockSystem(spec, sigma, HermitianOperator(lifted, "sigma_b"), basis, trunc)


def quasifree_reference_mgf(trunc: TruncatedSystem, t: float, alpha: complex) -> complex:
    """MGF for ``nu = omega`` by one-particle determinants (requires ``W = 0``).

    ``F = tr(rho^{1-alpha} e^{itH} rho^alpha e^{-itH})`` and every factor is
    the second quantization of a one-particle operator, so
    ``F = det(1 + e^{(1-alpha)k} e^{ith} e^{alpha k} e^{-ith}) / det(1 + e^k)``.
    """
    if trunc.interaction and any(u != 0 for _, _, u in trunc.interaction):
        raise ValueError("the determinant route needs a quadratic Hamiltonian (W = 0)")
    alpha = complex(alpha)
    w, U = np.linalg.eigh(trunc.modular_kernel())
    es = Eigensystem.of(trunc.h)
    ut = es.unitary(t)
    A = (U * np.exp((1 - alpha) * w)) @ U.conj().T
    B = (U * np.exp(alpha * w)) @ U.conj().T
    M = np.eye(len(w)) + A @ ut @ B @ ut.conj().T
    sign, logdet = np.linalg.slogdet(M)
    log_z = np.sum(np.logaddexp(0.0, w))
    return complex(sign * np.exp(logdet - log_z))


@dataclass(frozen=True)
class SweepReport:
    """Volume sweep of the MGF with Cauchy and cross-scheme diagnostics."""

    meta: dict
    cells: list[dict]
    cauchy: list[dict]
    cross_scheme: list[dict]
    diagnostics: list[dict]
    timing: dict = field(default_factory=dict, compare=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "meta": self.meta,
            "cells": self.cells,
            "cauchy": self.cauchy,
            "cross_scheme": self.cross_scheme,
            "diagnostics": self.diagnostics,
        }
        if include_timing:
            out["timing"] = self.timing
        return out

    def to_json(self, include_timing: bool = True) -> str:
        import json

        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    def to_csv(self) -> str:
        lines = ["L,scheme,t,alpha_re,alpha_im,F_re,F_im"]
        for c in self.cells:
            lines.append(
                ",".join(
                    [str(c["L"]), c["scheme"], repr(c["t"]), repr(c["alpha"][0]), repr(c["alpha"][1]),
                     repr(c["F"][0]), repr(c["F"][1])]
                )
            )
        return "\n".join(lines) + "\n"

    def delta(self, scheme: str, L: int) -> float:
        for c in self.cauchy:
            if c["scheme"] == scheme and c["L"] == L:
                return c["delta"]
        raise KeyError((scheme, L))

    def F(self, scheme: str, L: int) -> np.ndarray:
        return np.array(
            [complex(*c["F"]) for c in self.cells if c["scheme"] == scheme and c["L"] == L]
        )

    def cross(self, L: int, a: str, b: str) -> float:
        for c in self.cross_scheme:
            if c["L"] == L and {c["schemes"][0], c["schemes"][1]} == {a, b}:
                return c["max_abs_diff"]
        raise KeyError((L, a, b))


def _local_density(trunc: TruncatedSystem, T_loc: np.ndarray, window: int) -> np.ndarray:
    """``T_nu``: ``T_loc`` on S plus the first ``window`` sites of every lead,
    the compression of ``T`` on the complement, no cross terms."""
    n = trunc.n_modes
    win = list(range(trunc.n_system))
    for sl in trunc.lead_slices:
        win.extend(range(sl.start, min(sl.stop, sl.start + window)))
    win = np.array(win)
    if T_loc.shape != (len(win), len(win)):
        raise ConfigError(f"local density must be {len(win)}x{len(win)}", key="nu_local_density")
    rest = np.setdiff1d(np.arange(n), win)
    Tn = np.zeros((n, n), dtype=complex)
    Tn[np.ix_(win, win)] = T_loc
    Tn[np.ix_(rest, rest)] = trunc.T[np.ix_(rest, rest)]
    return Tn


def _cell_values(trunc, backend, t_list, alphas, nu_spec, nu_time, T_loc, loc_window, max_modes, clustering_rtol):
    diag = {
        "L": trunc.L,
        "scheme": trunc.scheme,
        "n_modes": trunc.n_modes,
        "free_invariance_defect": trunc.free_invariance_defect(),
        "sigma_mu_discrepancy": trace_norm(trunc.sigma_kernel() - trunc.sigma_kernel_literal()),
    }
    if backend == "quasifree":
        values = [[quasifree_reference_mgf(trunc, t, a) for a in alphas] for t in t_list]
        return values, diag
    fs = assemble_fock(trunc, max_modes=max_modes)
    spec = fs.spec
    sf = StandardForm.of(spec.rho, clustering_rtol)
    if nu_spec == "reference":
        b = commutant_from_state(sf, spec.rho.matrix)
    elif nu_spec == "evolved":
        b = slexam_B(sf, spec.eig, nu_time)
    else:
        nu = quasifree_density(_local_density(trunc, T_loc, loc_window), fs.basis)
        b = commutant_from_state(sf, nu.matrix)
    diag["sigma_route_discrepancy"] = fs.sigma_route_discrepancy
    values = [[mgf_modular(sf, b, spec.eig, t, a) for a in alphas] for t in t_list]
    return values, diag


def _pick_backend(backend, sys, L_list, nu_spec, max_modes):
    total = max(sys.n_system + sum(l.sites(L) for l in sys.leads) for L in L_list)
    quadratic = not any(u != 0 for _, _, u in sys.interaction)
    if backend == "auto":
        if total <= max_modes:
            return "fock"
        backend = "quasifree"
    if backend == "quasifree":
        if nu_spec != "reference" or not quadratic:
            raise ResourceError(
                f"{total} modes exceed the Fock budget of {max_modes} and the determinant "
                "route only covers nu = omega with W = 0"
            )
        return "quasifree"
    if backend == "fock":
        if total > max_modes:
            raise ResourceError(f"{total} modes exceed the Fock budget of {max_modes}")
        return "fock"
    raise ConfigError(f"unknown backend {backend!r}", key="backend")


def tdl_sweep(
    sys: OneParticleSystem,
    schemes: Sequence[str],
    L_list: Sequence[int],
    t_list: Sequence[float],
    alpha_grid: Sequence[complex],
    nu_spec: str = "reference",
    *,
    L_ref: int | None = None,
    backend: str = "auto",
    threads: int = 1,
    max_modes: int = DEFAULT_MAX_MODES,
    clustering_rtol: float = DEFAULT_CLUSTERING_RTOL,
    nu_time: float = 0.5,
    nu_local_density=None,
    nu_local_window: int = 1,
    seed: int = 0,
    config: dict | None = None,
) -> SweepReport:
    """Evaluate the MGF on the grid for every (scheme, L) and derive the
    Cauchy increments ``delta_L = max_grid |F_L - F_{L_prev}|``."""
    if nu_spec not in NU_SPECS:
        raise ConfigError(f"unknown nu_spec {nu_spec!r}; expected one of {NU_SPECS}", key="nu_spec")
    L_list = sorted(int(L) for L in L_list)
    if L_ref is None:
        L_ref = 16 * max(L_list)
    chosen = _pick_backend(backend, sys, L_list, nu_spec, max_modes)
    alphas = [complex(a) for a in alpha_grid]
    n_loc = sys.n_system + sys.n_leads * nu_local_window
    if nu_local_density is None:
        T_loc = np.diag([0.8] * sys.n_system + [0.3] * (n_loc - sys.n_system)).astype(complex)
    else:
        T_loc = np.asarray(nu_local_density, dtype=complex)
    jobs = [(s, L) for s in schemes for L in L_list]
    truncs = [truncate(sys, L, s, L_ref) for s, L in jobs]

    def run(k):
        start = time.perf_counter()
        vals, diag = _cell_values(
            truncs[k], chosen, t_list, alphas, nu_spec, nu_time, T_loc, nu_local_window, max_modes, clustering_rtol
        )
        return vals, diag, time.perf_counter() - start

    start = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(jobs))))
    else:
        results = [run(k) for k in range(len(jobs))]
    wall = time.perf_counter() - start

    diagnostics = [r[1] for r in results]
    cells, cauchy, cross = grid_report([r[0] for r in results], jobs, schemes, L_list, t_list, alphas)
    meta = {
        "library_version": __version__,
        "backend": chosen,
        "schemes": list(schemes),
        "L_list": L_list,
        "L_ref": L_ref,
        "t_list": [float(t) for t in t_list],
        "alpha_grid": [[a.real, a.imag] for a in alphas],
        "nu_spec": nu_spec,
        "seed": int(seed),
        "clustering_rtol": clustering_rtol,
        "max_modes": max_modes,
        "site_ordering": "S sites, then leads 1..M, each from the site nearest to S outwards",
        "small_system_density": T_S_NOTE,
        "small_system_T_S": [[complex(x).real, complex(x).imag] for x in np.ravel(sys.small_density)],
        "commutant_root": "b = rho^{-1/2} nu^{1/2} (positive square root)",
        "config": config or {},
    }
    if nu_spec == "evolved":
        meta["nu_time"] = nu_time
    if nu_spec == "local":
        meta["nu_local_window"] = nu_local_window
        meta["nu_local_density"] = [[x.real, x.imag] for x in T_loc.ravel()]
    timing = {"wall_seconds": wall, "cells": [{"L": L, "scheme": s, "seconds": r[2]} for (s, L), r in zip(jobs, results)]}
    return SweepReport(meta=meta, cells=cells, cauchy=cauchy, cross_scheme=cross, diagnostics=diagnostics, timing=timing)


def grid_report(values, jobs, schemes, L_list, t_list, alphas):
    """Flatten per-job grids into report cells, Cauchy increments and
    cross-scheme discrepancies.  ``values[k][i][m]`` is F at job ``k``,
    time ``t_list[i]`` and ``alphas[m]``."""
    cells, table = [], {}
    for (scheme, L), vals in zip(jobs, values):
        for i, t in enumerate(t_list):
            for a, F in zip(alphas, vals[i]):
                cells.append({"L": L, "scheme": scheme, "t": float(t), "alpha": [a.real, a.imag], "F": [F.real, F.imag]})
        table[(scheme, L)] = np.array(vals, dtype=complex)
    cauchy = []
    for scheme in schemes:
        for prev, L in zip(L_list[:-1], L_list[1:]):
            d = float(np.abs(table[(scheme, L)] - table[(scheme, prev)]).max())
            cauchy.append({"L": L, "scheme": scheme, "delta": d})
    cross = []
    for i, a in enumerate(schemes):
        for b in schemes[i + 1 :]:
            for L in L_list:
                cross.append(
                    {"L": L, "schemes": [a, b], "max_abs_diff": float(np.abs(table[(a, L)] - table[(b, L)]).max())}
                )
    return cells, cauchy, cross
