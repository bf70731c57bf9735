"""Open quantum spin systems on a finite site universe.

An interaction assigns a Hermitian matrix on ``d**|X|`` dimensions to each
finite site set ``X`` (sites of ``X`` in ascending order inside the
matrix).  The universe is partitioned into a small system ``S`` and
reservoirs ``R_1 ... R_M``; no term may touch two reservoirs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dynamics import EvolutionSpec
from .errors import FaithfulnessError, ResourceError, ValidationError
from .matrixcore import (
    DEFAULT_FAITHFULNESS_FLOOR,
    DensityMatrix,
    HermitianOperator,
    commutator,
    hermiticity_defect,
    op_norm,
    partial_trace,
)

MAX_SPIN_DIM = 4096

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class SpinInteraction:
    """Finite-range interaction on the universe ``0 .. n_sites - 1``.

    ``partition[0]`` is the small system, ``partition[j]`` reservoir ``j``.
    """

    d: int
    n_sites: int
    partition: tuple[tuple[int, ...], ...]
    terms: Mapping[tuple[int, ...], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        parts = tuple(tuple(sorted(int(x) for x in p)) for p in self.partition)
        object.__setattr__(self, "partition", parts)
        flat = sorted(x for p in parts for x in p)
        if flat != list(range(self.n_sites)):
            raise ValidationError("partition must cover every site of the universe exactly once")
        clean = {}
        for X, M in self.terms.items():
            X = tuple(sorted(int(x) for x in X))
            if len(set(X)) != len(X) or not X:
                raise ValidationError(f"term support {X} must be a nonempty set of sites")
            M = np.asarray(M, dtype=complex)
            if M.shape != (self.d ** len(X),) * 2:
                raise ValidationError(f"term on {X} has shape {M.shape}")
            if hermiticity_defect(M) > 1e-12 * max(1.0, np.abs(M).max()):
                raise ValidationError(f"term on {X} is not Hermitian")
            clean[X] = clean.get(X, 0) + M
        object.__setattr__(self, "terms", clean)
        if not self.is_decoupled():
            raise ValidationError("a term couples two different reservoirs directly")

    @property
    def system(self) -> tuple[int, ...]:
        return self.partition[0]

    @property
    def n_reservoirs(self) -> int:
        return len(self.partition) - 1

    def reservoir_sites(self, j: int) -> tuple[int, ...]:
        """Sites of reservoir ``j`` (numbered from 1)."""
        return self.partition[j]

    def region_of(self, x: int) -> int:
        for k, p in enumerate(self.partition):
            if x in p:
                return k
        raise KeyError(x)

    def is_decoupled(self) -> bool:
        for X in self.terms:
            touched = {self.region_of(x) for x in X} - {0}
            if len(touched) > 1:
                return False
        return True

    def restrict(self, keep: Callable[[tuple[int, ...]], bool]) -> "SpinInteraction":
        return SpinInteraction(self.d, self.n_sites, self.partition, {X: M for X, M in self.terms.items() if keep(X)})


def reservoir_interaction(phi: SpinInteraction, j: int) -> SpinInteraction:
    """``Phi_j``: the terms supported inside reservoir ``j``."""
    R = set(phi.reservoir_sites(j))
    return phi.restrict(lambda X: set(X) <= R)


def system_interaction(phi: SpinInteraction) -> SpinInteraction:
    S = set(phi.system)
    return phi.restrict(lambda X: set(X) <= S)


def coupling_terms(phi: SpinInteraction, j: int, within: Iterable[int] | None = None) -> dict:
    """Terms ``X subset S u R_j`` meeting both ``S`` and ``R_j`` (optionally ``X`` inside ``within``)."""
    S, R = set(phi.system), set(phi.reservoir_sites(j))
    allowed = None if within is None else set(within)
    out = {}
    for X, M in phi.terms.items():
        sX = set(X)
        if sX <= S | R and sX & S and sX & R and (allowed is None or sX <= allowed):
            out[X] = M
    return out


def interaction_norm(phi: SpinInteraction, lam: float) -> float:
    """``sup_x sum_{X containing x} ||Phi(X)|| exp(lam (|X| - 1))``."""
    per_site = np.zeros(phi.n_sites)
    for X, M in phi.terms.items():
        w = op_norm(M) * math.exp(lam * (len(X) - 1))
        for x in X:
            per_site[x] += w
    return float(per_site.max(initial=0.0))


def _check_budget(d: int, n: int) -> None:
    if d**n > MAX_SPIN_DIM:
        raise ResourceError(f"{n} sites of dimension {d} exceed the budget of {MAX_SPIN_DIM}")


def embed(M, X: Sequence[int], sites: Sequence[int], d: int) -> np.ndarray:
    """Embed an operator on ascending ``X`` into the ordered volume ``sites``."""
    sites = list(sites)
    n = len(sites)
    pos = [sites.index(x) for x in sorted(X)]
    rest = [i for i in range(n) if i not in pos]
    full = np.kron(np.asarray(M, dtype=complex), np.eye(d ** len(rest)))
    order = pos + rest
    inv = list(np.argsort(order))
    T = full.reshape((d,) * (2 * n)).transpose(inv + [n + i for i in inv])
    return T.reshape(d**n, d**n)


def _terms_inside(phi: SpinInteraction, sites) -> dict:
    s = set(sites)
    return {X: M for X, M in phi.terms.items() if set(X) <= s}


def _sum_embedded(terms: Mapping, sites, d) -> np.ndarray:
    n = len(sites)
    _check_budget(d, n)
    out = np.zeros((d**n, d**n), dtype=complex)
    for X, M in terms.items():
        out += embed(M, X, sites, d)
    return out


def local_hamiltonian(phi: SpinInteraction, sites: Sequence[int]) -> HermitianOperator:
    """``H_Lambda = sum_{X subset Lambda} Phi(X)`` on the ordered volume ``sites``."""
    return HermitianOperator(_sum_embedded(_terms_inside(phi, sites), list(sites), phi.d), "H_Lambda")


@dataclass(frozen=True)
class LocalOperator:
    """Operator together with the ordered sites it acts on."""

    op: np.ndarray
    sites: tuple[int, ...]


def surface_energy(phi: SpinInteraction, sites: Iterable[int]) -> LocalOperator:
    """Sum of the terms crossing the boundary of ``sites``, on the union of their supports."""
    inside = set(sites)
    crossing = {X: M for X, M in phi.terms.items() if set(X) & inside and set(X) - inside}
    support = tuple(sorted({x for X in crossing for x in X}))
    if not support:
        return LocalOperator(np.zeros((1, 1), dtype=complex), ())
    return LocalOperator(_sum_embedded(crossing, support, phi.d), support)


def gibbs_state(phi: SpinInteraction, sites: Sequence[int], beta: float) -> DensityMatrix:
    """``exp(-beta H_Lambda) / tr(...)`` with its exact logarithm."""
    H = local_hamiltonian(phi, sites).entries
    return gibbs_from_hamiltonian(H, beta)


def gibbs_from_hamiltonian(H, beta: float) -> DensityMatrix:
    E, U = np.linalg.eigh(np.asarray(H))
    x = -beta * E
    log_z = float(np.logaddexp.reduce(x))
    logp = x - log_z
    rho = (U * np.exp(logp)) @ U.conj().T
    log_rho = (U * logp) @ U.conj().T
    return DensityMatrix.from_array(rho, log=log_rho, label="gibbs")


def kms_residual(rho: DensityMatrix, H, beta: float, A, B) -> float:
    """``|tr(rho A e^{-beta H} B e^{beta H}) - tr(rho B A)|``."""
    E, U = np.linalg.eigh(np.asarray(H))
    Bb = U.conj().T @ np.asarray(B) @ U
    Bt = U @ (Bb * np.exp(-beta * (E[:, None] - E[None, :]))) @ U.conj().T
    R, A = rho.matrix, np.asarray(A)
    return float(abs(np.trace(R @ A @ Bt) - np.trace(R @ B @ A)))


@dataclass(frozen=True)
class VolumeSpec:
    """``Lambda = S u Lambda_1 u ... u Lambda_M`` and nested ``Lambda'_j``.

    Site order of the Hilbert space: ``S`` then every ``Lambda_j`` in the
    order given.
    """

    system: tuple[int, ...]
    reservoirs: tuple[tuple[int, ...], ...]
    nested: tuple[tuple[int, ...], ...] | None = None

    @property
    def sites(self) -> tuple[int, ...]:
        return tuple(self.system) + tuple(x for r in self.reservoirs for x in r)

    def validate(self, phi: SpinInteraction) -> None:
        if tuple(sorted(self.system)) != phi.system:
            raise ValidationError("volume must contain the small system exactly")
        if len(self.reservoirs) != phi.n_reservoirs:
            raise ValidationError("one volume per reservoir is required")
        for j, r in enumerate(self.reservoirs, start=1):
            if not set(r) <= set(phi.reservoir_sites(j)):
                raise ValidationError(f"volume {j} leaves reservoir {j}")
        if self.nested is not None:
            if len(self.nested) != len(self.reservoirs):
                raise ValidationError("one nested volume per reservoir is required")
            for j, (r, rp) in enumerate(zip(self.reservoirs, self.nested), start=1):
                if not set(r) <= set(rp) <= set(phi.reservoir_sites(j)):
                    raise ValidationError(f"nested volume {j} must satisfy Lambda_j <= Lambda'_j <= R_j")


def nearest_volume(phi: SpinInteraction, L: int | Sequence[int], L_nested: int | Sequence[int] | None = None) -> VolumeSpec:
    """The ``L`` sites of each reservoir closest (in index distance) to ``S``."""
    M = phi.n_reservoirs
    Ls = [L] * M if np.isscalar(L) else list(L)
    Lp = None if L_nested is None else ([L_nested] * M if np.isscalar(L_nested) else list(L_nested))
    S = phi.system

    def closest(j, k):
        R = phi.reservoir_sites(j)
        order = sorted(R, key=lambda x: (min(abs(x - s) for s in S), x))
        return tuple(order[:k])

    res = tuple(closest(j, Ls[j - 1]) for j in range(1, M + 1))
    nested = None if Lp is None else tuple(closest(j, Lp[j - 1]) for j in range(1, M + 1))
    return VolumeSpec(tuple(S), res, nested)


@dataclass(frozen=True)
class SpinScheme:
    """Finite-volume system produced by a spin truncation scheme."""

    spec: EvolutionSpec
    sigma: HermitianOperator
    sigma_check: float  # ||sigma - i[log rho, V]||
    sites: tuple[int, ...]
    reservoir_states: tuple[DensityMatrix, ...]
    reservoir_hamiltonians: tuple[np.ndarray, ...]


def _assemble(phi, vol, betas, reservoir_states, reservoir_free):
    d, sites = phi.d, list(vol.sites)
    _check_budget(d, len(sites))
    nS = len(vol.system)
    H_S = _sum_embedded(_terms_inside(phi, vol.system), sites, d)
    V = np.zeros_like(H_S)
    for j in range(1, phi.n_reservoirs + 1):
        V += _sum_embedded(coupling_terms(phi, j, within=sites), sites, d)
    H_free_j, log_rho = [], -nS * math.log(d) * np.eye(d ** len(sites), dtype=complex)
    for j, r in enumerate(vol.reservoirs):
        H_free_j.append(embed(reservoir_free[j], r, sites, d) if r else np.zeros_like(H_S))
        if r:
            log_rho = log_rho + embed(reservoir_states[j].log_matrix, r, sites, d)
    H_fr = H_S + sum(H_free_j)
    rho = DensityMatrix.from_log(log_rho)
    spec = EvolutionSpec.build(H_fr, V, rho)
    return spec, H_free_j


def scheme_rue(phi: SpinInteraction, vol: VolumeSpec, betas: Sequence[float]) -> SpinScheme:
    """Local Gibbs reservoirs and the Hamiltonian ``H_S + sum_j H_{Lambda_j} + V_Lambda``.

    ``sigma = sum_j beta_j i[H_Lambda, H_{Lambda_j}]``, cross-checked against
    ``i[log rho_Lambda, V_Lambda]``.
    """
    vol.validate(phi)
    states, frees = [], []
    for j, r in enumerate(vol.reservoirs, start=1):
        rs = tuple(sorted(r))
        Hj = local_hamiltonian(reservoir_interaction(phi, j), rs).entries if rs else np.zeros((1, 1))
        states.append(gibbs_from_hamiltonian(Hj, betas[j - 1]))
        frees.append(Hj)
    spec, H_free_j = _assemble(phi, _sorted_volume(vol), betas, states, frees)
    H = spec.H.entries
    sigma = sum(b * 1j * commutator(H, Hj) for b, Hj in zip(betas, H_free_j))
    direct = 1j * commutator(spec.rho.log_matrix, spec.V.entries)
    sigma = HermitianOperator(sigma, "sigma")
    return SpinScheme(spec, sigma, op_norm(sigma.entries - direct), _sorted_volume(vol).sites, tuple(states), tuple(frees))


def _sorted_volume(vol: VolumeSpec) -> VolumeSpec:
    return VolumeSpec(
        tuple(sorted(vol.system)),
        tuple(tuple(sorted(r)) for r in vol.reservoirs),
        None if vol.nested is None else tuple(tuple(sorted(r)) for r in vol.nested),
    )


def restricted_reservoir_state(
    phi: SpinInteraction, j: int, region: Sequence[int], nested: Sequence[int], beta: float,
    faithfulness_floor: float = DEFAULT_FAITHFULNESS_FLOOR,
) -> DensityMatrix:
    """Gibbs state of ``Phi_j`` on ``nested`` reduced to ``region`` (ascending order)."""
    nested = tuple(sorted(nested))
    region = tuple(sorted(region))
    g = gibbs_state(reservoir_interaction(phi, j), nested, beta)
    if region == nested:
        return g
    keep = [nested.index(x) for x in region]
    red = partial_trace(g.matrix, [phi.d] * len(nested), keep)
    red = 0.5 * (red + red.conj().T)
    w, U = np.linalg.eigh(red)
    if w.min() <= faithfulness_floor:
        raise FaithfulnessError(f"restricted reservoir density has eigenvalue {w.min():.3e}")
    w = w / w.sum()
    return DensityMatrix.from_array((U * w) @ U.conj().T, log=(U * np.log(w)) @ U.conj().T, label="restricted")


def scheme_hat(phi: SpinInteraction, vol: VolumeSpec, betas: Sequence[float]) -> SpinScheme:
    """Restricted reservoir states with free generators ``-(1/beta_j) log omega_{Lambda_j}``.

    The restriction of the infinite-volume equilibrium state is replaced by
    the reduction of the Gibbs state on the declared nested volume.
    ``sigma = i[log rho_Lambda, V_Lambda]``.
    """
    vol.validate(phi)
    if vol.nested is None:
        raise ValidationError("scheme_hat needs nested volumes Lambda'_j")
    svol = _sorted_volume(vol)
    states, frees = [], []
    for j, (r, rp) in enumerate(zip(svol.reservoirs, svol.nested), start=1):
        st = restricted_reservoir_state(phi, j, r, rp, betas[j - 1])
        states.append(st)
        frees.append(-st.log_matrix / betas[j - 1])
    spec, _ = _assemble(phi, svol, betas, states, frees)
    sigma = HermitianOperator(1j * commutator(spec.rho.log_matrix, spec.V.entries), "sigma")
    # second construction: sum_j i[log omega_{Lambda_j}, V]
    alt = sum(
        1j * commutator(embed(st.log_matrix, r, svol.sites, phi.d), spec.V.entries)
        for st, r in zip(states, svol.reservoirs)
        if r
    )
    return SpinScheme(spec, sigma, op_norm(sigma.entries - alt), svol.sites, tuple(states), tuple(frees))


def _expand(phi: SpinInteraction, region: set) -> set:
    out = set(region)
    for X in phi.terms:
        if set(X) & region:
            out |= set(X)
    return out


def derivation_bound_check(phi: SpinInteraction, lam: float, A, A_sites: Sequence[int], n: int) -> tuple[float, float]:
    """``(||delta^n(A)||, 2^n n! / lam^n e^{lam |Lambda_A|} ||Phi||_lam^n ||A||)``.

    ``delta(A) = sum_{X meets supp A} i[Phi(X), A]`` is evaluated exactly as
    ``i[H_vol, A]`` on the ``n``-fold interaction closure of ``supp A``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    A_sites = tuple(sorted(A_sites))
    vol = set(A_sites)
    for _ in range(n):
        vol = _expand(phi, vol)
    vol = tuple(sorted(vol))
    _check_budget(phi.d, len(vol))
    H = _sum_embedded(_terms_inside(phi, vol), vol, phi.d)
    X = embed(A, A_sites, vol, phi.d)
    for _ in range(n):
        X = 1j * commutator(H, X)
    lhs = op_norm(X)
    rhs = (2.0**n) * math.factorial(n) / lam**n * math.exp(lam * len(A_sites)) * interaction_norm(phi, lam) ** n * op_norm(A)
    return lhs, rhs


def spin_chain(
    n_left: int,
    n_system: int,
    n_right: int = 0,
    J: float = 1.0,
    field: float = 0.5,
    coupling: float = 0.5,
    system_field: float | None = None,
) -> SpinInteraction:
    """Transverse-field Ising chain ``R_1 - S - R_2`` (qubits).

    Bulk bonds ``J Z Z``, on-site ``field X``; the two bonds joining ``S``
    to its neighbours carry ``coupling (X X + Y Y + Z Z)``.
    """
    N = n_left + n_system + n_right
    S = tuple(range(n_left, n_left + n_system))
    parts = [S, tuple(range(n_left))]
    if n_right:
        parts.append(tuple(range(n_left + n_system, N)))
    terms = {}
    sf = field if system_field is None else system_field
    for x in range(N):
        terms[(x,)] = (sf if x in S else field) * SX
    heis = np.kron(SX, SX) + np.kron(SY, SY) + np.kron(SZ, SZ)
    for x in range(N - 1):
        crossing = (x in S) != (x + 1 in S)
        terms[(x, x + 1)] = coupling * heis if crossing else J * np.kron(SZ, SZ)
    return SpinInteraction(2, N, tuple(parts), terms)


def nearest_neighbor_chain(n_sites: int, bond, onsite=None, partition=None, d: int = 2) -> SpinInteraction:
    """Uniform chain with ``Phi({x, x+1}) = bond`` and optional ``Phi({x}) = onsite``."""
    terms = {(x, x + 1): np.asarray(bond, dtype=complex) for x in range(n_sites - 1)}
    if onsite is not None:
        for x in range(n_sites):
            terms[(x,)] = np.asarray(onsite, dtype=complex)
    partition = partition or ((), tuple(range(n_sites)))
    return SpinInteraction(d, n_sites, partition, terms)


def random_interaction(
    rng: np.random.Generator, n_sites: int, partition, max_range: int = 3, scale: float = 0.5, d: int = 2
) -> SpinInteraction:
    """Seeded random interaction on contiguous blocks of length ``<= max_range``
    respecting reservoir decoupling."""
    probe = SpinInteraction(d, n_sites, partition, {})
    terms = {}
    for start in range(n_sites):
        for length in range(1, max_range + 1):
            X = tuple(range(start, start + length))
            if X[-1] >= n_sites:
                break
            if len({probe.region_of(x) for x in X} - {0}) > 1:
                continue
            k = d**length
            G = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
            terms[X] = scale * (G + G.conj().T) / (2 * math.sqrt(k))
    return SpinInteraction(d, n_sites, partition, terms)
