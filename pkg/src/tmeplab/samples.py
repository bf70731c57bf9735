"""Seeded instance generators shared by the validation suite and the tests."""

from __future__ import annotations

import numpy as np

from .dynamics import EvolutionSpec
from .ebbm import FockSystem, assemble_fock, build_chain, truncate
from .matrixcore import DensityMatrix
from .spin import SpinScheme, nearest_volume, random_interaction, scheme_rue, spin_chain


def random_hermitian(rng: np.random.Generator, d: int, scale: float = 1.0, real: bool = False) -> np.ndarray:
    G = rng.normal(size=(d, d))
    if not real:
        G = G + 1j * rng.normal(size=(d, d))
    H = (G + G.conj().T) / 2
    return scale * H / max(np.linalg.norm(H, 2), 1e-300)


def random_unitary(rng: np.random.Generator, d: int) -> np.ndarray:
    Z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def random_state(rng: np.random.Generator, d: int, spread: float = 2.0) -> DensityMatrix:
    """Faithful state ``exp(L) / tr`` with ``||L|| = spread`` (exact log kept)."""
    return DensityMatrix.from_log(random_hermitian(rng, d, spread))


def random_mixed_density(rng: np.random.Generator, d: int, rank: int | None = None) -> np.ndarray:
    """Random density matrix of the given rank (full by default)."""
    rank = d if rank is None else rank
    G = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    R = G @ G.conj().T
    return R / np.trace(R).real


def random_spec(rng: np.random.Generator, d: int, coupling: float = 0.5, spread: float = 2.0) -> EvolutionSpec:
    """Generic system whose reference state is invariant under the free part.

    ``H_fr`` is diagonal in the eigenbasis of ``log rho`` with random
    energies; ``V`` is a generic complex perturbation of norm ``coupling``.
    """
    U = random_unitary(rng, d)
    logs = rng.uniform(-spread / 2, spread / 2, size=d)
    energies = rng.uniform(-1.0, 1.0, size=d)
    log_rho = (U * logs) @ U.conj().T
    rho = DensityMatrix.from_log(log_rho)
    H_fr = (U * energies) @ U.conj().T
    return EvolutionSpec.build(H_fr, random_hermitian(rng, d, coupling), rho)


def random_ebbm(rng: np.random.Generator, n_modes: int, scheme: str = "compressed_hamiltonian") -> FockSystem:
    """Two-lead EBBM with seeded parameters and exactly ``n_modes`` modes.

    Complex hoppings and a density-density term on a two-site small system
    keep the instances generic.
    """
    if n_modes < 3:
        raise ValueError("need at least three modes")
    n_system = 1 if n_modes % 2 else 2
    L = (n_modes - n_system) // 2
    sys = build_chain(
        n_system=n_system,
        n_leads=2,
        system_onsite=list(rng.uniform(-0.5, 0.5, size=n_system)),
        system_hopping=float(rng.uniform(0.5, 1.0)),
        lead_hopping=list(rng.uniform(0.7, 1.2, size=2) * np.exp(1j * rng.uniform(0, np.pi, size=2))),
        coupling=list(rng.uniform(0.2, 0.8, size=2) * np.exp(1j * rng.uniform(0, np.pi, size=2))),
        betas=list(rng.uniform(0.5, 2.0, size=2)),
        mus=list(rng.uniform(-0.5, 0.5, size=2)),
        interaction=[(0, n_system - 1, float(rng.uniform(0.0, 1.0)))],
        extra_couplings=[("S0", "R1.0", complex(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)))]
        if n_system == 2
        else [],
    )
    return assemble_fock(truncate(sys, L, scheme, L_ref=16 * L + 16))


def spin_rue_chain(n_left: int, n_system: int, n_right: int, betas=(1.0, 2.0), **kw) -> SpinScheme:
    phi = spin_chain(n_left, n_system, n_right, **kw)
    L = (n_left, n_right) if n_right else (n_left,)
    return scheme_rue(phi, nearest_volume(phi, L), betas[: phi.n_reservoirs])


def random_spin_interaction(rng: np.random.Generator, n_sites: int = 6, max_range: int = 3, scale: float = 0.5):
    """Random decoupled interaction on ``R_1 - S - R_2`` with a one-site S."""
    mid = n_sites // 2
    partition = ((mid,), tuple(range(mid)), tuple(range(mid + 1, n_sites)))
    return random_interaction(rng, n_sites, partition, max_range=max_range, scale=scale)
