"""Cross-module invariant suites run by ``tmeplab validate``.

Every suite is isolated: an exception inside one is recorded as that
suite's failure and the remaining suites still run.
"""

from __future__ import annotations

import contextlib
import traceback
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .dynamics import (
    accumulated_perturbation,
    araki_identity_residual,
    cocycle_series,
    entropy_balance_terms,
    evolve_sign_flip,
    evolve_state,
)
from .fock import CarBasis, car_defect, dgamma, quasifree_density, two_point_function
from .matrixcore import commutator, op_norm, trace_norm
from .modular import StandardForm, commutant_from_state, connes_cocycle, slexam_B
from .samples import random_ebbm, random_hermitian, random_mixed_density, random_spec, random_spin_interaction, spin_rue_chain
from .spin import (
    derivation_bound_check,
    gibbs_state,
    interaction_norm,
    kms_residual,
    local_hamiltonian,
    nearest_volume,
    reservoir_interaction,
    scheme_hat,
    scheme_rue,
    spin_chain,
)
from .twotime import law_oracle, mgf_from_law, mgf_modular

MUTATIONS = ("evolve-sign",)


@dataclass
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)


@dataclass
class SuiteResult:
    name: str
    checks: list[Check] = field(default_factory=list)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "error": self.error,
            "checks": [dict(asdict(c), passed=c.passed) for c in self.checks],
        }


@dataclass
class ValidationReport:
    seed: int
    mutate: str | None
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    @property
    def failures(self) -> list[str]:
        return [s.name for s in self.suites if not s.passed]

    def to_dict(self) -> dict:
        return {
            "schema_version": "1.0",
            "library_version": __version__,
            "seed": self.seed,
            "mutate": self.mutate,
            "passed": self.passed,
            "failures": self.failures,
            "suites": [s.to_dict() for s in self.suites],
        }


ALPHAS = 1j * np.arange(-20, 21, 4, dtype=float)
TIMES = (0.3, 1.0, 3.0)


def _route_instances(rng):
    for d in (3, 4, 6, 8):
        spec = random_spec(rng, d)
        yield f"generic d={d}", spec, random_mixed_density(rng, d)
    for n in (3, 4, 5):
        fs = random_ebbm(rng, n)
        yield f"ebbm n={n}", fs.spec, fs.spec.rho.matrix


def suite_car(rng) -> list[Check]:
    basis = CarBasis(4)
    checks = [Check("CAR defect (4 modes)", car_defect(basis), 1e-12)]
    G = random_hermitian(rng, 4)
    T = 0.5 * np.eye(4) + 0.4 * G / np.linalg.norm(G, 2)
    rho = quasifree_density(T, basis)
    checks.append(Check("two-point function", float(np.abs(two_point_function(rho.matrix, basis) - T).max()), 1e-11))
    c = random_hermitian(rng, 4, 2.0)
    checks.append(Check("||dGamma(c)|| - ||c||_1", op_norm(dgamma(c, basis)) - trace_norm(c), 1e-10))
    a, b = random_hermitian(rng, 4), random_hermitian(rng, 4)
    lie = commutator(dgamma(a, basis), dgamma(b, basis)) - dgamma(commutator(a, b), basis)
    checks.append(Check("Lie morphism", op_norm(lie), 1e-10))
    return checks


def suite_route_agreement(rng) -> list[Check]:
    checks = []
    for name, spec, nu in _route_instances(rng):
        sf = StandardForm.of(spec.rho)
        b = commutant_from_state(sf, nu)
        worst = 0.0
        for t in TIMES:
            law = law_oracle(sf, nu, spec.eig, t)
            for a in ALPHAS:
                worst = max(worst, abs(mgf_modular(sf, b, spec.eig, t, a) - mgf_from_law(law, a)))
        checks.append(Check(f"law vs modular, {name}", worst, 1e-9))
    return checks


def suite_fluctuation(rng) -> list[Check]:
    checks = []
    for name, spec, _ in _route_instances(rng):
        sf = StandardForm.of(spec.rho)
        b = commutant_from_state(sf, spec.rho.matrix)
        worst = max(abs(mgf_modular(sf, b, spec.eig, t, 1.0) - 1.0) for t in TIMES)
        checks.append(Check(f"|F(1) - 1|, {name}", worst, 1e-10))
    return checks


def _dynamics_instances(rng):
    yield "generic d=5", random_spec(rng, 5)
    for n in (4, 6):
        yield f"ebbm n={n}", random_ebbm(rng, n).spec
    yield "spin rue 5 sites", spin_rue_chain(2, 1, 2).spec


def suite_araki(rng) -> list[Check]:
    return [
        Check(f"Araki residual, {name}, s={s}", araki_identity_residual(spec, s, 1e-10), 1e-8)
        for name, spec in _dynamics_instances(rng)
        for s in (0.5, 1.0, 2.0)
    ]


def suite_balance(rng) -> list[Check]:
    checks = []
    for name, spec in _dynamics_instances(rng):
        for s in (0.5, 1.0, 2.0):
            ent, flux = entropy_balance_terms(spec, s, 1e-10)
            checks.append(Check(f"balance residual, {name}, s={s}", abs(ent + flux), 1e-8))
            checks.append(Check(f"Ent(rho_s|rho) <= 0, {name}, s={s}", ent, 1e-12))
    return checks


def suite_slexam(rng) -> list[Check]:
    checks = []
    for name, spec in _dynamics_instances(rng):
        sf = StandardForm.of(spec.rho)
        for s in (0.5, 2.0):
            b = slexam_B(sf, spec.eig, s)
            target = evolve_state(spec, s).matrix
            checks.append(Check(f"trace distance nu_B vs omega_s, {name}, s={s}", 0.5 * trace_norm(b.state(sf) - target), 1e-10))
    return checks


def suite_cocycle(rng) -> list[Check]:
    checks = []
    spec = random_spec(rng, 4, coupling=0.4)
    for s in (0.5, 1.0):
        Q = accumulated_perturbation(spec, s).entries
        rho_s = evolve_state(spec, s)
        sf = StandardForm.of(spec.rho)
        for z in (1.0, 1j, np.exp(0.7j)):
            exact = connes_cocycle(sf, rho_s, z)
            err = op_norm(cocycle_series(spec.rho, Q, z, 12) - exact)
            checks.append(Check(f"order-12 cocycle series, s={s}, z={z:.2f}", err, 1e-7))
    return checks


def suite_sigma_routes(rng) -> list[Check]:
    checks = []
    for n in (4, 6):
        fs = random_ebbm(rng, n)
        checks.append(Check(f"sigma route (a) vs (b), ebbm n={n}", fs.sigma_route_discrepancy, 1e-10))
        checks.append(Check(f"free invariance, ebbm n={n}", fs.spec.free_invariance_defect, 1e-10))
    return checks


def suite_spin(rng) -> list[Check]:
    checks = []
    phi = random_spin_interaction(rng, 6)
    lam = 0.8
    for j in (1, 2):
        checks.append(
            Check(f"||Phi_{j}|| <= ||Phi||", interaction_norm(reservoir_interaction(phi, j), lam) - interaction_norm(phi, lam), 0.0)
        )
    sites = (0, 1, 2)
    H = local_hamiltonian(phi, sites).entries
    g = gibbs_state(phi, sites, 1.0)
    worst = 0.0
    for _ in range(5):
        A, B = random_hermitian(rng, 8), rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        worst = max(worst, kms_residual(g, H, 1.0, A, B))
    checks.append(Check("KMS identity", worst, 1e-10))
    for n in (1, 2, 3):
        A = random_hermitian(rng, 2)
        lhs, rhs = derivation_bound_check(phi, lam, A, (3,), n)
        checks.append(Check(f"derivation bound slack, n={n}", lhs - rhs, 1e-10))
    chain = spin_chain(3, 1, 2)
    vol = nearest_volume(chain, (2, 2), (2, 2))
    rue, hat = scheme_rue(chain, vol, (1.0, 2.0)), scheme_hat(chain, vol, (1.0, 2.0))
    diff = max(float(np.abs(a.matrix - b.matrix).max()) for a, b in zip(rue.reservoir_states, hat.reservoir_states))
    checks.append(Check("nested scheme without nesting reproduces local Gibbs", diff, 1e-13))
    checks.append(Check("Ruelle observable vs i[log rho, V]", rue.sigma_check, 1e-10))
    return checks


SUITES: dict[str, Callable] = {
    "car": suite_car,
    "route_agreement": suite_route_agreement,
    "fluctuation_identity": suite_fluctuation,
    "araki_identity": suite_araki,
    "entropy_balance": suite_balance,
    "commutant_state": suite_slexam,
    "cocycle_series": suite_cocycle,
    "sigma_routes": suite_sigma_routes,
    "spin": suite_spin,
}


def run_validation(seed: int = 0, mutate: str | None = None, suites: list[str] | None = None) -> ValidationReport:
    """Run the invariant suites; each suite gets its own seeded generator."""
    if mutate is not None and mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutate!r}")
    names = list(SUITES) if suites is None else suites
    results = []
    ctx = evolve_sign_flip() if mutate == "evolve-sign" else contextlib.nullcontext()
    with ctx:
        for k, name in enumerate(names):
            rng = np.random.default_rng([seed, k])
            res = SuiteResult(name)
            try:
                res.checks = SUITES[name](rng)
            except Exception as exc:  # noqa: BLE001 - a failing suite must not stop the others
                res.error = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
            results.append(res)
    return ValidationReport(seed, mutate, results)
