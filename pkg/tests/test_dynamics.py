import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmeplab.dynamics import (
    EvolutionSpec,
    accumulated_perturbation,
    adaptive_simpson,
    araki_identity_residual,
    cocycle_series,
    entropy_balance_residual,
    ep_observable,
    evolve_state,
    free_heisenberg,
    heisenberg,
    interaction_cocycle,
    relative_entropy,
)
from tmeplab.errors import AccuracyError, FaithfulnessError, PreconditionError, ResourceError
from tmeplab.matrixcore import DensityMatrix, matrix_function, op_norm
from tmeplab.modular import StandardForm, connes_cocycle
from tmeplab.samples import random_hermitian, random_spec, random_state

seeds = st.integers(0, 2**32 - 1)


def qubit_pair_spec(rng):
    """Two qubits with a free-invariant product state and an exchange coupling."""
    Z, X, Y = np.diag([1.0, -1.0]), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]])
    I = np.eye(2)
    H_fr = 0.7 * np.kron(Z, I) + 0.3 * np.kron(I, Z)
    V = 0.4 * (np.kron(X, X) + np.kron(Y, Y))
    rho = DensityMatrix.from_log(-1.0 * 0.7 * np.kron(Z, I) - 2.0 * 0.3 * np.kron(I, Z))
    return EvolutionSpec.build(H_fr, V, rho)


def test_spec_requires_sum():
    rho = DensityMatrix.from_array(np.eye(2) / 2)
    with pytest.raises(ValueError):
        EvolutionSpec(
            H=EvolutionSpec.build(np.eye(2), np.zeros((2, 2)), rho).H,
            H_fr=EvolutionSpec.build(np.zeros((2, 2)), np.zeros((2, 2)), rho).H,
            V=EvolutionSpec.build(np.zeros((2, 2)), np.zeros((2, 2)), rho).V,
            rho=rho,
        )


def test_trivial_evolutions(rng):
    spec = random_spec(rng, 4)
    A = random_hermitian(rng, 4)
    assert np.abs(heisenberg(spec, 0.0, A) - A).max() < 1e-14
    assert np.abs(evolve_state(spec, 0.0).matrix - spec.rho.matrix).max() < 1e-14
    H = spec.H.entries
    assert np.abs(heisenberg(spec, 2.3, H) - H).max() < 1e-12


def test_commuting_state_is_stationary(rng):
    spec = random_spec(rng, 4, coupling=0.0)
    assert np.abs(evolve_state(spec, 1.7).matrix - spec.rho.matrix).max() < 1e-13
    assert op_norm(ep_observable(spec).entries) == 0.0


def test_zero_time_and_zero_sigma(rng):
    spec = random_spec(rng, 4)
    assert op_norm(accumulated_perturbation(spec, 0.0).entries) == 0.0
    decoupled = random_spec(rng, 4, coupling=0.0)
    assert op_norm(accumulated_perturbation(decoupled, 1.0).entries) == 0.0
    assert entropy_balance_residual(decoupled, 1.0) < 1e-14


def test_ep_observable_needs_faithful_state():
    spec = EvolutionSpec.build(np.eye(2), np.array([[0, 1], [1, 0]]), DensityMatrix.from_array(np.diag([1.0, 0.0])))
    with pytest.raises(FaithfulnessError):
        ep_observable(spec)


def test_araki_identity_on_qubit_pair(rng):
    spec = qubit_pair_spec(rng)
    assert spec.free_invariance_defect < 1e-14
    assert araki_identity_residual(spec, 1.0, 1e-10) <= 1e-9


def test_araki_identity_precondition(rng):
    spec = random_spec(rng, 3)
    broken = EvolutionSpec.build(spec.H_fr.entries + random_hermitian(rng, 3), spec.V.entries, spec.rho)
    with pytest.raises(PreconditionError):
        araki_identity_residual(broken, 1.0)


def test_araki_identity_with_zero_perturbation(rng):
    spec = random_spec(rng, 4, coupling=0.0)
    assert araki_identity_residual(spec, 2.0) < 1e-13


def test_interaction_cocycle(rng):
    spec = random_spec(rng, 5)
    s = 0.8
    G = interaction_cocycle(spec, s)
    assert np.abs(G @ G.conj().T - np.eye(5)).max() < 1e-11
    assert np.abs(interaction_cocycle(spec, 0.0) - np.eye(5)).max() < 1e-14
    A = random_hermitian(rng, 5)
    lhs = G @ free_heisenberg(spec, s, A) @ G.conj().T
    assert op_norm(lhs - heisenberg(spec, s, A)) <= 1e-10
    # d/ds Gamma_s = i Gamma_s tau_fr^s(V)
    h = 1e-5
    deriv = (interaction_cocycle(spec, s + h) - interaction_cocycle(spec, s - h)) / (2 * h)
    rhs = 1j * G @ free_heisenberg(spec, s, spec.V.entries)
    assert op_norm(deriv - rhs) <= 1e-8


def test_relative_entropy_of_state_with_itself(rng):
    rho = random_state(rng, 4)
    assert abs(relative_entropy(rho, rho)) < 1e-12


def test_cocycle_series_trivial_cases(rng):
    spec = random_spec(rng, 3)
    Q = accumulated_perturbation(spec, 0.5).entries
    assert np.abs(cocycle_series(spec.rho, Q, 0.0, 12) - np.eye(3)).max() == 0.0
    assert np.abs(cocycle_series(spec.rho, np.zeros((3, 3)), 1.0, 12) - np.eye(3)).max() == 0.0
    with pytest.raises(ResourceError):
        cocycle_series(spec.rho, Q, 1.0, 65)


def test_cocycle_series_commuting_case():
    """With ``[Q, rho] = 0`` the series is the exponential series of ``z Q``."""
    rho = DensityMatrix.from_array(np.diag([0.5, 0.3, 0.2]))
    Q = np.diag([0.3, -0.2, 0.1])
    z = 0.7 + 0.2j
    out = cocycle_series(rho, Q, z, 20)
    assert np.abs(out - np.diag(np.exp(z * np.diag(Q)))).max() < 1e-14


def test_cocycle_series_qubit_pair(rng):
    spec = qubit_pair_spec(rng)
    s = 1.0
    Q = accumulated_perturbation(spec, s).entries
    exact_state = evolve_state(spec, s)
    sf = StandardForm.of(spec.rho)
    for z in (1.0, -1j, np.exp(0.3j)):
        err = op_norm(cocycle_series(spec.rho, Q, z, 12) - connes_cocycle(sf, exact_state, z))
        assert err <= 1e-7


def test_adaptive_simpson_accuracy_error():
    with pytest.raises(AccuracyError):
        adaptive_simpson(lambda t: np.sign(t - 1 / 3), 0.0, 1.0, 1e-14, max_depth=4)


@given(st.floats(-3.0, 3.0), st.floats(0.1, 4.0), st.floats(-2.0, 2.0))
def test_adaptive_simpson_accuracy(a, w, phase):
    b = a + 2.0
    exact = (np.sin(w * b + phase) - np.sin(w * a + phase)) / w
    val = adaptive_simpson(lambda t: np.cos(w * t + phase), a, b, 1e-10)
    assert abs(val - exact) <= 1e-9


@given(seeds, st.integers(2, 6), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_group_law(seed, d, t, s):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, d)
    A = random_hermitian(rng, d)
    lhs = heisenberg(spec, t, heisenberg(spec, s, A))
    assert op_norm(lhs - heisenberg(spec, t + s, A)) <= 1e-11


@given(seeds, st.integers(2, 6), st.floats(-3.0, 3.0))
def test_duality(seed, d, s):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, d)
    A = random_hermitian(rng, d)
    lhs = evolve_state(spec, s).expect(A)
    rhs = spec.rho.expect(heisenberg(spec, s, A))
    assert abs(lhs - rhs) <= 1e-12


@given(seeds, st.integers(2, 6))
def test_sigma_is_hermitian(seed, d):
    sig = ep_observable(random_spec(np.random.default_rng(seed), d)).entries
    assert np.abs(sig - sig.conj().T).max() <= 1e-11


@given(seeds, st.integers(2, 6), st.floats(0.1, 2.0))
def test_araki_identity(seed, d, s):
    spec = random_spec(np.random.default_rng(seed), d)
    assert araki_identity_residual(spec, s, 1e-10) <= 1e-9


@given(seeds, st.integers(2, 6), st.floats(0.1, 2.0))
def test_entropy_balance(seed, d, s):
    spec = random_spec(np.random.default_rng(seed), d)
    assert entropy_balance_residual(spec, s, 1e-10) <= 1e-9


@given(seeds, st.integers(1, 6))
def test_relative_entropy_sign(seed, d):
    rng = np.random.default_rng(seed)
    nu, rho = random_state(rng, d), random_state(rng, d)
    assert relative_entropy(nu, rho) <= 1e-12


@given(seeds, st.integers(2, 5))
def test_heisenberg_matches_matrix_exponential(seed, d):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, d)
    A = random_hermitian(rng, d)
    U = matrix_function(spec.H.entries, "exp", 1j * 0.9)
    assert op_norm(U @ A @ U.conj().T - heisenberg(spec, 0.9, A)) <= 1e-11
