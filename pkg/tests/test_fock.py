from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmeplab.errors import FaithfulnessError, ResourceError, ShapeError
from tmeplab.fock import (
    CarBasis,
    car_defect,
    dgamma,
    gauge_invariance_defect,
    jordan_wigner,
    number_operator,
    one_particle_log,
    quasifree_density,
    two_point_function,
)
from tmeplab.matrixcore import commutator, op_norm, trace_norm
from tmeplab.samples import random_hermitian, random_unitary

seeds = st.integers(0, 2**32 - 1)


def random_T(rng, n, spread=0.4):
    G = random_hermitian(rng, n)
    return 0.5 * np.eye(n) + spread * G


def dense_dgamma(c, basis):
    """Reference second quantization from the dense annihilators."""
    n = basis.n_modes
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    for x in range(n):
        for y in range(n):
            out += c[x, y] * basis.adag(x) @ basis.a(y)
    return out


def test_single_mode_annihilator():
    assert np.array_equal(CarBasis(1).a(0), np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_budget():
    with pytest.raises(ResourceError):
        jordan_wigner(13)
    assert jordan_wigner(13, max_modes=13).n_modes == 13


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_car_relations(n):
    assert car_defect(CarBasis(n)) <= 1e-12


@pytest.mark.parametrize("n", [1, 3, 5])
def test_number_operator_binomial_multiplicities(n):
    basis = CarBasis(n)
    N = dgamma(np.eye(n), basis)
    assert np.array_equal(N, number_operator(basis))
    w = np.round(np.diag(N).real).astype(int)
    assert [int(np.sum(w == k)) for k in range(n + 1)] == [comb(n, k) for k in range(n + 1)]


def test_dgamma_shape_error():
    with pytest.raises(ShapeError):
        dgamma(np.eye(3), CarBasis(2))


def test_tracial_state():
    basis = CarBasis(3)
    rho = quasifree_density(0.5 * np.eye(3), basis)
    assert np.abs(rho.matrix - np.eye(8) / 8).max() < 1e-15


def test_diagonal_T_gives_product_weights():
    t = np.array([0.2, 0.7, 0.4])
    basis = CarBasis(3)
    rho = quasifree_density(np.diag(t), basis)
    occ = basis.occupations
    weights = np.prod(np.where(occ == 1, t, 1 - t), axis=1)
    assert np.abs(np.diag(rho.matrix) - weights).max() < 1e-15
    assert np.abs(rho.matrix - np.diag(weights)).max() < 1e-15


def test_non_faithful_T():
    with pytest.raises(FaithfulnessError):
        one_particle_log(np.diag([1.0, 0.5]))


def test_gauge_defect():
    basis = CarBasis(2)
    assert gauge_invariance_defect(dgamma(np.ones((2, 2)), basis), basis) == 0.0
    field = basis.a(0) + basis.adag(0)
    assert gauge_invariance_defect(field, basis) > 0.5


@given(seeds, st.integers(1, 5))
def test_dgamma_matches_dense_construction(seed, n):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    basis = CarBasis(n)
    assert np.abs(dgamma(c, basis) - dense_dgamma(c, basis)).max() <= 1e-12


@given(seeds, st.integers(1, 5))
def test_lie_morphism(seed, n):
    rng = np.random.default_rng(seed)
    a, b = random_hermitian(rng, n), random_hermitian(rng, n)
    basis = CarBasis(n)
    lhs = commutator(dgamma(a, basis), dgamma(b, basis))
    assert op_norm(lhs - dgamma(commutator(a, b), basis)) <= 1e-10


@given(seeds, st.integers(1, 5), st.floats(0.1, 10.0))
def test_dgamma_norm_bound(seed, n, scale):
    c = random_hermitian(np.random.default_rng(seed), n, scale)
    assert op_norm(dgamma(c, CarBasis(n))) <= trace_norm(c) + 1e-10


@given(seeds, st.integers(1, 5))
def test_two_point_function_recovers_T(seed, n):
    T = random_T(np.random.default_rng(seed), n)
    basis = CarBasis(n)
    rho = quasifree_density(T, basis)
    assert np.abs(two_point_function(rho.matrix, basis) - T).max() <= 1e-11


@given(seeds, st.integers(1, 4))
def test_unitary_covariance(seed, n):
    """The state of ``u T u^dag`` has the same spectrum as the state of ``T``."""
    rng = np.random.default_rng(seed)
    T = random_T(rng, n)
    u = random_unitary(rng, n)
    basis = CarBasis(n)
    w1 = np.linalg.eigvalsh(quasifree_density(T, basis).matrix)
    w2 = np.linalg.eigvalsh(quasifree_density(u @ T @ u.conj().T, basis).matrix)
    assert np.abs(w1 - w2).max() <= 1e-12


@given(seeds, st.integers(1, 4))
def test_quasifree_state_is_gauge_invariant(seed, n):
    T = random_T(np.random.default_rng(seed), n)
    basis = CarBasis(n)
    assert gauge_invariance_defect(quasifree_density(T, basis).matrix, basis) <= 1e-12
