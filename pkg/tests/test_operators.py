import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonfilter.operators import (DUAL_KIND, SUPEROP_KINDS, DimensionError, SystemModel,
                                    heisenberg_superop, schrodinger_superop, trace_pairing,
                                    verify_duality)
from photonfilter.validate import random_model

SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)


def test_two_level_atom_layout():
    m = SystemModel.two_level_atom(kappa=4.0, excited=True)
    assert np.allclose(m.L, 2.0 * SIGMA_MINUS)
    assert np.allclose(m.initial_projector, np.diag([1.0, 0.0]))
    assert np.allclose(m.S, np.eye(2)) and np.allclose(m.H, 0)


def test_lindblad_decay_of_excited_qubit():
    m = SystemModel.two_level_atom()
    rho = np.diag([1.0, 0.0]).astype(complex)
    assert np.allclose(schrodinger_superop("00", m, rho), np.diag([-1.0, 1.0]))


@pytest.mark.parametrize("kind", SUPEROP_KINDS)
def test_heisenberg_maps_kill_identity(kind):
    m = random_model(3, np.random.default_rng(1))
    assert np.allclose(heisenberg_superop(kind, m, np.eye(3)), 0, atol=1e-13)


@pytest.mark.parametrize("kind", SUPEROP_KINDS)
def test_schrodinger_maps_are_traceless(kind):
    rng = np.random.default_rng(2)
    m = random_model(3, rng)
    rho = rng.standard_normal((5, 3, 3)) + 1j * rng.standard_normal((5, 3, 3))
    assert np.allclose(np.trace(schrodinger_superop(kind, m, rho), axis1=-2, axis2=-1), 0,
                       atol=1e-12)


def test_lindblad_generator_preserves_hermiticity():
    rng = np.random.default_rng(3)
    m = random_model(4, rng)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    out = schrodinger_superop("00", m, a + a.conj().T)
    assert np.allclose(out, out.conj().T, atol=1e-12)


def test_cross_maps_pair_with_opposite_index():
    assert DUAL_KIND == {"00": "00", "01": "10", "10": "01", "11": "11"}


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_duality_on_random_models(d, seed):
    rng = np.random.default_rng(seed)
    assert verify_duality(random_model(d, rng), trials=20, seed=seed).passed


def test_duality_detects_a_broken_map():
    def broken(which, model, rho):
        out = schrodinger_superop(which, model, rho)
        return -out if which == "01" else out

    report = verify_duality(random_model(3, np.random.default_rng(4)), trials=20, schrodinger=broken)
    assert not report.passed
    assert report.max_deviation["01"] > 1e-3
    assert report.max_deviation["00"] < 1e-12


def test_same_index_pairing_is_not_an_adjoint():
    rng = np.random.default_rng(5)
    m = random_model(3, rng)
    rho = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    X = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    lhs = trace_pairing(schrodinger_superop("01", m, rho), X)
    assert abs(lhs - trace_pairing(rho, heisenberg_superop("01", m, X))) > 1e-6
    assert abs(lhs - trace_pairing(rho, heisenberg_superop("10", m, X))) < 1e-12


@pytest.mark.parametrize("field,value,message", [
    ("S", 2 * np.eye(2), "unitary"),
    ("H", np.array([[0, 1], [0, 0]]), "Hermitian"),
    ("initial_state", np.array([1.0, 1.0]), "norm"),
])
def test_model_validation(field, value, message):
    kw = dict(S=np.eye(2), L=SIGMA_MINUS, H=np.zeros((2, 2)), initial_state=np.array([0, 1.0]))
    kw[field] = value
    with pytest.raises(ValueError, match=message):
        SystemModel(**kw)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        SystemModel(S=np.eye(3), L=SIGMA_MINUS, H=np.zeros((2, 2)), initial_state=[0, 1])
    m = SystemModel.two_level_atom()
    with pytest.raises(DimensionError):
        schrodinger_superop("00", m, np.eye(3))
    with pytest.raises(ValueError, match="unknown"):
        heisenberg_superop("22", m, np.eye(2))
