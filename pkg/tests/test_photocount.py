import numpy as np
import pytest

from photonfilter.master import init_hierarchy, master_rhs
from photonfilter.photocount import (JumpRateError, PhotocountIntegrator, counts_at, delta_dual,
                                     delta_heisenberg, jump_steps_from_times, photocount_step,
                                     simulate_photocount)
from photonfilter.photons import HierarchyStructure, PulseSet
from photonfilter.validate import mixed_pulses, random_hierarchy, random_model

P_E = np.diag([1.0, 0.0]).astype(complex)


def test_jump_map_is_adjoint_of_rate_functional():
    rng = np.random.default_rng(0)
    model = random_model(3, rng)
    st = HierarchyStructure(mixed_pulses(2))
    h = random_hierarchy(st, 3, rng)
    for _ in range(20):
        X = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        a, b = (st.subsets[i] for i in rng.integers(0, st.size, 2))
        J = delta_dual(model, h, a, b, 3.1)
        assert abs(np.trace(J.conj().T @ X) - delta_heisenberg(model, h, a, b, 3.1, X)) < 1e-12


def test_vacuum_ground_state_never_clicks(atom):
    rec = simulate_photocount(atom, PulseSet.from_shapes([], 6.0, 1e-3), 6.0, 1e-3, seed=3)
    assert rec.jump_times.size == 0 and rec.counts[-1] == 0


def test_excited_atom_jumps_to_ground(excited_atom):
    pulses = PulseSet.from_shapes([], 1.0, 1e-3)
    st = HierarchyStructure(pulses)
    h = init_hierarchy(excited_atom, pulses, st)
    out = photocount_step(excited_atom, h, 0.0, 1e-3, jumped=True)
    assert np.allclose(out.top, np.diag([0.0, 1.0]), atol=1e-14)


def test_no_jump_step_is_drift_minus_jump_plus_rate():
    rng = np.random.default_rng(1)
    model = random_model(2, rng)
    st = HierarchyStructure(mixed_pulses(1))
    h = init_hierarchy(model, mixed_pulses(1), st)
    t, dt = 3.0, 1e-3
    out = photocount_step(model, h, t, dt, jumped=False)
    top = st.subsets[0]
    J = np.array([delta_dual(model, h, st.subsets[a], st.subsets[b], t) for a, b in st.pairs])
    lam = np.trace(delta_dual(model, h, top, top, t)).real
    ref = h.data + dt * (master_rhs(model, h, t).data - J + lam * h.data)
    assert np.allclose(out.data, ref, atol=1e-14)


def test_jump_at_zero_rate_is_an_error(atom):
    pulses = PulseSet.from_shapes([], 1.0, 1e-3)
    with pytest.raises(JumpRateError):
        simulate_photocount(atom, pulses, 1.0, 1e-3, replay=[0.5])


def test_replay_reproduces_trajectory(atom):
    pulses = PulseSet.gaussians([1.46, 1.46], [3.0, 3.0], 10.0, 1e-3)
    a = simulate_photocount(atom, pulses, 10.0, 1e-3, seed=5, observables={"P_e": P_E}, stride=10)
    b = simulate_photocount(atom, pulses, 10.0, 1e-3, replay=a.jump_times,
                            observables={"P_e": P_E}, stride=10)
    assert np.array_equal(a.counts, b.counts)
    assert np.allclose(a.conditional["P_e"], b.conditional["P_e"], atol=1e-12)
    assert np.max(np.abs(a.trace_drift)) < 1e-4


def test_batched_steps_match_reference():
    rng = np.random.default_rng(2)
    model = random_model(2, rng)
    pulses = mixed_pulses(2)
    st = HierarchyStructure(pulses)
    h = init_hierarchy(model, pulses, st)
    h.data += 0.1 * random_hierarchy(st, 2, rng).data
    for c, (a, b) in enumerate(st.pairs):
        if a == b:
            h.data[c] = 0.5 * (h.data[c] + h.data[c].conj().T)
    integ = PhotocountIntegrator(model, pulses, 8.0, 2e-3)
    k = 1600
    step, jumps = integ.make_step(jump_steps=[[], [k]])
    y = np.repeat(integ.kernel.flatten(h.data)[None], 2, axis=0)
    out = step(y, k, k * 2e-3)
    for i, jumped in enumerate((False, True)):
        ref = photocount_step(model, h, k * 2e-3, 2e-3, jumped).data
        assert np.allclose(integ.kernel.unflatten(out[i]), ref, atol=1e-13)
    assert jumps == [[], [k]]


def test_jump_time_validation():
    assert jump_steps_from_times([0.0105, 0.5], 1e-2, 100) == [1, 50]
    with pytest.raises(ValueError, match="increasing"):
        jump_steps_from_times([0.5, 0.2], 1e-2, 100)
    with pytest.raises(ValueError, match="same"):
        jump_steps_from_times([0.501, 0.505], 1e-2, 100)
    with pytest.raises(ValueError, match="lie in"):
        jump_steps_from_times([2.0], 1e-2, 100)


def test_counts_at_snapshots():
    assert list(counts_at([3, 7], np.array([0, 3, 4, 8]))) == [0, 0, 1, 2]
