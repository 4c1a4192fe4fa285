"""Photon-counting filter for the subset-pair hierarchy.

The counting filter is known in Heisenberg form through the rate functional

    Delta^{l;r}(X) = pi^{l;r}(L^dag X L) + sum_mu c_mu(r) pi^{l;r mu}(L^dag X S)
                     + sum_nu conj(c_nu(l)) pi^{l nu;r}(S^dag X L)
                     + sum_nu sum_mu conj(c_nu(l)) c_mu(r) pi^{l nu;r mu}(S^dag X S)

with pi^{l;r}(X) = Tr[(rho^{l;r})^dag X]. Its trace-pairing adjoint J acts on
the hierarchy directly; between detections the state follows the master
drift minus (J - lambda rho) and a detection replaces rho by J / lambda,
where lambda = Re Tr J^{top} is the detection rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .homodyne import _drift_component
from .master import DensityHierarchy
from .operators import SystemModel, trace_pairing
from .photons import HierarchyStructure, PulseSet, SubsetIndex
from .trajectory import BatchIntegrator, NoiseBlocks, raise_on_failure, run_batch

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-12
RATE_WARN = 0.1


class JumpRateError(ValueError):
    """A detection was requested where the detection rate vanishes."""


def delta_dual(model: SystemModel, h: DensityHierarchy, l: SubsetIndex, r: SubsetIndex,
               t: float) -> np.ndarray:
    """Jump operator J^{l;r}(rho), the Schrodinger-side adjoint of Delta^{l;r}."""
    st = h.structure
    L, Ld, S, Sd = model.L, model.Ld, model.S, model.Sd
    cr, cl = st.coefficients(r, t), st.coefficients(l, t)
    out = L @ h.component(l, r) @ Ld
    for mu, c in cr.items():
        out = out + np.conj(c) * L @ h.component(l, r.add(mu)) @ Sd
    for nu, c in cl.items():
        out = out + c * S @ h.component(l.add(nu), r) @ Ld
    for nu, a in cl.items():
        for mu, b in cr.items():
            out = out + a * np.conj(b) * S @ h.component(l.add(nu), r.add(mu)) @ Sd
    return out


def delta_heisenberg(model: SystemModel, h: DensityHierarchy, l: SubsetIndex, r: SubsetIndex,
                     t: float, X) -> complex:
    """Delta^{l;r}(X) evaluated on the Heisenberg side, term by term."""
    st = h.structure
    X = np.asarray(X, dtype=complex)
    L, Ld, S, Sd = model.L, model.Ld, model.S, model.Sd

    def pi(a, b, Y):
        return complex(trace_pairing(h.component(a, b), Y))

    cr, cl = st.coefficients(r, t), st.coefficients(l, t)
    out = pi(l, r, Ld @ X @ L)
    for mu, c in cr.items():
        out += c * pi(l, r.add(mu), Ld @ X @ S)
    for nu, c in cl.items():
        out += np.conj(c) * pi(l.add(nu), r, Sd @ X @ L)
    for nu, a in cl.items():
        for mu, b in cr.items():
            out += np.conj(a) * b * pi(l.add(nu), r.add(mu), Sd @ X @ S)
    return out


def photocount_step(model: SystemModel, h: DensityHierarchy, t: float, dt: float,
                    jumped: bool) -> DensityHierarchy:
    """One step of the counting filter, looping over components (reference form)."""
    st = h.structure
    top = SubsetIndex(st.n)
    lam = float(np.trace(delta_dual(model, h, top, top, t)).real)
    if jumped and lam < RATE_FLOOR:
        raise JumpRateError(f"jump at vanishing rate {lam:.3g} (t={t:g})")
    out = np.empty_like(h.data)
    for c, (a, b) in enumerate(st.pairs):
        l, r = st.subsets[a], st.subsets[b]
        J = delta_dual(model, h, l, r, t)
        if jumped:
            out[c] = J / lam
        else:
            out[c] = h.data[c] + (_drift_component(model, h, l, r, t) - (J - h.data[c] * lam)) * dt
    return DensityHierarchy(st, out)


@dataclass
class JumpRecord:
    """One counting trajectory. ``counts`` and ``conditional`` are sampled at ``times``."""

    seed: int | None
    times: np.ndarray
    dt: float
    jump_times: np.ndarray
    counts: np.ndarray
    conditional: dict[str, np.ndarray]
    trace_drift: np.ndarray
    structure: HierarchyStructure
    states: np.ndarray | None = None

    def hierarchy(self, i: int) -> DensityHierarchy:
        return DensityHierarchy(self.structure, self.states[i])


class PhotocountIntegrator(BatchIntegrator):
    """Batched counting filter with Bernoulli detections of probability lambda dt per step."""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self._warned = False

    def make_step(self, seeds=None, jump_steps: Sequence[Sequence[int]] | None = None):
        """Return (step function, per-trajectory lists of jump step indices)."""
        dt = self.dt
        kernel = self.kernel
        if jump_steps is None:
            noise = NoiseBlocks(seeds, "uniform")
            B = len(seeds)
            forced = None
        else:
            noise = None
            B = len(jump_steps)
            forced = [set(js) for js in jump_steps]
        jumps: list[list[int]] = [[] for _ in range(B)]

        def step(y, k, t):
            drift, J = kernel.apply(("drift", "jump"), y, t)
            lam = self.top_trace(J).real
            if not self._warned and np.max(lam, initial=0.0) * dt > RATE_WARN:
                log.warning("photocount: lambda*dt = %.3g exceeds %.1f at t=%g; reduce dt",
                            float(np.max(lam)) * dt, RATE_WARN, t)
                self._warned = True
            if noise is None:
                jumped = np.array([k in f for f in forced])
            else:
                jumped = noise.draw(k) < lam * dt
            y = y + (drift - J + y * lam[:, None]) * dt
            if jumped.any():
                idx = np.nonzero(jumped)[0]
                if np.any(lam[idx] < RATE_FLOOR):
                    raise JumpRateError(f"jump at vanishing rate (t={t:g}, step={k})")
                y[idx] = J[idx] / lam[idx, None]
                for i in idx:
                    jumps[i].append(k)
            return y

        return step, jumps


def jump_steps_from_times(times, dt: float, steps: int) -> list[int]:
    """Map detection times to step indices k with t in [k dt, (k+1) dt)."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size and (np.any(np.diff(times) <= 0)):
        raise ValueError("jump times must be strictly increasing")
    if times.size and (times[0] < 0 or times[-1] > steps * dt * (1 + 1e-12)):
        raise ValueError(f"jump times must lie in [0, {steps * dt:g}]")
    ks = [min(int(np.floor(t / dt + 1e-9)), steps - 1) for t in times]
    if len(set(ks)) != len(ks):
        raise ValueError("two jump times fall in the same integration step")
    return ks


def counts_at(jump_steps: Sequence[int], snapshot_steps: np.ndarray) -> np.ndarray:
    """Cumulative detections completed by each snapshot step."""
    js = np.sort(np.asarray(jump_steps, dtype=int))
    return np.searchsorted(js, snapshot_steps, side="left")


def simulate_photocount(model: SystemModel, pulses: PulseSet, t_final: float, dt: float,
                        seed: int | None = 0, *, stride: int = 1,
                        observables: Mapping[str, np.ndarray] | None = None,
                        replay=None, keep_states: bool = True) -> JumpRecord:
    """Simulate one counting trajectory, or filter the given detection times (``replay``)."""
    integ = PhotocountIntegrator(model, pulses, t_final, dt)
    if replay is not None:
        ks = jump_steps_from_times(replay, integ.dt, integ.steps)
        step, jumps = integ.make_step(jump_steps=[ks])
        seed = None
    else:
        if seed is None:
            raise ValueError("seed is required when no replay record is given")
        step, jumps = integ.make_step(seeds=[seed])
    res = run_batch(integ, 1, step, dict(observables or {}), stride=stride,
                    keep_states=keep_states)
    raise_on_failure(res, dt)
    snaps = integ.snapshot_steps(stride)
    states = integ.kernel.unflatten(res.states[0]) if keep_states else None
    return JumpRecord(
        seed=seed, times=res.times, dt=integ.dt,
        jump_times=np.array(jumps[0], dtype=float) * integ.dt,
        counts=counts_at(jumps[0], snaps),
        conditional={lab: res.observables[0, :, i] for i, lab in enumerate(res.labels)},
        trace_drift=res.trace_drift[0], structure=integ.structure, states=states)
