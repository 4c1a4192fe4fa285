"""Homodyne filter for the subset-pair hierarchy.

The measured quadrature Y = B + B^dag drives every component through the
gain operator

    S-bar^{l;r} = L rho^{l;r} + rho^{l;r} L^dag
                  + sum_{mu not in r} conj(c_mu(r)) rho^{l;r mu} S^dag
                  + sum_{nu not in l} c_nu(l) S rho^{l nu;r}

and the innovation dW = dY - m dt with m = Re Tr S-bar^{top}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .master import DensityHierarchy, Kernel
from .operators import SystemModel, schrodinger_superop
from .photons import HierarchyStructure, PulseSet, SubsetIndex
from .trajectory import (IMAG_TOL, BatchIntegrator, NoiseBlocks, raise_on_failure, run_batch)

log = logging.getLogger(__name__)


def sbar(model: SystemModel, h: DensityHierarchy, l: SubsetIndex, r: SubsetIndex,
         t: float) -> np.ndarray:
    """Gain operator S-bar^{l;r} at time t, evaluated component by component."""
    st = h.structure
    rho = h.component(l, r)
    out = model.L @ rho + rho @ model.Ld
    for mu, c in st.coefficients(r, t).items():
        out = out + np.conj(c) * h.component(l, r.add(mu)) @ model.Sd
    for nu, c in st.coefficients(l, t).items():
        out = out + c * model.S @ h.component(l.add(nu), r)
    return out


def _drift_component(model, h, l, r, t):
    """Master drift of one component, written directly from the hierarchy rule."""
    cr = h.structure.coefficients(r, t)
    cl = h.structure.coefficients(l, t)
    out = schrodinger_superop("00", model, h.component(l, r))
    for mu, c in cr.items():
        out = out + np.conj(c) * schrodinger_superop("10", model, h.component(l, r.add(mu)))
    for nu, c in cl.items():
        out = out + c * schrodinger_superop("01", model, h.component(l.add(nu), r))
    for nu, a in cl.items():
        for mu, b in cr.items():
            out = out + a * np.conj(b) * schrodinger_superop(
                "11", model, h.component(l.add(nu), r.add(mu)))
    return out


def homodyne_step(model: SystemModel, h: DensityHierarchy, t: float, dt: float,
                  dY: float) -> DensityHierarchy:
    """One Euler-Maruyama step of the filter for the measured increment dY on [t, t+dt).

    Reference implementation that loops over components; the batched
    engine used by :func:`simulate_homodyne` must agree with it.
    """
    st = h.structure
    top = SubsetIndex(st.n)
    m = float(np.trace(sbar(model, h, top, top, t)).real)
    innov = dY - m * dt
    out = np.empty_like(h.data)
    for c, (a, b) in enumerate(st.pairs):
        l, r = st.subsets[a], st.subsets[b]
        rho = h.data[c]
        gain = sbar(model, h, l, r, t) - rho * m
        out[c] = rho + _drift_component(model, h, l, r, t) * dt + gain * innov
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite hierarchy after homodyne step at t={t:g}")
    return DensityHierarchy(st, out)


@dataclass
class TrajectoryRecord:
    """One conditioned trajectory.

    ``dY`` and ``trace_drift`` are per step (lengths steps and steps + 1);
    ``conditional`` and ``states`` are sampled at ``times``.
    """

    seed: int | None
    times: np.ndarray
    dt: float
    dY: np.ndarray
    conditional: dict[str, np.ndarray]
    trace_drift: np.ndarray
    structure: HierarchyStructure
    states: np.ndarray | None = None      # (snapshots, C, d, d)

    def hierarchy(self, i: int) -> DensityHierarchy:
        return DensityHierarchy(self.structure, self.states[i])


class HomodyneIntegrator(BatchIntegrator):
    """Batched homodyne filter. Records are synthesized from seeds or replayed."""

    def __init__(self, *args, renormalize: bool = False, **kw):
        super().__init__(*args, **kw)
        self.renormalize = renormalize
        if renormalize:
            log.info("homodyne: per-step renormalization of the top trace enabled")
        self._imag_reported = False

    def mean_current(self, sb: np.ndarray) -> np.ndarray:
        tr = self.top_trace(sb)
        worst = float(np.max(np.abs(tr.imag))) if tr.size else 0.0
        if worst > IMAG_TOL and not self._imag_reported:
            log.warning("homodyne: |Im Tr S-bar^top| = %.3g exceeds %.0e", worst, IMAG_TOL)
            self._imag_reported = True
        return tr.real

    def make_step(self, seeds=None, records: np.ndarray | None = None, keep_records: bool = True):
        """Return (step function, dY buffer). Exactly one of seeds / records is given."""
        dt = self.dt
        sq = math.sqrt(dt)
        kernel: Kernel = self.kernel
        B = len(seeds) if records is None else records.shape[0]
        noise = NoiseBlocks(seeds, "normal") if records is None else None
        buf = records if records is not None else (
            np.empty((B, self.steps)) if keep_records else None)

        def step(y, k, t):
            drift, sb = kernel.apply(("drift", "sbar"), y, t)
            m = self.mean_current(sb)
            if noise is None:
                dW = records[:, k] - m * dt
            else:
                dW = sq * noise.draw(k)
                if buf is not None:
                    buf[:, k] = m * dt + dW
            y = y + drift * dt + (sb - y * m[:, None]) * dW[:, None]
            if self.renormalize:
                y = y / self.top_trace(y)[:, None]
            return y

        return step, buf


def simulate_homodyne(model: SystemModel, pulses: PulseSet, t_final: float, dt: float,
                      seed: int | None = 0, *, stride: int = 1,
                      observables: Mapping[str, np.ndarray] | None = None,
                      renormalize: bool = False, replay=None,
                      keep_states: bool = True) -> TrajectoryRecord:
    """Simulate one homodyne trajectory.

    With ``replay`` (a sequence of per-step dY values) the given record is
    filtered instead of a synthesized one; its length must equal the number
    of steps.
    """
    integ = HomodyneIntegrator(model, pulses, t_final, dt, renormalize=renormalize)
    obs = dict(observables or {})
    if replay is not None:
        rec = np.asarray(replay, dtype=float).reshape(-1)
        if rec.shape[0] != integ.steps:
            raise ValueError(f"replay record has {rec.shape[0]} increments, expected {integ.steps}")
        step, buf = integ.make_step(records=rec[None, :])
        seed = None
    else:
        if seed is None:
            raise ValueError("seed is required when no replay record is given")
        step, buf = integ.make_step(seeds=[seed])
    res = run_batch(integ, 1, step, obs, stride=stride, keep_states=keep_states)
    raise_on_failure(res, dt)
    states = integ.kernel.unflatten(res.states[0]) if keep_states else None
    return TrajectoryRecord(
        seed=seed, times=res.times, dt=integ.dt, dY=buf[0].copy(),
        conditional={lab: res.observables[0, :, i] for i, lab in enumerate(res.labels)},
        trace_drift=res.trace_drift[0], structure=integ.structure, states=states)
