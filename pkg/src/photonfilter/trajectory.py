"""Batched stochastic integration shared by the homodyne and photocount filters.

A batch is an array y of shape (B, C*d*d): B independent conditional
hierarchies in flat canonical form. Each trajectory owns a Philox stream
keyed by its seed, so a trajectory's noise never depends on which batch,
chunk or worker it ran in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .master import Kernel, NumericalAbort, init_hierarchy
from .operators import DimensionError, SystemModel
from .photons import HierarchyStructure, PulseSet, _step_count

log = logging.getLogger(__name__)

NOISE_BLOCK = 1024
IMAG_TOL = 1e-8


def trajectory_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for one trajectory; the Philox counter plays the role of the step index."""
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    return np.random.Generator(np.random.Philox(key=int(seed)))


class NoiseBlocks:
    """Per-trajectory random draws served in blocks of ``NOISE_BLOCK`` steps.

    ``kind`` is ``"normal"`` (standard normals) or ``"uniform"`` ([0, 1)).
    Drawing in blocks yields the same stream as drawing all steps at once.
    """

    def __init__(self, seeds, kind: str):
        if kind not in ("normal", "uniform"):
            raise ValueError(f"unknown noise kind {kind!r}")
        self.rngs = [trajectory_rng(s) for s in seeds]
        self.kind = kind
        self._block = None
        self._start = 0

    def draw(self, step: int) -> np.ndarray:
        if self._block is None or step >= self._start + self._block.shape[1]:
            self._start = step
            if self.kind == "normal":
                rows = [g.standard_normal(NOISE_BLOCK) for g in self.rngs]
            else:
                rows = [g.random(NOISE_BLOCK) for g in self.rngs]
            self._block = np.array(rows).reshape(len(self.rngs), NOISE_BLOCK)
        return self._block[:, step - self._start]


def observable_vectors(observables: Mapping[str, np.ndarray], dim: int) -> tuple[list[str], np.ndarray]:
    """Labels and row-major vec(X) stacked as (n_obs, d*d)."""
    labels, vecs = [], []
    for label, X in observables.items():
        X = np.asarray(X, dtype=complex)
        if X.shape != (dim, dim):
            raise DimensionError(f"observable {label!r} must be {dim}x{dim}, got {X.shape}")
        labels.append(label)
        vecs.append(X.reshape(-1))
    return labels, np.array(vecs, dtype=complex).reshape(len(vecs), dim * dim)


@dataclass
class BatchResult:
    """Raw output of one batch of trajectories.

    ``states`` holds every hierarchy component at each snapshot, shape
    (B, S, C*d*d); ``observables`` the top-component expectations (B, S, n_obs).
    ``failed`` marks trajectories that produced non-finite values; their
    entries are zeroed from the failing step on.
    """

    times: np.ndarray
    labels: list[str]
    observables: np.ndarray
    states: np.ndarray | None
    trace_drift: np.ndarray          # (B, steps + 1) |Tr rho^top - 1|
    failed: np.ndarray
    failure_steps: np.ndarray
    records: np.ndarray | None = None   # homodyne dY (B, steps)
    jumps: list[list[float]] = field(default_factory=list)
    counts: np.ndarray | None = None    # photocount cumulative counts (B, S)


class BatchIntegrator:
    """Fixed-step driver; subclasses implement ``step``."""

    def __init__(self, model: SystemModel, pulses: PulseSet, t_final: float, dt: float,
                 structure: HierarchyStructure | None = None):
        self.steps = _step_count(t_final, dt)
        if dt > pulses.dt * (1 + 1e-9):
            raise ValueError(f"dt={dt:g} exceeds the pulse grid step {pulses.dt:g}")
        if t_final > pulses.t_final * (1 + 1e-9) + 1e-12:
            raise ValueError(f"t_final={t_final:g} exceeds the pulse window {pulses.t_final:g}")
        self.model = model
        self.pulses = pulses
        self.t_final = float(t_final)
        self.dt = float(dt)
        h0 = init_hierarchy(model, pulses, structure)
        self.structure = h0.structure
        self.kernel = Kernel(model, h0.structure)
        self.y0 = self.kernel.flatten(h0.data)
        self._top = self.kernel.top_trace_rows()

    def top_trace(self, y: np.ndarray) -> np.ndarray:
        return y[..., self._top].sum(axis=-1)

    def expectations(self, y: np.ndarray, vecs: np.ndarray) -> np.ndarray:
        """Re Tr[(rho^top)^dag X] for every observable, shape (B, n_obs)."""
        D = self.kernel.D
        return (np.conj(y[:, :D]) @ vecs.T).real

    def snapshot_steps(self, stride: int) -> np.ndarray:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        idx = list(range(0, self.steps + 1, stride))
        if idx[-1] != self.steps:
            idx.append(self.steps)
        return np.array(idx)


def run_batch(integ: BatchIntegrator, B: int, step: Callable, observables: Mapping[str, np.ndarray],
              stride: int = 1, keep_states: bool = True) -> BatchResult:
    """Advance B copies of the initial hierarchy with ``step(y, k, t) -> y``.

    Non-finite trajectories are frozen at zero and flagged instead of
    aborting the batch.
    """
    labels, vecs = observable_vectors(observables, integ.model.dim)
    snaps = integ.snapshot_steps(stride)
    S = len(snaps)
    y = np.repeat(integ.y0[None, :], B, axis=0)
    obs = np.zeros((B, S, len(labels)))
    states = np.zeros((B, S, y.shape[1]), dtype=complex) if keep_states else None
    drift = np.zeros((B, integ.steps + 1))
    failed = np.zeros(B, dtype=bool)
    fail_step = np.full(B, -1)

    def record(s: int, k: int):
        obs[:, s] = integ.expectations(y, vecs)
        if keep_states:
            states[:, s] = y

    record(0, 0)
    drift[:, 0] = np.abs(integ.top_trace(y) - 1.0)
    s = 1
    with np.errstate(all="ignore"):
        for k in range(integ.steps):
            y = step(y, k, k * integ.dt)
            bad = ~np.all(np.isfinite(y), axis=1) & ~failed
            if bad.any():
                failed |= bad
                fail_step[bad] = k + 1
                y[bad] = 0.0
                log.warning("%d trajectories produced non-finite values at step %d", int(bad.sum()), k + 1)
            drift[:, k + 1] = np.abs(integ.top_trace(y) - 1.0)
            if s < S and snaps[s] == k + 1:
                record(s, k + 1)
                s += 1
    return BatchResult(times=snaps * integ.dt, labels=labels, observables=obs, states=states,
                       trace_drift=drift, failed=failed, failure_steps=fail_step)


def raise_on_failure(res: BatchResult, dt: float):
    if res.failed.any():
        k = int(res.failure_steps[res.failed][0])
        raise NumericalAbort("non-finite conditional state", k * dt, k)
