"""Parallel ensembles of conditioned trajectories and their comparison with the master equation.

Trajectory i uses seed ``base_seed + i``. Trajectories are grouped into
fixed chunks of ``spec.chunk`` consecutive indices; each chunk is reduced on
its own and chunk results are combined in index order, so the summary does
not depend on the number of workers or on completion order.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .homodyne import HomodyneIntegrator
from .master import integrate_master
from .operators import SystemModel
from .photocount import PhotocountIntegrator
from .photons import PulseSet
from .trajectory import run_batch

log = logging.getLogger(__name__)

DETECTIONS = ("homodyne", "photocount")
MAX_FAILURE_FRACTION = 0.01
THREADS_ENV = "PHOTONFILTER_THREADS"


class EnsembleError(RuntimeError):
    """Too many trajectories failed."""


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    base_seed: int
    N: int
    detection: str
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    stride: int = 1
    chunk: int = 250

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be >= 0")
        if self.detection not in DETECTIONS:
            raise ValueError(f"detection must be one of {DETECTIONS}, got {self.detection!r}")
        if self.stride < 1 or self.chunk < 1:
            raise ValueError("stride and chunk must be >= 1")
        for label, X in self.observables.items():
            X = np.asarray(X, dtype=complex)
            if X.ndim != 2 or X.shape[0] != X.shape[1]:
                raise ValueError(f"observable {label!r} must be square")
            if not np.allclose(X, X.conj().T, rtol=0, atol=1e-12):
                raise ValueError(f"observable {label!r} is not Hermitian")

    def chunks(self) -> list[tuple[int, int]]:
        return [(a, min(a + self.chunk, self.N)) for a in range(0, self.N, self.chunk)]


@dataclass
class _ChunkResult:
    n_ok: int
    obs_sum: np.ndarray          # (S, n_obs)
    obs_sq: np.ndarray
    obs_min: np.ndarray
    obs_max: np.ndarray
    state_sum: np.ndarray        # (S, C*D) complex
    state_sq: np.ndarray         # (S, C*D) sum of |z|^2
    extrema: np.ndarray          # (n_ok, n_obs) per-trajectory max over time
    totals: np.ndarray           # (n_ok,) detections per trajectory (photocount)
    failed_seeds: list[int]
    max_trace_drift: float


def _run_chunk(args) -> _ChunkResult:
    spec, model, pulses, t_final, dt, start, stop = args
    seeds = [spec.base_seed + i for i in range(start, stop)]
    cls = HomodyneIntegrator if spec.detection == "homodyne" else PhotocountIntegrator
    integ = cls(model, pulses, t_final, dt)
    if spec.detection == "homodyne":
        step, _ = integ.make_step(seeds=seeds, keep_records=False)
        jumps = None
    else:
        step, jumps = integ.make_step(seeds=seeds)
    res = run_batch(integ, len(seeds), step, spec.observables, stride=spec.stride)
    ok = ~res.failed
    obs = res.observables[ok]
    states = res.states[ok]
    n_obs = obs.shape[-1]
    S = res.observables.shape[1]
    empty = np.full((S, n_obs), np.nan)
    totals = (np.array([len(jumps[i]) for i in np.nonzero(ok)[0]], dtype=float)
              if jumps is not None else np.zeros(int(ok.sum())))
    return _ChunkResult(
        n_ok=int(ok.sum()),
        obs_sum=obs.sum(axis=0), obs_sq=(obs**2).sum(axis=0),
        obs_min=obs.min(axis=0) if ok.any() else empty,
        obs_max=obs.max(axis=0) if ok.any() else empty,
        state_sum=states.sum(axis=0), state_sq=(np.abs(states) ** 2).sum(axis=0),
        extrema=obs.max(axis=1) if ok.any() else np.zeros((0, n_obs)),
        totals=totals,
        failed_seeds=[s for s, f in zip(seeds, res.failed) if f],
        max_trace_drift=float(res.trace_drift[ok].max()) if ok.any() else 0.0,
    )


@dataclass
class EnsembleSummary:
    """Ensemble statistics of the top-component observables and of every hierarchy component."""

    spec: EnsembleSpec
    times: np.ndarray
    labels: list[str]
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    envelope: dict[str, tuple[np.ndarray, np.ndarray]]
    extrema: dict[str, np.ndarray]
    component_mean: np.ndarray                 # (S, C, d, d)
    component_stderr: np.ndarray               # (S, C, d, d), real
    totals: np.ndarray
    failures: int
    failed_seeds: list[int]
    max_trace_drift: float
    wall_time: float = 0.0
    dt: float = 0.0
    master: dict[str, np.ndarray] | None = None
    master_components: np.ndarray | None = None

    @property
    def n_ok(self) -> int:
        return self.spec.N - self.failures

    def sup_error(self, label: str) -> float:
        """Sup-norm distance of the ensemble mean of ``label`` to the master solution."""
        return float(np.max(np.abs(self.mean[label] - self.master[label])))

    def component_errors(self) -> np.ndarray:
        """Per-component sup-norm distance to the master hierarchy, shape (C,)."""
        diff = np.abs(self.component_mean - self.master_components)
        return diff.max(axis=(0, 2, 3))

    def standardized_errors(self, floor: float | None = None) -> np.ndarray:
        """Per-component max |mean - master| / sqrt(stderr^2 + floor^2), shape (C,).

        ``floor`` absorbs the deterministic discretization bias where the
        ensemble spread vanishes (near t = 0); it defaults to the step size.
        """
        floor = self.dt if floor is None else floor
        diff = np.abs(self.component_mean - self.master_components)
        z = diff / np.sqrt(self.component_stderr**2 + floor**2)
        return z.max(axis=(0, 2, 3))

    def mean_counts(self) -> float:
        return float(self.totals.mean()) if self.totals.size else float("nan")


def worker_count(requested: int | None = None) -> int:
    """Worker processes: explicit request, else PHOTONFILTER_THREADS (0 means all CPUs)."""
    if requested is None:
        raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
        try:
            requested = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ValueError("worker count must be >= 0")
    return requested or (os.cpu_count() or 1)


def _reduce(spec: EnsembleSpec, parts: list[_ChunkResult], times: np.ndarray, labels,
            shape) -> EnsembleSummary:
    n_ok = sum(p.n_ok for p in parts)
    failed = [s for p in parts for s in p.failed_seeds]
    N = spec.N
    if len(failed) > MAX_FAILURE_FRACTION * N:
        raise EnsembleError(f"{len(failed)} of {N} trajectories failed (seeds {failed[:10]})")
    if n_ok == 0:
        raise EnsembleError("every trajectory failed")
    if failed:
        log.warning("ensemble: %d trajectories excluded after numerical failure", len(failed))
    obs_sum = sum(p.obs_sum for p in parts)
    obs_sq = sum(p.obs_sq for p in parts)
    st_sum = sum(p.state_sum for p in parts)
    st_sq = sum(p.state_sq for p in parts)
    mean = obs_sum / n_ok
    cmean = st_sum / n_ok
    ddof = 1 if n_ok > 1 else 0
    scale = n_ok / max(n_ok - ddof, 1)
    var = np.maximum(obs_sq / n_ok - mean**2, 0.0) * scale
    cvar = np.maximum(st_sq / n_ok - np.abs(cmean) ** 2, 0.0) * scale
    stderr = np.sqrt(var / n_ok) if n_ok > 1 else np.zeros_like(var)
    cstderr = np.sqrt(cvar / n_ok) if n_ok > 1 else np.zeros_like(cvar)
    lo = np.nanmin(np.array([p.obs_min for p in parts]), axis=0)
    hi = np.nanmax(np.array([p.obs_max for p in parts]), axis=0)
    extrema = np.concatenate([p.extrema for p in parts])
    return EnsembleSummary(
        spec=spec, times=times, labels=list(labels),
        mean={lab: mean[:, i] for i, lab in enumerate(labels)},
        stderr={lab: stderr[:, i] for i, lab in enumerate(labels)},
        envelope={lab: (lo[:, i], hi[:, i]) for i, lab in enumerate(labels)},
        extrema={lab: extrema[:, i] for i, lab in enumerate(labels)},
        component_mean=cmean.reshape(shape), component_stderr=cstderr.reshape(shape),
        totals=np.concatenate([p.totals for p in parts]),
        failures=len(failed), failed_seeds=failed,
        max_trace_drift=max(p.max_trace_drift for p in parts),
    )


def _run_parts(spec, model, pulses, t_final, dt, workers):
    jobs = [(spec, model, pulses, t_final, dt, a, b) for a, b in spec.chunks()]
    workers = min(worker_count(workers), len(jobs))
    if workers <= 1:
        return [_run_chunk(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chunk, jobs))


def run_ensemble(spec: EnsembleSpec, model: SystemModel, pulses: PulseSet, t_final: float,
                 dt: float, *, workers: int | None = None, compare: bool = True,
                 prefixes: list[int] | None = None):
    """Run the ensemble and summarize it.

    With ``prefixes`` (trajectory counts that are multiples of ``spec.chunk``
    or equal to N) a dict N -> summary is returned, each built from the
    leading chunks of the same run.
    """
    t0 = time.perf_counter()
    parts = _run_parts(spec, model, pulses, t_final, dt, workers)
    wall = time.perf_counter() - t0
    probe = HomodyneIntegrator(model, pulses, t_final, dt)
    times = probe.snapshot_steps(spec.stride) * probe.dt
    shape = (len(times), probe.kernel.C, model.dim, model.dim)
    labels = list(spec.observables)
    targets = prefixes or [spec.N]
    out = {}
    for n in targets:
        if n != spec.N and n % spec.chunk:
            raise ValueError(f"prefix {n} is not a multiple of the chunk size {spec.chunk}")
        if n > spec.N:
            raise ValueError(f"prefix {n} exceeds N={spec.N}")
        k = -(-n // spec.chunk)
        sub = EnsembleSpec(spec.base_seed, n, spec.detection, spec.observables, spec.stride,
                           spec.chunk)
        out[n] = _reduce(sub, parts[:k], times, labels, shape)
        out[n].wall_time = wall
        out[n].dt = dt
    if compare:
        sol = integrate_master(model, pulses, t_final, dt, stride=spec.stride)
        for s in out.values():
            s.master = {lab: sol.expectation(np.asarray(X, dtype=complex)).real
                        for lab, X in spec.observables.items()}
            s.master_components = sol.data
    log.info("ensemble: %d %s trajectories in %.1f s", spec.N, spec.detection, wall)
    return out if prefixes else out[spec.N]


@dataclass
class ConvergenceRow:
    N: int
    error: float
    ratio: float | None
    expected: float | None
    consistent: bool | None


def convergence_report(spec: EnsembleSpec, model: SystemModel, pulses: PulseSet,
                       t_final: float, dt: float, Ns: list[int], label: str | None = None,
                       *, slack: float = 2.0, workers: int | None = None,
                       summaries: dict[int, EnsembleSummary] | None = None
                       ) -> list[ConvergenceRow]:
    """Sup-norm error against the master solution for each N, with a 1/sqrt(N) ratio test.

    Consecutive rows are consistent when err(N2)/err(N1) lies within a
    factor ``slack`` of sqrt(N1/N2). ``label`` selects an observable; by
    default the top-component sup-norm over all matrix entries is used.
    """
    if list(Ns) != sorted(Ns) or len(set(Ns)) != len(Ns):
        raise ValueError("Ns must be strictly ascending")
    if summaries is None:
        big = EnsembleSpec(spec.base_seed, Ns[-1], spec.detection, spec.observables,
                           spec.stride, spec.chunk)
        if all(n == Ns[-1] or n % spec.chunk == 0 for n in Ns):
            summaries = run_ensemble(big, model, pulses, t_final, dt, workers=workers,
                                     prefixes=list(Ns))
        else:
            summaries = {n: run_ensemble(EnsembleSpec(spec.base_seed, n, spec.detection,
                                                      spec.observables, spec.stride, spec.chunk),
                                         model, pulses, t_final, dt, workers=workers)
                         for n in Ns}
    rows = []
    prev = None
    for n in Ns:
        s = summaries[n]
        err = s.sup_error(label) if label is not None else float(s.component_errors()[0])
        if prev is None:
            rows.append(ConvergenceRow(n, err, None, None, None))
        else:
            ratio = err / prev.error if prev.error > 0 else float("inf")
            expected = (prev.N / n) ** 0.5
            rows.append(ConvergenceRow(n, err, ratio, expected,
                                       expected / slack <= ratio <= expected * slack))
        prev = rows[-1]
    return rows
