"""Internal oracle suite run by ``photonfilter validate``.

Every check compares two independently coded routes to the same quantity
and reports the worst deviation against a fixed tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .fock import integrate_fock_master, run_fock_filter
from .homodyne import HomodyneIntegrator, homodyne_step, simulate_homodyne
from .master import DensityHierarchy, Kernel, init_hierarchy, integrate_master
from .operators import SystemModel, schrodinger_superop, verify_duality
from .photocount import PhotocountIntegrator, delta_dual, delta_heisenberg, photocount_step
from .photons import (HierarchyStructure, PulseSet, SubsetIndex, all_subsets, component_count,
                      normalization, subset_rank, wick_inner_product)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_model(d: int, rng: np.random.Generator) -> SystemModel:
    """Random unitary S, complex L, Hermitian H and unit initial state."""
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    S = q * (np.diag(r) / np.abs(np.diag(r)))
    L = 0.7 * (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
    A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    eta = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return SystemModel(S=S, L=L, H=0.5 * (A + A.conj().T), initial_state=eta / np.linalg.norm(eta))


def random_hierarchy(structure: HierarchyStructure, d: int, rng: np.random.Generator
                     ) -> DensityHierarchy:
    shape = (structure.count, d, d)
    return DensityHierarchy(structure, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def mixed_pulses(n: int, t_final: float = 8.0, dt: float = 2e-3) -> PulseSet:
    """n Gaussians with distinct widths and centers, so all overlaps are generic."""
    omegas = [1.8 + 0.35 * i for i in range(n)]
    centers = [3.0 + 0.4 * i for i in range(n)]
    return PulseSet.gaussians(omegas, centers, t_final, dt)


def _corrupted_d01(which, model, rho):
    out = schrodinger_superop(which, model, rho)
    return -out if which == "01" else out


def check_duality() -> CheckResult:
    rng = np.random.default_rng(11)
    reports = [verify_duality(SystemModel.two_level_atom(), 100),
               verify_duality(random_model(3, rng), 100, seed=1)]
    control = verify_duality(random_model(3, rng), 100, seed=2, schrodinger=_corrupted_d01)
    worst = max(r.worst for r in reports)
    ok = all(r.passed for r in reports) and not control.passed
    return CheckResult("duality", ok, f"max deviation {worst:.2e} (tol 1e-12); "
                                      f"sign-flipped D01 control deviates by {control.worst:.2e}")


def check_adjointness() -> CheckResult:
    rng = np.random.default_rng(12)
    model = random_model(3, rng)
    st = HierarchyStructure(mixed_pulses(2))
    worst = 0.0
    for _ in range(100):
        h = random_hierarchy(st, 3, rng)
        X = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        t = float(rng.uniform(1.0, 6.0))
        a, b = (st.subsets[i] for i in rng.integers(0, st.size, 2))
        J = delta_dual(model, h, a, b, t)
        worst = max(worst, abs(np.trace(J.conj().T @ X) - delta_heisenberg(model, h, a, b, t, X)))
    return CheckResult("jump adjointness", worst < 1e-12,
                       f"max |Tr[J^dag X] - Delta(X)| = {worst:.2e} over 100 draws (tol 1e-12)")


def check_normalization() -> CheckResult:
    worst = 0.0
    for n in range(1, 5):
        G = mixed_pulses(n).gram()
        for r in all_subsets(n):
            comp = r.complement()
            ref = wick_inner_product(G, comp, comp).real
            worst = max(worst, abs(normalization(G, r) - ref))
    G2 = mixed_pulses(2).gram()
    n2 = abs(normalization(G2, SubsetIndex(2)) - (1 + abs(G2[0, 1]) ** 2))
    ok = worst < 1e-10 and n2 < 1e-12
    return CheckResult("normalization permanent", ok,
                       f"permanent vs Wick max deviation {worst:.2e} (n <= 4, tol 1e-10); "
                       f"two-photon rule deviation {n2:.2e}")


def check_counts_and_ranks() -> CheckResult:
    counts = [component_count(n) for n in range(4)]
    ranks_ok = True
    for n in range(7):
        subs = all_subsets(n)
        ranks = [subset_rank(s) for s in subs]
        expected = sorted(subs, key=lambda s: (s.k, s.members))
        ranks_ok &= ranks == list(range(1, 2**n + 1)) and subs == expected
        ranks_ok &= len(subs) == sum(1 for k in range(n + 1) for _ in combinations(range(n), k))
    ok = counts == [1, 3, 10, 36] and ranks_ok
    return CheckResult("hierarchy counts and ranks", ok,
                       f"components {counts}; rank bijection {'ok' if ranks_ok else 'broken'}")


def check_kernel_paths() -> CheckResult:
    rng = np.random.default_rng(13)
    model = random_model(3, rng)
    st = HierarchyStructure(mixed_pulses(3))
    dense, contr = Kernel(model, st, dense=True), Kernel(model, st, dense=False)
    y = dense.flatten(random_hierarchy(st, 3, rng).data)[None]
    worst = 0.0
    for t in (2.5, 3.3):
        for a, b in zip(dense.apply(("drift", "sbar", "jump"), y, t),
                        contr.apply(("drift", "sbar", "jump"), y, t)):
            worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult("dense vs contracted kernel", worst < 1e-12,
                       f"max deviation {worst:.2e} (d=3, n=3)")


def check_filter_steps() -> CheckResult:
    rng = np.random.default_rng(14)
    model = random_model(2, rng)
    pulses = mixed_pulses(2)
    st = HierarchyStructure(pulses)
    h0 = init_hierarchy(model, pulses, st)
    data = h0.data + 0.1 * random_hierarchy(st, 2, rng).data
    for c, (a, b) in enumerate(st.pairs):
        if a == b:
            data[c] = 0.5 * (data[c] + data[c].conj().T)
    h = DensityHierarchy(st, data)
    t, dt, dY = 3.1, 2e-3, 0.05
    hom = HomodyneIntegrator(model, pulses, 8.0, dt)
    y = hom.kernel.flatten(h.data)[None]
    k = int(round(t / dt))
    records = np.zeros((1, hom.steps))
    records[0, k] = dY
    step, _ = hom.make_step(records=records)
    worst = float(np.max(np.abs(hom.kernel.unflatten(step(y.copy(), k, t)[0])
                                - homodyne_step(model, h, t, dt, dY).data)))
    pc = PhotocountIntegrator(model, pulses, 8.0, dt)
    for jumped in (False, True):
        step, _ = pc.make_step(jump_steps=[[k] if jumped else []])
        ref = photocount_step(model, h, t, dt, jumped).data
        worst = max(worst, float(np.max(np.abs(pc.kernel.unflatten(step(y.copy(), k, t)[0]) - ref))))
    return CheckResult("batched vs reference filter steps", worst < 1e-12,
                       f"max deviation {worst:.2e}")


def check_fock_reduction(ns=(2, 3)) -> CheckResult:
    model = SystemModel.two_level_atom()
    T, dt = 4.0, 2e-3
    worst = 0.0
    for n in ns:
        pulses = PulseSet.gaussians([2.92] * n, [2.0] * n, T, dt)
        single = PulseSet.gaussians([2.92], [2.0], T, dt)
        sol = integrate_master(model, pulses, T, dt)
        _, w = integrate_fock_master(model, single, n, T, dt)
        rec = simulate_homodyne(model, pulses, T, dt, seed=n)
        wf = run_fock_filter(model, single, n, dt, rec.dY)
        st = sol.structure
        for c, (a, b) in enumerate(st.pairs):
            p, q = n - st.subsets[a].k, n - st.subsets[b].k
            worst = max(worst, float(np.max(np.abs(sol.data[:, c] - w[:, p, q]))),
                        float(np.max(np.abs(rec.states[:, c] - wf[:, p, q]))))
    return CheckResult("Fock reduction", worst < 1e-8,
                       f"general vs ladder max deviation {worst:.2e} for n in {list(ns)} "
                       "(master and shared-record filter, tol 1e-8)")


CHECKS: list[Callable[[], CheckResult]] = [
    check_duality, check_adjointness, check_normalization, check_counts_and_ranks,
    check_kernel_paths, check_filter_steps, check_fock_reduction,
]


def run_all() -> list[CheckResult]:
    return [check() for check in CHECKS]
