"""Unconditional (master-equation) evolution of the subset-pair hierarchy.

Component rho^{l;r} behaves like the reduced operator of |eta Phi_l><eta Phi_r|;
only canonical pairs (rank(l) <= rank(r)) are stored. Expectations follow from
the pairing  omega^{l;r}(X) = Tr[(rho^{l;r})^dag X].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .operators import DimensionError, SystemModel, dag, trace_pairing
from .photons import HierarchyStructure, PulseSet, SubsetIndex, _step_count

log = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    """Integration produced non-finite values."""

    def __init__(self, message: str, t: float, step: int):
        super().__init__(f"{message} (t={t:.6g}, step={step})")
        self.t = t
        self.step = step


def _vec_superops(model: SystemModel) -> dict[str, tuple[np.ndarray, ...]]:
    """Row-major vec forms of every map the engines need.

    With vec(X)[i*d + j] = X[i, j] one has vec(A X B) = kron(A, B^T) vec(X).
    Each entry holds the maps applied to (rho^{l;r}, bra contraction,
    ket contraction, two-sided contraction), in that order.
    """
    d = model.dim
    I = np.eye(d)
    L, Ld, S, Sd, H = model.L, model.Ld, model.S, model.Sd, model.H
    LdL = model.LdL
    k = np.kron
    drift = (
        k(L, Ld.T) - 0.5 * k(LdL, I) - 0.5 * k(I, LdL.T) - 1j * (k(H, I) - k(I, H.T)),
        k(L, Sd.T) - k(I, (Sd @ L).T),
        k(S, Ld.T) - k(Ld @ S, I),
        k(S, Sd.T) - np.eye(d * d),
    )
    sbar = (k(L, I) + k(I, Ld.T), k(I, Sd.T), k(S, I), np.zeros((d * d, d * d)))
    jump = (k(L, Ld.T), k(L, Sd.T), k(S, Ld.T), k(S, Sd.T))
    return {"drift": drift, "sbar": sbar, "jump": jump}


class Kernel:
    """Vectorized linear maps on the hierarchy, shared by the master equation and the filters.

    States are flattened canonical arrays y of shape (..., C*d*d). Every map
    the engines need (master drift, homodyne gain operator S-bar, photocount
    jump operator J) is linear in the full family of components, so it is
    applied as ``expand(y) @ G(t).T`` with G restricted to canonical output
    rows. When the batch is large enough to amortize it, G(t) is assembled from
    a precomputed basis, G(t) = sum_q coeff_q(xi(t)) G_q; otherwise (and for
    hierarchies too large for the basis) tensordot contractions over subset
    indices are used.
    """

    DENSE_LIMIT = 1 << 20

    def __init__(self, model: SystemModel, structure: HierarchyStructure,
                 dense: bool | None = None):
        self.model = model
        self.structure = structure
        st = structure
        d = model.dim
        D = d * d
        K = st.size
        self.dim = d
        self.D = D
        self.K = K
        self.C = st.count
        self.ops = _vec_superops(model)

        # gather map canonical-vec -> full-vec, with conjugate transpose below the diagonal
        full_idx = st.full_index
        conj = st.conj_mask
        ij = np.arange(D)
        ji = (ij % d) * d + ij // d
        src = np.empty((K, K, D), dtype=np.intp)
        flag = np.empty((K, K, D), dtype=bool)
        for a in range(K):
            for b in range(K):
                c = full_idx[a, b]
                src[a, b] = c * D + (ji if conj[a, b] else ij)
                flag[a, b] = conj[a, b]
        # indices into concat([y, conj(y)]): conjugated entries come from the second half
        self._src = np.where(flag, src + self.C * D, src).reshape(-1)
        self._any_conj = bool(flag.any())
        self._canon_full = (st.canonical_rows * K + st.canonical_cols).astype(np.intp)

        size = self.C * D * K * K * D * (1 + 2 * st.n + st.n**2)
        # dense=None picks per call: assembling G(t) only pays off for larger batches
        self._auto = dense is None
        self._terms = 1 + 2 * st.n + st.n**2
        width = 2 * self.C * D
        self._cheap_basis = self._terms * self.C * D * width <= 100_000
        self.dense = (size <= self.DENSE_LIMIT) if dense is None else dense
        if self.dense:
            # fold the gather into the basis so the generator acts on concat([y, conj(y)])
            width = 2 * self.C * D if self._any_conj else self.C * D
            gather = np.zeros((K * K * D, width))
            gather[np.arange(K * K * D), self._src] = 1.0
            self._basis = {name: self._dense_basis(mats) @ gather
                           for name, mats in self.ops.items()}

    # -- representation helpers ------------------------------------------------

    def flatten(self, data: np.ndarray) -> np.ndarray:
        return data.reshape(data.shape[:-3] + (self.C * self.D,))

    def unflatten(self, y: np.ndarray) -> np.ndarray:
        return y.reshape(y.shape[:-1] + (self.C, self.dim, self.dim))

    def expand(self, y: np.ndarray) -> np.ndarray:
        if self._any_conj:
            y = np.concatenate((y, np.conj(y)), axis=-1)
        return y[..., self._src]

    def stacked(self, y: np.ndarray) -> np.ndarray:
        return np.concatenate((y, np.conj(y)), axis=-1) if self._any_conj else y

    def top_trace_rows(self) -> np.ndarray:
        """Positions of the diagonal entries of the top component in the flat canonical vector."""
        d = self.dim
        return np.arange(d) * (d + 1)

    # -- dense generator -------------------------------------------------------

    def _coefficients(self, xi: np.ndarray) -> np.ndarray:
        xc = np.conj(xi)
        return np.concatenate(([1.0 + 0j], xc, xi, np.outer(xi, xc).reshape(-1)))

    def _dense_basis(self, mats) -> np.ndarray:
        st = self.structure
        K, n = self.K, st.n
        rows, cols, mus, coefs = st._annihilation_entries
        A_mu = np.zeros((n, K, K))
        A_mu[mus, rows, cols] = coefs
        I = np.eye(K)
        canon = self._canon_full
        M0, M10, M01, M11 = mats
        terms = [np.kron(np.kron(I, I)[canon], M0)]
        terms += [np.kron(np.kron(I, A_mu[m])[canon], M10) for m in range(n)]
        terms += [np.kron(np.kron(A_mu[m], I)[canon], M01) for m in range(n)]
        terms += [np.kron(np.kron(A_mu[v], A_mu[m])[canon], M11)
                  for v in range(n) for m in range(n)]
        return np.array(terms, dtype=complex)

    def generator(self, name: str, t: float) -> np.ndarray:
        """Dense matrix of map ``name`` at time t, acting on ``stacked(y)``."""
        coeff = self._coefficients(self.structure.pulses(t))
        return np.tensordot(coeff, self._basis[name], axes=1)

    @cached_property
    def _basis_flat(self) -> dict[str, np.ndarray]:
        return {name: b.reshape(b.shape[0], -1) for name, b in self._basis.items()}

    # -- contraction path ------------------------------------------------------

    def _contract(self, full: np.ndarray, A: np.ndarray):
        """Bra-side, ket-side and two-sided contractions of the full family (..., K, K, D)."""
        Ac = np.conj(A)
        # R10[l, r] = sum_s conj(A[r, s]) F[l, s];  R01[l, r] = sum_s A[l, s] F[s, r]
        R10 = np.moveaxis(np.tensordot(full, Ac, axes=([-2], [1])), -1, -2)
        R01 = np.moveaxis(np.tensordot(A, full, axes=([1], [-3])), 0, -3)
        R11 = np.moveaxis(np.tensordot(R01, Ac, axes=([-2], [1])), -1, -2)
        return full, R10, R01, R11

    def _apply_contracted(self, name: str, parts) -> np.ndarray:
        out = 0
        for part, M in zip(parts, self.ops[name]):
            out = out + part @ M.T
        canon = out.reshape(out.shape[:-3] + (self.K * self.K, self.D))[..., self._canon_full, :]
        return canon.reshape(canon.shape[:-2] + (self.C * self.D,))

    # -- public ------------------------------------------------------------------

    def apply(self, names: tuple[str, ...], y: np.ndarray, t: float) -> list[np.ndarray]:
        """Evaluate the named linear maps on flat canonical states y at time t."""
        rows = y.size // y.shape[-1]
        if self.dense and (not self._auto or self._cheap_basis or 4 * rows >= self._terms):
            coeff = self._coefficients(self.structure.pulses(t))
            z = self.stacked(y)
            if len(names) == 1:
                return [z @ (coeff @ self._basis_flat[names[0]]).reshape(-1, z.shape[-1]).T]
            G = np.concatenate([(coeff @ self._basis_flat[name]).reshape(-1, z.shape[-1])
                                for name in names])
            return np.split(z @ G.T, len(names), axis=-1)
        full = self.expand(y)
        K, D = self.K, self.D
        parts = self._contract(full.reshape(full.shape[:-1] + (K, K, D)),
                               self.structure.annihilation_matrix(t))
        return [self._apply_contracted(name, parts) for name in names]

    def rhs_flat(self, y: np.ndarray, t: float) -> np.ndarray:
        return self.apply(("drift",), y, t)[0]

    def rhs(self, data: np.ndarray, t: float) -> np.ndarray:
        return self.unflatten(self.rhs_flat(self.flatten(data), t))


@dataclass
class DensityHierarchy:
    """The canonical components rho^{l;r}, stored as an array (C, d, d)."""

    structure: HierarchyStructure
    data: np.ndarray

    @property
    def n(self) -> int:
        return self.structure.n

    def __len__(self) -> int:
        return self.structure.count

    def component(self, l: SubsetIndex, r: SubsetIndex) -> np.ndarray:
        c, conj = self.structure.pair_of(l, r)
        m = self.data[..., c, :, :]
        return dag(m) if conj else m.copy()

    @property
    def top(self) -> np.ndarray:
        return self.data[..., 0, :, :]

    def items(self):
        """Yield ((l, r), matrix) over canonical pairs in rank order."""
        st = self.structure
        for c, (a, b) in enumerate(st.pairs):
            yield (st.subsets[a], st.subsets[b]), self.data[..., c, :, :]

    def full(self) -> np.ndarray:
        return self.structure.expand(self.data)

    def traces(self) -> np.ndarray:
        return np.trace(self.data, axis1=-2, axis2=-1)

    def hermitian_defect(self) -> float:
        """Largest |rho^{a;a} - (rho^{a;a})^dag| over diagonal pairs."""
        st = self.structure
        diag = [c for c, (a, b) in enumerate(st.pairs) if a == b]
        m = self.data[..., diag, :, :]
        return float(np.max(np.abs(m - dag(m))))


def init_hierarchy(model: SystemModel, pulses: PulseSet,
                   structure: HierarchyStructure | None = None) -> DensityHierarchy:
    """rho^{l;r}_0 = <Phi_r|Phi_l> |eta><eta| for every canonical pair."""
    st = structure if structure is not None else HierarchyStructure(pulses)
    O = st.overlap_matrix()
    P = model.initial_projector
    coeff = O[st.canonical_cols, st.canonical_rows]
    return DensityHierarchy(st, coeff[:, None, None] * P)


def master_rhs(model: SystemModel, h: DensityHierarchy, t: float) -> DensityHierarchy:
    """Time derivative of every canonical component at time t."""
    return DensityHierarchy(h.structure, Kernel(model, h.structure).rhs(h.data, t))


def expectation(h: DensityHierarchy, X, l: SubsetIndex | None = None,
                r: SubsetIndex | None = None):
    """Tr[(rho^{l;r})^dag X]; defaults to the top pair (no photon annihilated)."""
    X = np.asarray(X, dtype=complex)
    d = h.data.shape[-1]
    if X.shape != (d, d):
        raise DimensionError(f"X must be {d}x{d}, got shape {X.shape}")
    n = h.n
    l = l if l is not None else SubsetIndex(n)
    r = r if r is not None else SubsetIndex(n)
    return trace_pairing(h.component(l, r), X)


def rk4_step(f, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    k1 = f(y, t)
    k2 = f(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(y + dt * k3, t + dt)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class MasterSolution:
    structure: HierarchyStructure
    times: np.ndarray
    data: np.ndarray          # (snapshots, C, d, d)

    def __getitem__(self, i: int) -> DensityHierarchy:
        return DensityHierarchy(self.structure, self.data[i])

    def __len__(self) -> int:
        return len(self.times)

    def expectation(self, X, pair: int = 0) -> np.ndarray:
        """Series of Tr[(rho^{pair})^dag X] for the canonical slot ``pair`` (0 = top)."""
        return trace_pairing(self.data[:, pair], np.asarray(X, dtype=complex))

    @cached_property
    def initial_traces(self) -> np.ndarray:
        return np.trace(self.data[0], axis1=-2, axis2=-1)

    def max_trace_drift(self) -> float:
        tr = np.trace(self.data, axis1=-2, axis2=-1)
        return float(np.max(np.abs(tr - tr[0])))


def integrate_master(model: SystemModel, pulses: PulseSet, t_final: float, dt: float,
                     stride: int = 1, structure: HierarchyStructure | None = None
                     ) -> MasterSolution:
    """Classical RK4 over the hierarchy, storing every ``stride``-th step (plus t=0)."""
    steps = _step_count(t_final, dt)
    if dt > pulses.dt * (1 + 1e-9):
        raise ValueError(f"dt={dt:g} exceeds the pulse grid step {pulses.dt:g}")
    if t_final > pulses.t_final * (1 + 1e-9) + 1e-12:
        raise ValueError(f"t_final={t_final:g} exceeds the pulse window {pulses.t_final:g}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h0 = init_hierarchy(model, pulses, structure)
    kernel = Kernel(model, h0.structure)
    y = kernel.flatten(h0.data)
    times, snaps = [0.0], [h0.data]
    for k in range(steps):
        t = k * dt
        y = rk4_step(kernel.rhs_flat, y, t, dt)
        if (k + 1) % stride == 0 or k + 1 == steps:
            if not np.all(np.isfinite(y)):
                raise NumericalAbort("non-finite hierarchy entries", (k + 1) * dt, k + 1)
            times.append((k + 1) * dt)
            snaps.append(kernel.unflatten(y))
    log.debug("master: %d steps, %d snapshots, %d components", steps, len(times), h0.structure.count)
    return MasterSolution(h0.structure, np.array(times), np.array(snaps))


def local_maxima(times: np.ndarray, values: np.ndarray, prominence: float = 1e-3
                 ) -> list[tuple[float, float]]:
    """Interior local maxima (t, value) that rise at least ``prominence`` above
    the lowest point separating them from any higher value on either side."""
    v = np.asarray(values, dtype=float)
    out = []
    for i in range(1, len(v) - 1):
        if not (v[i] > v[i - 1] and v[i] >= v[i + 1]):
            continue
        left = v[:i][::-1]
        right = v[i + 1:]
        drops = []
        for side in (left, right):
            higher = np.nonzero(side > v[i])[0]
            seg = side[:higher[0]] if higher.size else side
            drops.append(v[i] - seg.min() if seg.size else 0.0)
        if min(drops) >= prominence:
            out.append((float(times[i]), float(v[i])))
    return out
