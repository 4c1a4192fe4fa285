"""Pulse shapes, subset bookkeeping and normalization of n-photon wavepackets.

A wavepacket with pulses xi_1..xi_n spawns 2^n states |Phi_r>, one per subset
r of annihilated photons: |Phi_r> ~ prod_{i not in r} B^*(xi_i)|0>. Subsets
are 1-based and ordered first by size, then lexicographically.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAX_PHOTONS = 10
NORM_TOL = 1e-3


# --------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class PulseShape:
    """Description of one pulse: ``gaussian(omega, center)`` or a tabulated file."""

    kind: str
    omega: float | None = None
    center: float | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.omega is None or self.center is None or self.omega <= 0:
                raise ValueError("gaussian pulse needs omega > 0 and a center")
        elif self.kind == "tabulated":
            if not self.path:
                raise ValueError("tabulated pulse needs a path")
        else:
            raise ValueError(f"unknown pulse kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian({self.omega!r}, {self.center!r})"
        return f"file({self.path})"


def gaussian_pulse(t, omega: float, center: float) -> np.ndarray:
    """Unit-norm Gaussian wavepacket (omega^2/2pi)^(1/4) exp(-omega^2 (t-center)^2 / 4)."""
    t = np.asarray(t, dtype=float)
    return (omega**2 / (2 * np.pi)) ** 0.25 * np.exp(-(omega**2) / 4 * (t - center) ** 2)


def gaussian_overlap(omega1: float, center1: float, omega2: float, center2: float) -> float:
    """Closed-form <xi_1|xi_2> of two real Gaussian pulses on the whole line."""
    s = omega1**2 + omega2**2
    return math.sqrt(2 * omega1 * omega2 / s) * math.exp(
        -(omega1**2) * omega2**2 * (center1 - center2) ** 2 / (4 * s))


def read_pulse_file(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a two- or three-column CSV ``t,re[,im]``. A non-numeric first row is a header."""
    times, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row if c.strip()]
            if not row or row[0].startswith("#"):
                continue
            try:
                nums = [float(c) for c in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric entry in {row}") from None
            if len(nums) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected t,re[,im], got {len(nums)} columns")
            times.append(nums[0])
            values.append(complex(nums[1], nums[2] if len(nums) == 3 else 0.0))
    t = np.asarray(times)
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError(f"{path}: time column must be strictly increasing with >= 2 rows")
    return t, np.asarray(values, dtype=complex)


def trapezoid_inner(a: np.ndarray, b: np.ndarray, dt: float) -> complex:
    """<a|b> = int conj(a) b by the trapezoidal rule on a uniform grid."""
    f = np.conj(a) * b
    return complex(dt * (f.sum() - 0.5 * (f[..., 0] + f[..., -1])))


class PulseSet:
    """n pulse profiles sampled on a shared uniform grid over [0, t_final].

    Samples are rescaled to unit trapezoidal norm on the grid, after checking
    that the raw norm is already within ``NORM_TOL`` of one. Off-grid values
    of Gaussian pulses are evaluated in closed form (same rescaling), so RK4
    half steps keep fourth order; tabulated pulses use linear interpolation.
    The profile is zero outside the grid.
    """

    def __init__(self, samples, dt: float, shapes: Sequence[PulseShape] | None = None):
        samples = np.atleast_2d(np.asarray(samples, dtype=complex))
        if samples.size == 0:
            samples = np.zeros((0, samples.shape[-1] if samples.ndim == 2 else 2), dtype=complex)
        if dt <= 0:
            raise ValueError("grid step must be positive")
        n, m = samples.shape
        if n > MAX_PHOTONS:
            raise ValueError(f"at most {MAX_PHOTONS} photons are supported, got {n}")
        if m < 2:
            raise ValueError("pulse grid needs at least two points")
        if not np.all(np.isfinite(samples)):
            raise ValueError("pulse samples contain non-finite values")
        norms = np.array([math.sqrt(trapezoid_inner(s, s, dt).real) for s in samples])
        for i, nrm in enumerate(norms, start=1):
            if abs(nrm - 1.0) > NORM_TOL:
                raise ValueError(
                    f"pulse {i} has norm {nrm:.6g} on [0, {dt * (m - 1):g}]; "
                    f"expected 1 within {NORM_TOL:g} (extend the time window?)")
        self.samples = samples / norms[:, None] if n else samples
        self.raw_norms = norms
        self.dt = float(dt)
        self.shapes = tuple(shapes) if shapes is not None else tuple(
            PulseShape("tabulated", path="<array>") for _ in range(n))
        self.samples.setflags(write=False)

    @classmethod
    def from_shapes(cls, shapes: Sequence[PulseShape], t_final: float, dt: float,
                    base_dir: str | Path | None = None) -> "PulseSet":
        steps = _step_count(t_final, dt)
        grid = dt * np.arange(steps + 1)
        rows = []
        for shape in shapes:
            if shape.kind == "gaussian":
                rows.append(gaussian_pulse(grid, shape.omega, shape.center).astype(complex))
            else:
                path = Path(shape.path)
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                t, v = read_pulse_file(path)
                re = np.interp(grid, t, v.real, left=0.0, right=0.0)
                im = np.interp(grid, t, v.imag, left=0.0, right=0.0)
                rows.append(re + 1j * im)
        samples = np.array(rows, dtype=complex).reshape(len(rows), steps + 1)
        return cls(samples, dt, shapes)

    @classmethod
    def gaussians(cls, omegas: Sequence[float], centers: Sequence[float], t_final: float,
                  dt: float) -> "PulseSet":
        if len(omegas) != len(centers):
            raise ValueError("omegas and centers must have equal length")
        shapes = [PulseShape("gaussian", omega=float(o), center=float(c))
                  for o, c in zip(omegas, centers)]
        return cls.from_shapes(shapes, t_final, dt)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def t_final(self) -> float:
        return self.dt * (self.samples.shape[1] - 1)

    @cached_property
    def grid(self) -> np.ndarray:
        return self.dt * np.arange(self.samples.shape[1])

    def __call__(self, t: float) -> np.ndarray:
        """All n pulse values at time t (linear interpolation between grid points)."""
        x = t / self.dt
        i = int(math.floor(x))
        last = self.samples.shape[1] - 1
        if i < 0 or i > last or (i == last and x > last + 1e-9):
            return np.zeros(self.n, dtype=complex)
        if i >= last:
            return self.samples[:, last].copy()
        f = x - i
        if f < 1e-12:
            return self.samples[:, i].copy()
        if self._analytic:
            return np.array([gaussian_pulse(t, s.omega, s.center) for s in self.shapes],
                            dtype=complex) / self.raw_norms
        return (1.0 - f) * self.samples[:, i] + f * self.samples[:, i + 1]

    @cached_property
    def _analytic(self) -> bool:
        return self.n > 0 and all(s.kind == "gaussian" for s in self.shapes)

    def gram(self) -> np.ndarray:
        return gram_matrix(self)


def _step_count(t_final: float, dt: float) -> int:
    if dt <= 0 or t_final <= 0:
        raise ValueError("t_final and dt must be positive")
    steps = t_final / dt
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-6 * max(1.0, steps):
        raise ValueError(f"dt={dt!r} does not divide t_final={t_final!r}")
    return n


def gram_matrix(pulses: PulseSet) -> np.ndarray:
    """G_ij = <xi_i|xi_j> by trapezoidal quadrature on the pulse grid."""
    s = pulses.samples
    w = np.full(s.shape[1], pulses.dt)
    w[0] = w[-1] = 0.5 * pulses.dt
    return (np.conj(s) * w) @ s.T


# --------------------------------------------------------------------------
# subsets


@dataclass(frozen=True, order=False)
class SubsetIndex:
    """Sorted subset of {1..n}; labels the photons that have been annihilated."""

    n: int
    members: tuple[int, ...] = ()

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if any(b <= a for a, b in zip(members, members[1:])):
            raise ValueError(f"subset members must be strictly increasing, got {members}")
        if members and (members[0] < 1 or members[-1] > self.n):
            raise ValueError(f"subset members must lie in 1..{self.n}, got {members}")
        object.__setattr__(self, "members", members)

    @property
    def k(self) -> int:
        return len(self.members)

    def complement(self) -> tuple[int, ...]:
        present = set(self.members)
        return tuple(i for i in range(1, self.n + 1) if i not in present)

    def add(self, mu: int) -> "SubsetIndex":
        if mu in self.members:
            raise ValueError(f"{mu} already in {self.members}")
        return SubsetIndex(self.n, tuple(sorted(self.members + (mu,))))

    @property
    def rank(self) -> int:
        return subset_rank(self)

    def __str__(self) -> str:
        return "{" + ",".join(map(str, self.members)) + "}"


def subset_rank(r: SubsetIndex) -> int:
    """1-based position of r among all subsets of {1..n}: by size, then lexicographic."""
    n, k = r.n, r.k
    m = sum(math.comb(n, i) for i in range(k))
    # combinatorial number system for the lexicographic position among k-subsets
    pos, prev = 0, 0
    for i, v in enumerate(r.members):
        for u in range(prev + 1, v):
            pos += math.comb(n - u, k - i - 1)
        prev = v
    return m + pos + 1


def all_subsets(n: int) -> list[SubsetIndex]:
    """Every subset of {1..n} in rank order."""
    return [SubsetIndex(n, c) for k in range(n + 1)
            for c in itertools.combinations(range(1, n + 1), k)]


# --------------------------------------------------------------------------
# permanents and normalization


def permanent(M) -> complex:
    """Permanent of a square matrix via Ryser's inclusion-exclusion formula.

    perm(M) = (-1)^k sum_{S subset cols} (-1)^|S| prod_i sum_{j in S} M_ij.
    Cost O(2^k k^2) with numpy; intended for k <= ~12.
    """
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"permanent needs a square matrix, got shape {M.shape}")
    k = M.shape[0]
    if k == 0:
        return 1.0 + 0j
    codes = np.arange(1, 2**k)
    masks = ((codes[:, None] >> np.arange(k)) & 1).astype(float)
    row_sums = masks @ M.T                       # (2^k - 1, k)
    signs = (-1.0) ** masks.sum(axis=1)
    return complex((-1) ** k * np.sum(signs * np.prod(row_sums, axis=1)))


def _sub_permanent(G: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> complex:
    if len(rows) != len(cols):
        return 0j
    rows0 = [i - 1 for i in rows]
    cols0 = [j - 1 for j in cols]
    return permanent(G[np.ix_(rows0, cols0)])


def normalization(pulses_or_gram, r: SubsetIndex) -> float:
    """N_r: squared norm of prod_{i not in r} B^*(xi_i)|0>, i.e. perm of the Gram block."""
    G = pulses_or_gram.gram() if isinstance(pulses_or_gram, PulseSet) else np.asarray(pulses_or_gram)
    comp = r.complement()
    if len(comp) <= 1:
        return 1.0
    return float(_sub_permanent(G, comp, comp).real)


def state_overlap(pulses_or_gram, l: SubsetIndex, r: SubsetIndex) -> complex:
    """<Phi_l|Phi_r>; zero unless both states carry the same photon number."""
    if l.k != r.k:
        return 0j
    G = pulses_or_gram.gram() if isinstance(pulses_or_gram, PulseSet) else np.asarray(pulses_or_gram)
    if l == r:
        return 1.0 + 0j
    cl, cr = l.complement(), r.complement()
    return _sub_permanent(G, cl, cr) / math.sqrt(normalization(G, l) * normalization(G, r))


def annihilation_coefficients(pulses: PulseSet, r: SubsetIndex, t: float,
                              norms: dict[SubsetIndex, float] | None = None
                              ) -> list[tuple[int, complex]]:
    """Coefficients c_mu with dB(t)|Phi_r> = sum_mu c_mu |Phi_{r+mu}> dt.

    c_mu = sqrt(N_{r+mu} / N_r) xi_mu(t) for each mu not in r.
    """
    if norms is None:
        G = pulses.gram()
        norm_of = lambda s: normalization(G, s)  # noqa: E731
    else:
        norm_of = norms.__getitem__
    xi = pulses(t)
    base = norm_of(r)
    return [(mu, math.sqrt(norm_of(r.add(mu)) / base) * xi[mu - 1]) for mu in r.complement()]


# --------------------------------------------------------------------------
# index structure shared by the engines


@dataclass(frozen=True, eq=False)
class HierarchyStructure:
    """Precomputed indexing for the hierarchy of components rho^{l;r}.

    Canonical pairs (a, b) of subset positions satisfy a <= b and are ordered
    by (a, b). ``full_index`` / ``conj_mask`` map every ordered pair to its
    canonical slot; non-canonical pairs are conjugate transposes.
    """

    pulses: PulseSet
    subsets: tuple[SubsetIndex, ...] = field(init=False)
    gram: np.ndarray = field(init=False)
    norms: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.pulses.n
        subsets = tuple(all_subsets(n))
        G = gram_matrix(self.pulses)
        object.__setattr__(self, "subsets", subsets)
        object.__setattr__(self, "gram", G)
        object.__setattr__(self, "norms", np.array([normalization(G, s) for s in subsets]))

    @property
    def n(self) -> int:
        return self.pulses.n

    @property
    def size(self) -> int:
        """Number of subsets, 2^n."""
        return len(self.subsets)

    @cached_property
    def position(self) -> dict[SubsetIndex, int]:
        return {s: i for i, s in enumerate(self.subsets)}

    @cached_property
    def pairs(self) -> list[tuple[int, int]]:
        K = self.size
        return [(a, b) for a in range(K) for b in range(a, K)]

    @property
    def count(self) -> int:
        return len(self.pairs)

    @cached_property
    def full_index(self) -> np.ndarray:
        K = self.size
        idx = np.empty((K, K), dtype=np.intp)
        for c, (a, b) in enumerate(self.pairs):
            idx[a, b] = idx[b, a] = c
        return idx

    @cached_property
    def conj_mask(self) -> np.ndarray:
        K = self.size
        return np.tril(np.ones((K, K), dtype=bool), k=-1)

    @cached_property
    def canonical_rows(self) -> np.ndarray:
        return np.array([a for a, _ in self.pairs], dtype=np.intp)

    @cached_property
    def canonical_cols(self) -> np.ndarray:
        return np.array([b for _, b in self.pairs], dtype=np.intp)

    @cached_property
    def _annihilation_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        rows, cols, mus, coefs = [], [], [], []
        for a, s in enumerate(self.subsets):
            for mu in s.complement():
                b = self.position[s.add(mu)]
                rows.append(a)
                cols.append(b)
                mus.append(mu - 1)
                coefs.append(math.sqrt(self.norms[b] / self.norms[a]))
        return (np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp),
                np.array(mus, dtype=np.intp), np.array(coefs, dtype=float))

    @cached_property
    def norm_table(self) -> dict[SubsetIndex, float]:
        return dict(zip(self.subsets, self.norms))

    def coefficients(self, r: SubsetIndex, t: float) -> dict[int, complex]:
        """Annihilation coefficients of |Phi_r> at time t keyed by photon label."""
        return dict(annihilation_coefficients(self.pulses, r, t, norms=self.norm_table))

    def annihilation_matrix(self, t: float) -> np.ndarray:
        """A(t) with dB(t)|Phi_a> = sum_b A[a, b] |Phi_b> dt, in subset-position indices."""
        K = self.size
        A = np.zeros((K, K), dtype=complex)
        rows, cols, mus, coefs = self._annihilation_entries
        if rows.size:
            A[rows, cols] = coefs * self.pulses(t)[mus]
        return A

    def overlap_matrix(self) -> np.ndarray:
        """O[a, b] = <Phi_a|Phi_b> for all subset positions."""
        K = self.size
        O = np.zeros((K, K), dtype=complex)
        for a, l in enumerate(self.subsets):
            for b, r in enumerate(self.subsets):
                if l.k == r.k:
                    O[a, b] = 1.0 if a == b else state_overlap(self.gram, l, r)
        return O

    def pair_of(self, l: SubsetIndex, r: SubsetIndex) -> tuple[int, bool]:
        """Canonical slot for (l, r) and whether it must be conjugate-transposed."""
        a, b = self.position[l], self.position[r]
        return int(self.full_index[a, b]), a > b

    def expand(self, data: np.ndarray) -> np.ndarray:
        """Canonical (..., C, d, d) storage to the full (..., K, K, d, d) family."""
        full = data[..., self.full_index, :, :]
        mask = self.conj_mask[:, :, None, None]
        return np.where(mask, np.conj(np.swapaxes(full, -1, -2)), full)

    def compress(self, full: np.ndarray) -> np.ndarray:
        return full[..., self.canonical_rows, self.canonical_cols, :, :]

    def label(self, c: int) -> tuple[int, int]:
        """Subset ranks (1-based) of the canonical pair at slot c."""
        a, b = self.pairs[c]
        return a + 1, b + 1


def component_count(n: int) -> int:
    """Number of independent hierarchy components, 2^n (2^n + 1) / 2."""
    K = 2**n
    return K * (K + 1) // 2


def wick_inner_product(G: np.ndarray, bra: Iterable[int], ket: Iterable[int]) -> complex:
    """<0| prod_{a in bra} B(xi_a) prod_{b in ket} B^*(xi_b) |0> by recursive contraction.

    Each annihilator B(xi_a) is commuted through the creators using
    [B(xi_a), B^*(xi_b)] = <xi_a|xi_b>, until it hits the vacuum. Independent
    of the permanent routine; exponential cost, meant as a reference for n <= 5.
    """
    bra, ket = tuple(bra), tuple(ket)
    if len(bra) != len(ket):
        return 0j
    if not bra:
        return 1.0 + 0j
    a, rest = bra[0], bra[1:]
    total = 0j
    for i, b in enumerate(ket):
        total += G[a - 1, b - 1] * wick_inner_product(G, rest, ket[:i] + ket[i + 1:])
    return total
