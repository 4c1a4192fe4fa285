"""Fock-state ladder: n photons sharing one profile xi.

Independent of the subset hierarchy. Components w^{p;q}, p, q = 0..n, stand
for the reduced operator of |eta F_p><eta F_q| with F_p = B^*(xi)^p |0> / sqrt(p!),
and dB(t)|F_p> = sqrt(p) xi(t) |F_{p-1}> dt. Only shifted-array arithmetic is
used here, so agreement with the general engine is a genuine cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .master import rk4_step
from .operators import SystemModel
from .photons import PulseSet, _step_count


def _ket_shift(w: np.ndarray) -> np.ndarray:
    """out[p, q] = w[p-1, q], zero for p = 0."""
    out = np.zeros_like(w)
    out[1:] = w[:-1]
    return out


def _bra_shift(w: np.ndarray) -> np.ndarray:
    """out[p, q] = w[p, q-1], zero for q = 0."""
    out = np.zeros_like(w)
    out[:, 1:] = w[:, :-1]
    return out


@dataclass(frozen=True)
class FockLadder:
    model: SystemModel
    pulse: PulseSet           # exactly one profile
    n: int

    def __post_init__(self):
        if self.pulse.n != 1:
            raise ValueError("the Fock ladder takes exactly one pulse profile")
        if self.n < 0:
            raise ValueError("photon number must be >= 0")

    @property
    def sqrt_n(self) -> np.ndarray:
        return np.sqrt(np.arange(self.n + 1))

    def initial(self) -> np.ndarray:
        d = self.model.dim
        w = np.zeros((self.n + 1, self.n + 1, d, d), dtype=complex)
        for p in range(self.n + 1):
            w[p, p] = self.model.initial_projector
        return w

    def _parts(self, w: np.ndarray, t: float):
        """Bra-lowered, ket-lowered and doubly lowered ladders with their xi weights applied."""
        xi = self.pulse(t)[0]
        s = self.sqrt_n
        bra = np.conj(xi) * s[None, :, None, None] * _bra_shift(w)
        ket = xi * s[:, None, None, None] * _ket_shift(w)
        both = abs(xi) ** 2 * np.outer(s, s)[:, :, None, None] * _ket_shift(_bra_shift(w))
        return bra, ket, both

    def drift(self, w: np.ndarray, t: float) -> np.ndarray:
        m = self.model
        L, Ld, S, Sd, H = m.L, m.Ld, m.S, m.Sd, m.H
        bra, ket, both = self._parts(w, t)
        out = L @ w @ Ld - 0.5 * (m.LdL @ w + w @ m.LdL) - 1j * (H @ w - w @ H)
        out = out + L @ bra @ Sd - bra @ Sd @ L            # [L, rho S^dag]
        out = out + S @ ket @ Ld - Ld @ S @ ket            # [S rho, L^dag]
        out = out + S @ both @ Sd - both
        return out

    def sbar(self, w: np.ndarray, t: float) -> np.ndarray:
        m = self.model
        bra, ket, _ = self._parts(w, t)
        return m.L @ w + w @ m.Ld + bra @ m.Sd + m.S @ ket

    def jump(self, w: np.ndarray, t: float) -> np.ndarray:
        m = self.model
        bra, ket, both = self._parts(w, t)
        return (m.L @ w @ m.Ld + m.L @ bra @ m.Sd + m.S @ ket @ m.Ld
                + m.S @ both @ m.Sd)


def integrate_fock_master(model: SystemModel, pulse: PulseSet, n: int, t_final: float,
                          dt: float) -> tuple[np.ndarray, np.ndarray]:
    """RK4 over the ladder; returns (times, w) with w of shape (steps+1, n+1, n+1, d, d)."""
    lad = FockLadder(model, pulse, n)
    steps = _step_count(t_final, dt)
    w = lad.initial()
    out = [w]
    for k in range(steps):
        w = rk4_step(lad.drift, w, k * dt, dt)
        out.append(w)
    return dt * np.arange(steps + 1), np.array(out)


def fock_filter_step(ladder: FockLadder, w: np.ndarray, t: float, dt: float,
                     dY: float) -> np.ndarray:
    """Euler-Maruyama homodyne update of the ladder for the measured increment dY."""
    n = ladder.n
    sb = ladder.sbar(w, t)
    m = float(np.trace(sb[n, n]).real)
    return w + ladder.drift(w, t) * dt + (sb - w * m) * (dY - m * dt)


def run_fock_filter(model: SystemModel, pulse: PulseSet, n: int, dt: float,
                    record) -> np.ndarray:
    """Filter a given dY record; returns the ladder after every step, (steps+1, n+1, n+1, d, d)."""
    lad = FockLadder(model, pulse, n)
    w = lad.initial()
    out = [w]
    for k, dY in enumerate(np.asarray(record, dtype=float)):
        w = fock_filter_step(lad, w, k * dt, dt, float(dY))
        out.append(w)
    return np.array(out)

