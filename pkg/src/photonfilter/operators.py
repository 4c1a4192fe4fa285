"""System model and the superoperator families of the (S, L, H) formalism.

Heisenberg-picture maps act on observables X, Schrodinger-picture maps act
on density-like operators rho. All functions broadcast over leading axes, so
``rho`` may be a single d x d matrix or a stack of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SUPEROP_KINDS = ("00", "01", "10", "11")

# Schrodinger map D_jk is the trace-pairing adjoint of the Heisenberg map
# listed here: Tr[D_jk(rho)^dag X] == Tr[rho^dag L_dual(X)].
DUAL_KIND = {"00": "00", "01": "10", "10": "01", "11": "11"}


class DimensionError(ValueError):
    """Raised when an operand does not match the system dimension."""


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def _as_square(name: str, a, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} must be {dim}x{dim}, got {arr.shape[0]}x{arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Finite-dimensional open system given by scattering S, coupling L and
    Hamiltonian H, started in the pure state ``initial_state``.

    The decay rate is folded into ``L`` (e.g. ``L = sqrt(kappa) sigma_minus``).
    """

    S: np.ndarray
    L: np.ndarray
    H: np.ndarray
    initial_state: np.ndarray
    tol: float = 1e-12

    def __post_init__(self):
        L = _as_square("L", self.L)
        d = L.shape[0]
        S = _as_square("S", self.S, d)
        H = _as_square("H", self.H, d)
        eta = np.asarray(self.initial_state, dtype=complex).reshape(-1)
        if eta.shape != (d,):
            raise DimensionError(f"initial_state must have length {d}, got {eta.shape[0]}")
        eye = np.eye(d)
        if not (np.allclose(S.conj().T @ S, eye, rtol=0, atol=self.tol)
                and np.allclose(S @ S.conj().T, eye, rtol=0, atol=self.tol)):
            raise ValueError("S is not unitary")
        if not np.allclose(H, H.conj().T, rtol=0, atol=self.tol):
            raise ValueError("H is not Hermitian")
        if abs(np.linalg.norm(eta) - 1.0) > self.tol:
            raise ValueError(f"initial_state has norm {np.linalg.norm(eta):.15g}, expected 1")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "initial_state", eta)

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    @cached_property
    def Ld(self) -> np.ndarray:
        return self.L.conj().T

    @cached_property
    def Sd(self) -> np.ndarray:
        return self.S.conj().T

    @cached_property
    def LdL(self) -> np.ndarray:
        return self.Ld @ self.L

    @cached_property
    def initial_projector(self) -> np.ndarray:
        return np.outer(self.initial_state, self.initial_state.conj())

    @classmethod
    def two_level_atom(cls, kappa: float = 1.0, excited: bool = False) -> "SystemModel":
        """Qubit with basis |e> = [1, 0], |g> = [0, 1]; L = sqrt(kappa) |g><e|, S = I, H = 0."""
        sigma_minus = np.array([[0, 0], [1, 0]], dtype=complex)
        state = np.array([1, 0] if excited else [0, 1], dtype=complex)
        return cls(S=np.eye(2), L=np.sqrt(kappa) * sigma_minus, H=np.zeros((2, 2)),
                   initial_state=state)


def _check_operand(model: SystemModel, name: str, a) -> np.ndarray:
    arr = np.asarray(a, dtype=complex)
    if arr.ndim < 2 or arr.shape[-2:] != (model.dim, model.dim):
        raise DimensionError(
            f"{name} must have trailing shape ({model.dim}, {model.dim}), got {arr.shape}")
    return arr


def heisenberg_superop(which: str, model: SystemModel, X) -> np.ndarray:
    """Apply the Heisenberg-picture generator L_jk to the observable X.

    ``which`` selects the Ito differential the term multiplies:
    ``"00"`` (dt), ``"01"`` (dB), ``"10"`` (dB^*) or ``"11"`` (dLambda).
    """
    X = _check_operand(model, "X", X)
    L, Ld, S, Sd, H = model.L, model.Ld, model.S, model.Sd, model.H
    if which == "00":
        return (0.5 * Ld @ (X @ L - L @ X) + 0.5 * (Ld @ X - X @ Ld) @ L
                - 1j * (X @ H - H @ X))
    if which == "01":
        return (Ld @ X - X @ Ld) @ S
    if which == "10":
        return Sd @ (X @ L - L @ X)
    if which == "11":
        return Sd @ X @ S - X
    raise ValueError(f"unknown superoperator {which!r}; expected one of {SUPEROP_KINDS}")


def schrodinger_superop(which: str, model: SystemModel, rho) -> np.ndarray:
    """Apply the Schrodinger-picture map D_jk to rho.

    D_00 is the Lindblad generator; D_01(rho) = [S rho, L^*],
    D_10(rho) = [L, rho S^*] and D_11(rho) = S rho S^* - rho.
    """
    rho = _check_operand(model, "rho", rho)
    L, Ld, S, Sd, H = model.L, model.Ld, model.S, model.Sd, model.H
    if which == "00":
        LdL = model.LdL
        return (L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)
                - 1j * (H @ rho - rho @ H))
    if which == "01":
        Srho = S @ rho
        return Srho @ Ld - Ld @ Srho
    if which == "10":
        rhoSd = rho @ Sd
        return L @ rhoSd - rhoSd @ L
    if which == "11":
        return S @ rho @ Sd - rho
    raise ValueError(f"unknown superoperator {which!r}; expected one of {SUPEROP_KINDS}")


def trace_pairing(rho: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Tr[rho^dag X], broadcast over leading axes."""
    return np.einsum("...ij,...ij->...", np.conj(rho), X)


@dataclass
class DualityReport:
    trials: int
    max_deviation: dict[str, float]
    tol: float

    @property
    def worst(self) -> float:
        return max(self.max_deviation.values())

    @property
    def passed(self) -> bool:
        return self.worst < self.tol


def verify_duality(model: SystemModel, trials: int = 100, *, seed: int = 0,
                   tol: float = 1e-12, schrodinger=schrodinger_superop) -> DualityReport:
    """Check Tr[D_jk(rho)^dag X] = Tr[rho^dag L_kj(X)] on random complex matrices.

    ``schrodinger`` can be swapped for a deliberately broken map to confirm
    that the check actually detects errors.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    d = model.dim
    shape = (trials, d, d)
    rho = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    X = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    devs = {}
    for kind in SUPEROP_KINDS:
        lhs = trace_pairing(schrodinger(kind, model, rho), X)
        rhs = trace_pairing(rho, heisenberg_superop(DUAL_KIND[kind], model, X))
        devs[kind] = float(np.max(np.abs(lhs - rhs)))
    return DualityReport(trials=trials, max_deviation=devs, tol=tol)
