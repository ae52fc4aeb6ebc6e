"""Exact deterministic Lindblad propagation of the correlation matrix.

The equation of motion dD/dt = -i (Z D - D Z^dag) + 2 M_+ with Z = H - i M
admits the exact solution D(t) = Q D0 Q^dag + R(t) with Q = exp(-i Z t) and
R built from the eigendecomposition of Z via a Hadamard-product kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_sylvester

from .model import JumpChannels
from .state import hermitize

DEGENERATE_TOL = 1e-10


class PropagatorError(RuntimeError):
    pass


def lindblad_derivative(D: np.ndarray, channels: JumpChannels) -> np.ndarray:
    """Right-hand side -i (Z D - D Z^dag) + 2 M_+."""
    Z = channels.Z
    return -1j * (Z @ D - D @ Z.conj().T) + 2.0 * channels.M_plus


@dataclass
class LindbladPropagator:
    """Cached eigendecomposition Z = V Lambda V^{-1} plus S = V^{-1} M_+ V^{-dag}.

    Immutable after construction; reusable for any duration and safely
    shared read-only across trajectory workers.
    """

    channels: JumpChannels
    V: np.ndarray = field(init=False)
    Vinv: np.ndarray = field(init=False)
    lam: np.ndarray = field(init=False)
    S: np.ndarray = field(init=False)
    diagonalizable: bool = field(init=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        Z = self.channels.Z
        lam, V = np.linalg.eig(Z)
        try:
            Vinv = np.linalg.inv(V)
            residual = np.max(np.abs((V * lam) @ Vinv - Z))
            ok = residual < 1e-9 * max(1.0, np.max(np.abs(Z)))
        except np.linalg.LinAlgError:
            ok = False
        if not ok:
            warnings.warn("Z appears defective; falling back to RK4 integration")
            self.diagonalizable = False
            self.V = V
            self.Vinv = np.eye(Z.shape[0], dtype=complex)
            self.lam = lam
            self.S = np.zeros_like(Z)
            return
        self.diagonalizable = True
        self.V = V
        self.Vinv = Vinv
        self.lam = lam
        self.S = Vinv @ self.channels.M_plus @ Vinv.conj().T

    def factors(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Cached (Q(t), R(t)) for the duration t."""
        key = float(t)
        if key not in self._cache:
            Q = (self.V * np.exp(-1j * self.lam * t)) @ self.Vinv
            theta = self.lam[:, None] - self.lam.conj()[None, :]
            K = np.empty_like(theta)
            small = np.abs(theta) < DEGENERATE_TOL
            safe = np.where(small, 1.0, theta)
            K = (1.0 - np.exp(-1j * safe * t)) / safe
            # second-order series (1 - e^{-i theta t})/theta = i t + theta t^2/2
            K = np.where(small, 1j * t + theta * t * t / 2.0, K)
            R = -2j * self.V @ (self.S * K) @ self.V.conj().T
            self._cache[key] = (Q, hermitize(R))
        return self._cache[key]


def exact_propagate(D0: np.ndarray, propagator: LindbladPropagator,
                    t: float) -> np.ndarray:
    """D(t) = Q D0 Q^dag + R(t). Falls back to RK4 if Z is defective."""
    if t < 0:
        raise PropagatorError(f"propagation time must be >= 0, got {t}")
    if t == 0.0:
        return D0.copy()
    if not propagator.diagonalizable:
        return lindblad_rk4(D0, propagator.channels, t)
    Q, R = propagator.factors(t)
    return hermitize(Q @ D0 @ Q.conj().T + R)


def lindblad_rk4(D0: np.ndarray, channels: JumpChannels, t: float,
                 dt_int: float | None = None) -> np.ndarray:
    """Classic fourth-order integration of dD/dt; reference and fallback."""
    if dt_int is None:
        scale = max(np.max(np.abs(channels.Z)), 1e-12)
        dt_int = 0.01 / scale
    n_steps = max(1, int(np.ceil(t / dt_int)))
    h = t / n_steps
    D = D0.copy()
    for _ in range(n_steps):
        k1 = lindblad_derivative(D, channels)
        k2 = lindblad_derivative(D + 0.5 * h * k1, channels)
        k3 = lindblad_derivative(D + 0.5 * h * k2, channels)
        k4 = lindblad_derivative(D + h * k3, channels)
        D = D + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return hermitize(D)


def steady_state(channels: JumpChannels) -> np.ndarray:
    """Fixed point of the unconditional dynamics.

    Local channels factorize to n * identity; the general case solves the
    Sylvester equation Z D - D Z^dag = -2i M_+.
    """
    L = channels.L
    if channels.is_local:
        tot = channels.gamma_plus + channels.gamma_minus
        if tot == 0.0:
            raise PropagatorError("no dissipation: steady state not unique")
        n = channels.gamma_plus / tot
        return n * np.eye(L, dtype=complex)
    Dss = solve_sylvester(channels.Z, -channels.Z.conj().T,
                          -2j * channels.M_plus)
    return hermitize(Dss)
