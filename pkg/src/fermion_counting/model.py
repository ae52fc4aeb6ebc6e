"""Static model objects: rates, hopping Hamiltonian, jump channels, initial state.

Units: the hopping amplitude J sets the energy scale (J = 1 by default), all
rates are quoted in units of J and times in units of 1/J.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


class ModelError(ValueError):
    """Invalid physical parameters or incompatible matrix shapes."""


def rates_from_density(gamma: float, n: float) -> tuple[float, float]:
    """Gain/loss rates (gamma_plus, gamma_minus) from mean rate and density.

    Inverts n = gamma_+/(gamma_+ + gamma_-) and gamma = (gamma_+ + gamma_-)/2,
    giving gamma_+ = 2*gamma*n and gamma_- = 2*gamma*(1 - n).
    """
    if not 0.0 < n < 1.0:
        raise ModelError(f"density n must lie in (0, 1), got {n}")
    if gamma <= 0.0:
        raise ModelError(f"mean rate gamma must be positive, got {gamma}")
    return 2.0 * gamma * n, 2.0 * gamma * (1.0 - n)


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the monitored gain/loss chain.

    Immutable; shared read-only across trajectory workers.
    """

    L: int
    gamma_plus: float
    gamma_minus: float
    J: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        if self.L < 2:
            raise ModelError(f"lattice size L must be >= 2, got {self.L}")
        if self.gamma_plus < 0 or self.gamma_minus < 0:
            raise ModelError("gain/loss rates must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ModelError(f"efficiency eta must lie in [0, 1], got {self.eta}")

    @classmethod
    def from_density(cls, L: int, gamma: float, n: float, J: float = 1.0,
                     eta: float = 1.0) -> "ModelParams":
        gp, gm = rates_from_density(gamma, n)
        return cls(L=L, gamma_plus=gp, gamma_minus=gm, J=J, eta=eta)

    @property
    def gamma(self) -> float:
        """Mean jump rate (gamma_+ + gamma_-)/2."""
        return 0.5 * (self.gamma_plus + self.gamma_minus)

    @property
    def delta_gamma(self) -> float:
        """Net gain rate gamma_+ - gamma_-."""
        return self.gamma_plus - self.gamma_minus

    @property
    def n(self) -> float:
        """Steady-state density gamma_+/(gamma_+ + gamma_-)."""
        tot = self.gamma_plus + self.gamma_minus
        if tot == 0.0:
            return 0.5
        return self.gamma_plus / tot

    @property
    def delta_eta(self) -> float:
        return 1.0 - self.eta


@dataclass
class LatticeHamiltonian:
    """Hermitian single-particle Hamiltonian with cached propagators U(tau)."""

    H: np.ndarray
    _propagators: dict = field(default_factory=dict, repr=False)
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def L(self) -> int:
        return self.H.shape[0]

    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached (eigenvalues, eigenvectors) of H."""
        if self._eig is None:
            eps, V = np.linalg.eigh(self.H)
            self._eig = (eps, V)
        return self._eig

    def propagator(self, tau: float) -> np.ndarray:
        """U(tau) = exp(-i H tau), cached per duration."""
        key = float(tau)
        if key not in self._propagators:
            eps, V = self.eigensystem()
            self._propagators[key] = (V * np.exp(-1j * eps * tau)) @ V.conj().T
        return self._propagators[key]


def build_hopping_hamiltonian(L: int, J: float = 1.0) -> LatticeHamiltonian:
    """Nearest-neighbor hopping -J on a periodic ring of L sites.

    For L = 2 the bulk and wrap-around couplings add, giving matrix
    elements -2J.
    """
    if L < 2:
        raise ModelError(f"lattice size L must be >= 2, got {L}")
    H = np.zeros((L, L))
    idx = np.arange(L)
    # sum over both Kronecker deltas mod L; at L = 2 they coincide and add
    np.add.at(H, (idx, (idx + 1) % L), -J)
    np.add.at(H, ((idx + 1) % L, idx), -J)
    return LatticeHamiltonian(H=H.astype(complex))


@dataclass
class JumpChannels:
    """Bath matrices for the gain/loss jump channels.

    B_plus/B_minus parameterize the jump operators; the Hermitian bath
    matrices are M_+ = B_+^T B_+^*, M_- = B_-^dag B_-, M = M_+ + M_-, and
    Z = H - i M generates the non-Hermitian part of the dynamics.

    The per-site matrices M_{+,l} and M_{-,l} are rank one, b_l b_l^dag,
    with vectors stored row-wise in gain_vectors / loss_vectors.
    """

    B_plus: np.ndarray
    B_minus: np.ndarray
    M_plus: np.ndarray
    M_minus: np.ndarray
    M: np.ndarray
    Z: np.ndarray
    is_local: bool
    gamma_plus: float
    gamma_minus: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def L(self) -> int:
        return self.Z.shape[0]

    @property
    def gain_vectors(self) -> np.ndarray:
        """Row l is the vector b with M_{+,l} = b b^dag."""
        return self.B_plus

    @property
    def loss_vectors(self) -> np.ndarray:
        """Row l is the vector c with M_{-,l} = c c^dag."""
        return self.B_minus.conj()

    @property
    def delta_M(self) -> np.ndarray:
        return self.M_plus - self.M_minus

    def nojump_factors(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Cached (T, T^dag T) with T = exp(tau (-iH + delta_M)), the exact
        single-particle no-jump Kraus factor. Written via Z as
        -iH + delta_M = -iZ + 2 M_+."""
        key = float(tau)
        if key not in self._cache:
            T = expm(tau * (-1j * self.Z + 2.0 * self.M_plus))
            self._cache[key] = (T, T.conj().T @ T)
        return self._cache[key]


def build_jump_channels(params: ModelParams, H: LatticeHamiltonian,
                        B_plus: np.ndarray | None = None,
                        B_minus: np.ndarray | None = None) -> JumpChannels:
    """Assemble bath matrices. Defaults to local uniform channels
    B_pm = sqrt(gamma_pm / 2) * identity; arbitrary B_pm are accepted."""
    L = H.L
    local = B_plus is None and B_minus is None
    if B_plus is None:
        B_plus = np.sqrt(params.gamma_plus / 2.0) * np.eye(L, dtype=complex)
    if B_minus is None:
        B_minus = np.sqrt(params.gamma_minus / 2.0) * np.eye(L, dtype=complex)
    B_plus = np.asarray(B_plus, dtype=complex)
    B_minus = np.asarray(B_minus, dtype=complex)
    for name, B in (("B_plus", B_plus), ("B_minus", B_minus)):
        if B.shape != (L, L):
            raise ModelError(f"{name} must be {L}x{L}, got {B.shape}")
    M_plus = B_plus.T @ B_plus.conj()
    M_minus = B_minus.conj().T @ B_minus
    M = M_plus + M_minus
    Z = H.H - 1j * M
    return JumpChannels(B_plus=B_plus, B_minus=B_minus, M_plus=M_plus,
                        M_minus=M_minus, M=M, Z=Z, is_local=local,
                        gamma_plus=params.gamma_plus,
                        gamma_minus=params.gamma_minus)


def initial_cdw_state(L: int) -> np.ndarray:
    """Charge-density-wave correlation matrix diag(1, 0, 1, 0, ...).

    Odd sites (1-based) occupied; density 1/2. Requires even L.
    """
    if L % 2 != 0:
        raise ModelError(f"CDW initial state requires even L, got {L}")
    D = np.zeros((L, L), dtype=complex)
    D[::2, ::2] = np.eye(L // 2)
    return D
