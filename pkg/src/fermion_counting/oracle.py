"""Dense full-Hilbert-space reference for small lattices (L <= 8).

Implements the discrete-time quantum-jump process verbatim on the 2^L
dimensional Fock space with Jordan-Wigner fermion operators. Used only in
tests to validate every Gaussian-level operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .model import JumpChannels, LatticeHamiltonian, ModelParams
from .state import hermitize

MAX_SITES = 8


@dataclass
class FockOperators:
    """Jordan-Wigner annihilation operators and derived many-body matrices."""

    L: int
    c: list = field(repr=False)              # annihilation matrices, 2^L x 2^L
    H: np.ndarray = field(repr=False)        # many-body Hamiltonian
    H_eff: np.ndarray = field(repr=False)    # H - (i/2) sum c_a^dag c_a
    N: np.ndarray = field(repr=False)        # total number operator
    jump_ops: list = field(repr=False)       # [(label, operator), ...]


def _jordan_wigner(L: int) -> list:
    a = np.array([[0.0, 1.0], [0.0, 0.0]])   # |0><1|
    sz = np.diag([1.0, -1.0])
    ops = []
    for l in range(L):
        mats = [sz] * l + [a] + [np.eye(2)] * (L - l - 1)
        full = mats[0]
        for m in mats[1:]:
            full = np.kron(full, m)
        ops.append(full.astype(complex))
    return ops


def build_fock_operators(params: ModelParams, H: LatticeHamiltonian,
                         channels: JumpChannels) -> FockOperators:
    """Many-body operators for the gain/loss model with arbitrary channels.

    Jump operators are c_{+,l} = sqrt(2) sum_l' B_{+,l,l'} psi^dag_{l'} and
    c_{-,l} = sqrt(2) sum_l' B_{-,l,l'} psi_{l'} (unit rates).
    """
    L = params.L
    if L > MAX_SITES:
        raise ValueError(f"oracle capped at L = {MAX_SITES}, got {L}")
    c = _jordan_wigner(L)
    cd = [op.conj().T for op in c]
    dim = 2 ** L
    Hmb = np.zeros((dim, dim), dtype=complex)
    for l in range(L):
        for lp in range(L):
            h = H.H[l, lp]
            if h != 0.0:
                Hmb += h * cd[l] @ c[lp]
    jump_ops = []
    sq2 = np.sqrt(2.0)
    for l in range(L):
        gain = sum(channels.B_plus[l, lp] * cd[lp] for lp in range(L)) * sq2
        jump_ops.append(("+", l, gain))
        loss = sum(channels.B_minus[l, lp] * c[lp] for lp in range(L)) * sq2
        jump_ops.append(("-", l, loss))
    decay = sum(op.conj().T @ op for _, _, op in jump_ops)
    H_eff = Hmb - 0.5j * decay
    N = sum(cd[l] @ c[l] for l in range(L))
    return FockOperators(L=L, c=c, H=Hmb, H_eff=H_eff, N=N, jump_ops=jump_ops)


def liouvillian_apply(rho: np.ndarray, fock: FockOperators) -> np.ndarray:
    """L rho = -i[H, rho] + sum_a (c_a rho c_a^dag - {c_a^dag c_a, rho}/2)."""
    out = -1j * (fock.H @ rho - rho @ fock.H)
    for _, _, op in fock.jump_ops:
        opd = op.conj().T
        anti = opd @ op
        out += op @ rho @ opd - 0.5 * (anti @ rho + rho @ anti)
    return out


def lindblad_rk4(rho: np.ndarray, fock: FockOperators, t: float,
                 dt_int: float = 1e-3) -> np.ndarray:
    """RK4 integration of the dense master equation."""
    n_steps = max(1, int(np.ceil(t / dt_int)))
    h = t / n_steps
    for _ in range(n_steps):
        k1 = liouvillian_apply(rho, fock)
        k2 = liouvillian_apply(rho + 0.5 * h * k1, fock)
        k3 = liouvillian_apply(rho + 0.5 * h * k2, fock)
        k4 = liouvillian_apply(rho + h * k3, fock)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return hermitize(rho)


def no_jump_exact(rho: np.ndarray, fock: FockOperators, tau: float) -> np.ndarray:
    """Normalized conjugation with exp(-i H_eff tau) (scaling-and-squaring
    matrix exponential rather than a first-order Kraus truncation)."""
    K = expm(-1j * fock.H_eff * tau)
    out = K @ rho @ K.conj().T
    tr = np.trace(out).real
    if tr <= 0:
        raise ZeroDivisionError("no-jump evolution annihilated the state")
    return hermitize(out / tr)


def jump_probabilities(rho: np.ndarray, fock: FockOperators, eta: float,
                       dt: float) -> dict:
    """P_{alpha,l} = eta dt tr(c rho c^dag) for every jump channel."""
    out = {}
    for kind, l, op in fock.jump_ops:
        out[(kind, l)] = eta * dt * np.trace(op @ rho @ op.conj().T).real
    return out


def apply_jump(rho: np.ndarray, fock: FockOperators, kind: str, l: int) -> np.ndarray:
    """Normalized jump update rho -> c rho c^dag / tr."""
    op = next(op for k, site, op in fock.jump_ops if k == kind and site == l)
    out = op @ rho @ op.conj().T
    tr = np.trace(out).real
    if tr <= 1e-14:
        raise ZeroDivisionError(f"jump ({kind}, {l}) has zero weight")
    return hermitize(out / tr)


def kraus_step_exact(rho: np.ndarray, fock: FockOperators, params: ModelParams,
                     dt: float, rng: np.random.Generator) -> tuple[np.ndarray, list]:
    """One full time step of the two-substep scheme, sampled stochastically.

    First substep (duration eta*dt): one outcome alpha drawn with probability
    P_alpha; either a normalized jump or exact no-jump evolution. Second
    substep: deterministic Lindblad propagation over (1-eta)*dt.
    """
    events = []
    eta = params.eta
    if eta > 0.0:
        probs = jump_probabilities(rho, fock, eta, dt)
        r = rng.random()
        acc = 0.0
        chosen = None
        for key, p in probs.items():
            acc += p
            if r < acc:
                chosen = key
                break
        if chosen is None:
            rho = no_jump_exact(rho, fock, eta * dt)
        else:
            rho = apply_jump(rho, fock, *chosen)
            events.append(chosen)
    if eta < 1.0:
        rho = lindblad_rk4(rho, fock, (1.0 - eta) * dt)
    return rho, events


def state_to_correlation(rho: np.ndarray, fock: FockOperators) -> np.ndarray:
    """Single-particle density matrix D[l, l'] = tr(psi^dag_{l'} psi_l rho)."""
    L = fock.L
    D = np.empty((L, L), dtype=complex)
    for l in range(L):
        for lp in range(L):
            D[l, lp] = np.trace(fock.c[lp].conj().T @ fock.c[l] @ rho)
    return hermitize(D)


def fock_state_from_occupations(occ) -> np.ndarray:
    """Pure Fock basis state vector for an occupation pattern (site 0 first)."""
    vec = np.array([1.0], dtype=complex)
    for o in occ:
        vec = np.kron(vec, np.array([0.0, 1.0]) if o else np.array([1.0, 0.0]))
    return vec
