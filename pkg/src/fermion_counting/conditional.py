"""Measurement-conditioned substep of duration eta*dt.

Per-site jump sampling with rank-1 state updates, followed by the closed-form
no-jump evolution. Jumps at different sites within one sweep are treated
independently; each site's probability is evaluated on the state already
updated by earlier jumps in the same sweep.
"""

from __future__ import annotations

import numpy as np

from .model import JumpChannels, LatticeHamiltonian, ModelParams
from .state import StateValidityError, hermitize

DIV_GUARD = 1e-12
PROB_TOL = 1e-8


def site_jump_probabilities(D: np.ndarray, l: int, params: ModelParams,
                            dt: float) -> tuple[float, float, float]:
    """(P_plus, P_minus, P_jump) for a jump at site l during eta*dt.

    Local channels: P_+ = eta*gamma_+*dt*(1 - D_ll), P_- = eta*gamma_-*dt*D_ll.
    """
    occ = D[l, l].real
    if occ < -PROB_TOL or occ > 1.0 + PROB_TOL:
        raise StateValidityError(f"occupation {occ} at site {l} outside [0, 1]")
    occ = min(1.0, max(0.0, occ))
    p_plus = params.eta * params.gamma_plus * dt * (1.0 - occ)
    p_minus = params.eta * params.gamma_minus * dt * occ
    return p_plus, p_minus, p_plus + p_minus


def channel_jump_probabilities(D: np.ndarray, l: int, channels: JumpChannels,
                               eta: float, dt: float) -> tuple[float, float, float]:
    """Per-site probabilities for arbitrary channels:
    P_{+,l} = 2 eta dt tr[M_{+,l}(1-D)], P_{-,l} = 2 eta dt tr[M_{-,l} D]."""
    b = channels.gain_vectors[l]
    c = channels.loss_vectors[l]
    p_plus = 2.0 * eta * dt * (np.vdot(b, b) - np.vdot(b, D @ b)).real
    p_minus = 2.0 * eta * dt * np.vdot(c, D @ c).real
    p_plus = max(0.0, p_plus)
    p_minus = max(0.0, p_minus)
    return p_plus, p_minus, p_plus + p_minus


def apply_gain_vector(D: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gain jump with M_{+,l} = b b^dag: D += (1-D) b b^dag (1-D) / b^dag(1-D)b."""
    w = b - D @ b
    denom = np.vdot(b, w).real
    if denom <= DIV_GUARD:
        raise ZeroDivisionError("gain jump on (nearly) full mode")
    return D + np.outer(w, w.conj()) / denom


def apply_loss_vector(D: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Loss jump with M_{-,l} = c c^dag: D -= D c c^dag D / c^dag D c."""
    w = D @ c
    denom = np.vdot(c, w).real
    if denom <= DIV_GUARD:
        raise ZeroDivisionError("loss jump on (nearly) empty mode")
    return D - np.outer(w, w.conj()) / denom


def apply_gain(D: np.ndarray, l: int) -> np.ndarray:
    """Local gain at site l: D += (1-D)_{*,l} (1-D)_{l,*} / (1 - D_ll).

    Leaves D_ll = 1 exactly.
    """
    denom = 1.0 - D[l, l].real
    if denom <= DIV_GUARD:
        raise ZeroDivisionError(f"gain at full site {l} (1 - D_ll = {denom:.2e})")
    w = -D[:, l].copy()
    w[l] += 1.0
    D = D + np.outer(w, w.conj()) / denom
    D[l, l] = 1.0
    return D


def apply_loss(D: np.ndarray, l: int) -> np.ndarray:
    """Local loss at site l: D -= D_{*,l} D_{l,*} / D_ll. Leaves D_ll = 0."""
    denom = D[l, l].real
    if denom <= DIV_GUARD:
        raise ZeroDivisionError(f"loss at empty site {l} (D_ll = {denom:.2e})")
    w = D[:, l].copy()
    D = D - np.outer(w, w.conj()) / denom
    D[l, l] = 0.0
    return D


def sweep_jumps(D: np.ndarray, params: ModelParams, dt: float,
                rng: np.random.Generator,
                channels: JumpChannels | None = None) -> tuple[np.ndarray, list]:
    """One stochastic sweep over the lattice in random order.

    At each site draw r1; a jump fires if r1 < P_jump. A second draw r2
    selects loss if r2 < P_-/P_jump, else gain. Probabilities are recomputed
    from the current (already updated) state at every site. Jumps whose
    division guard trips are rejected (their probability is ~0 anyway).

    Returns the updated matrix and the ordered list of (site, +1/-1) events.
    """
    L = D.shape[0]
    local = channels is None or channels.is_local
    order = rng.permutation(L)
    r1 = rng.random(L)
    events: list[tuple[int, int]] = []
    D = D.copy()
    for i, l in enumerate(order):
        if local:
            p_plus, p_minus, p_jump = site_jump_probabilities(D, l, params, dt)
        else:
            p_plus, p_minus, p_jump = channel_jump_probabilities(
                D, l, channels, params.eta, dt)
        if r1[i] >= p_jump:
            continue
        r2 = rng.random()
        loss = r2 < p_minus / p_jump
        try:
            if local:
                D = apply_loss(D, l) if loss else apply_gain(D, l)
            else:
                if loss:
                    D = apply_loss_vector(D, channels.loss_vectors[l])
                else:
                    D = apply_gain_vector(D, channels.gain_vectors[l])
        except ZeroDivisionError:
            continue
        events.append((int(l), -1 if loss else +1))
    return D, events


def no_jump_propagate(D: np.ndarray, params: ModelParams, H: LatticeHamiltonian,
                      dt: float, channels: JumpChannels | None = None) -> np.ndarray:
    """Closed-form no-jump evolution over eta*dt.

    Local channels:  D <- U {D + exp(-eta dgamma dt) (1 - D)}^{-1} D U^dag,
    implemented as a linear solve (for delta_gamma = 0 this reduces to pure
    unitary conjugation). General channels use the exact single-particle
    Kraus factor T = exp(eta dt (-iH + delta_M)):
    D <- T [1 + D (T^dag T - 1)]^{-1} D T^dag.
    """
    tau = params.eta * dt
    if tau == 0.0:
        return D.copy()
    L = D.shape[0]
    local = channels is None or channels.is_local
    if local:
        if params.delta_gamma == 0.0:
            X = D
        else:
            c = np.exp(-params.delta_gamma * tau)
            A = c * np.eye(L) + (1.0 - c) * D
            X = _solve(A, D)
        U = H.propagator(tau)
        return U @ X @ U.conj().T
    T, TdT = channels.nojump_factors(tau)
    A = np.eye(L) + D @ (TdT - np.eye(L))
    return T @ _solve(A, D) @ T.conj().T


def _solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(A)
        raise StateValidityError(
            f"no-jump solve failed (condition estimate {cond:.3e})") from exc


def conditional_substep(D: np.ndarray, params: ModelParams,
                        H: LatticeHamiltonian, dt: float,
                        rng: np.random.Generator,
                        channels: JumpChannels | None = None
                        ) -> tuple[np.ndarray, list]:
    """Full first substep: jump sweep, then no-jump evolution over eta*dt.

    The no-jump evolution deliberately acts on all sites, including those
    that jumped during the sweep.
    """
    if params.eta == 0.0:
        return D.copy(), []
    D, events = sweep_jumps(D, params, dt, rng, channels)
    D = no_jump_propagate(D, params, H, dt, channels)
    return hermitize(D), events
