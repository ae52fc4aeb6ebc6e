"""State-derived observables: density correlations, entropies, negativity.

All functions are pure and safe to evaluate per snapshot inside trajectory
workers; ensemble averaging is handled by the trajectory engine.
"""

from __future__ import annotations

import warnings

import numpy as np

from .state import (StateValidityError, binary_entropy, clamped_eigenvalues,
                    hermitize, reduce)

IMAG_TOL = 1e-8
CLAMP_EPS = 1e-12


# ---------------------------------------------------------------------------
# connected density correlations
# ---------------------------------------------------------------------------

def snapshot_pair_profile(D: np.ndarray) -> np.ndarray:
    """Site-averaged <n_l n_{l+d}> for every separation d on the ring.

    Wick: <n_l n_l'> = D_ll D_l'l' + delta_ll' D_ll - |D_ll'|^2.
    """
    L = D.shape[0]
    nn = np.real(np.diag(D))
    rows = np.arange(L)[:, None]
    cols = (rows + np.arange(L)[None, :]) % L
    absD2 = np.abs(D[rows, cols]) ** 2
    prof = (nn[:, None] * nn[cols]).mean(axis=0) - absD2.mean(axis=0)
    prof[0] += nn.mean()
    return prof


def snapshot_connected_profile(D: np.ndarray) -> np.ndarray:
    """Connected correlation of a single state, site-averaged per separation:
    C_d = delta_{d0} mean_l D_ll - mean_l |D_{l,l+d}|^2.

    The within-state product <n_l><n_{l+d}> is subtracted, so the ensemble
    mean of this profile is the two-replica (same measurement record)
    connected correlation that the analytic theory describes.
    """
    L = D.shape[0]
    rows = np.arange(L)[:, None]
    cols = (rows + np.arange(L)[None, :]) % L
    prof = -(np.abs(D[rows, cols]) ** 2).mean(axis=0)
    prof[0] += np.real(np.diag(D)).mean()
    return prof


def connected_density_correlation(pair_profile_mean: np.ndarray,
                                  density_mean: np.ndarray) -> np.ndarray:
    """C_d = mean<n_l n_{l+d}> - mean<n_l> mean<n_{l+d}> (site averaged).

    The subtracted term uses ensemble-mean densities, so on top of the
    per-state connected part (snapshot_connected_profile) this contains the
    trajectory-to-trajectory covariance of the local densities.
    """
    L = density_mean.shape[0]
    rows = np.arange(L)[:, None]
    cols = (rows + np.arange(L)[None, :]) % L
    disc = (density_mean[:, None] * density_mean[cols]).mean(axis=0)
    return pair_profile_mean - disc


def connected_correlation_from_snapshots(snapshots) -> np.ndarray:
    """Convenience wrapper: C_d from an explicit list of correlation matrices."""
    snaps = list(snapshots)
    if not snaps:
        raise ValueError("need at least one snapshot")
    pair = np.mean([snapshot_pair_profile(D) for D in snaps], axis=0)
    dens = np.mean([np.real(np.diag(D)) for D in snaps], axis=0)
    return connected_density_correlation(pair, dens)


def chord_length(l: np.ndarray, L: int) -> np.ndarray:
    """(L/pi) sin(pi l / L), the conformal distance on the periodic ring."""
    return (L / np.pi) * np.sin(np.pi * np.asarray(l, dtype=float) / L)


def momentum_correlation(profile: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fourier transform C_q = sum_l C_l e^{-iql} at q = 2 pi k / L.

    Returns (q, q_tilde, C_q) with q_tilde = 2 sin(q/2). The imaginary part
    (below 1e-10 for a real, even profile) is discarded.
    """
    L = profile.shape[0]
    Cq = np.fft.fft(profile)
    if np.max(np.abs(Cq.imag)) > 1e-8 * max(1.0, np.max(np.abs(Cq.real))):
        warnings.warn("momentum correlation has a significant imaginary part")
    q = 2.0 * np.pi * np.arange(L) / L
    q_tilde = 2.0 * np.sin(q / 2.0)
    return q, q_tilde, Cq.real


# ---------------------------------------------------------------------------
# entropies
# ---------------------------------------------------------------------------

def subsystem_entropy(D: np.ndarray, length: int, offsets=(0,)) -> float:
    """Von Neumann entropy of a contiguous block from the eigenvalues of the
    reduced correlation matrix, averaged over the requested window offsets."""
    vals = []
    for o in offsets:
        w = clamped_eigenvalues(reduce(D, o, length))
        vals.append(binary_entropy(w))
    return float(np.mean(vals))


def second_cumulant_entropy(profile: np.ndarray, length: int) -> float:
    """(pi^2/3) sum_{l,l'=1}^len C_{l-l'} from a measured correlation profile.

    Diagnostic cross-check of the leading cumulant term, not the primary
    entropy estimate.
    """
    if length == 0:
        return 0.0
    L = profile.shape[0]
    d = np.abs(np.subtract.outer(np.arange(length), np.arange(length))) % L
    return float(np.pi ** 2 / 3.0 * profile[d].sum())


def effective_central_charge(S: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """c_ell = 3 dS/d ln(ell) by central differences (one-sided endpoints)."""
    S = np.asarray(S, dtype=float)
    x = np.log(np.asarray(ell, dtype=float))
    return 3.0 * np.gradient(S, x)


def renyi_half_entropy(D: np.ndarray, length: int, offset: int = 0) -> float:
    """Order-1/2 Renyi entropy of the cut, sum 2 ln(sqrt(w) + sqrt(1-w)).

    The summand is finite (zero) at w = 0, 1, so round-off is only clipped
    to [0, 1], not pushed inward.
    """
    w = np.clip(np.linalg.eigvalsh(hermitize(reduce(D, offset, length))),
                0.0, 1.0)
    # sqrt amplifies endpoint round-off to ~1e-7; snap exact 0/1 modes back
    w = np.where(w < 1e-12, 0.0, np.where(w > 1.0 - 1e-12, 1.0, w))
    return float(np.sum(2.0 * np.log(np.sqrt(w) + np.sqrt(1.0 - w))))


# ---------------------------------------------------------------------------
# fermionic logarithmic negativity
# ---------------------------------------------------------------------------

def fermionic_negativity(D: np.ndarray, length: int, offset: int = 0) -> float:
    """Fermionic logarithmic negativity for the cut A = first `length` sites.

    Uses the covariance matrix G = 2D - 1 split into blocks, the partial
    time-reversal combination
    G^T = [1 - (1 + G+ G-)^{-1} (G+ + G-)]/2, and
    E = sum ln(sqrt(mu) + sqrt(1-mu)) + (1/2) ln[lam^2 + (1-lam)^2]
    over the eigenvalues mu of G^T and lam of the full D. Assumes vanishing
    anomalous correlations.
    """
    L = D.shape[0]
    if offset:
        D = reduce(D, offset, L)
    G = 2.0 * hermitize(D) - np.eye(L)
    gp = G.copy()
    gm = G.copy()
    a = slice(0, length)
    b = slice(length, L)
    gp[a, b] *= 1j
    gp[b, a] *= 1j
    gm[a, b] *= -1j
    gm[b, a] *= -1j
    gp[b, b] *= -1.0
    gm[b, b] *= -1.0
    A = np.eye(L) + gp @ gm
    try:
        GT = 0.5 * (np.eye(L) - np.linalg.solve(A, gp + gm))
    except np.linalg.LinAlgError:
        warnings.warn("singular (1 + G+G-); using regularized solve")
        A = A + 1e-12 * np.eye(L)
        GT = 0.5 * (np.eye(L) - np.linalg.solve(A, gp + gm))
    # ln(sqrt(mu) + sqrt(1-mu)) = (1/2) ln(1 + 2 sqrt(mu(1-mu))): when
    # N = GT(1-GT) is Hermitian (pure global states) its eigenvalues give
    # mu(1-mu) with eigvalsh accuracy, which matters because the summand has
    # a sqrt singularity at the endpoints. Otherwise fall back to the
    # non-Hermitian spectrum of GT directly.
    N = GT @ (np.eye(L) - GT)
    if np.max(np.abs(N - N.conj().T)) < 1e-10:
        nu = np.linalg.eigvalsh(hermitize(N))
        # round-off can push exact zeros slightly positive; the sqrt would
        # amplify that to ~1e-7, so tiny values are truncated
        nu = np.where(nu < 1e-12, 0.0, nu)
        term1 = 0.5 * np.sum(np.log1p(2.0 * np.sqrt(nu)))
    else:
        mu = np.linalg.eigvals(GT)
        if np.max(np.abs(mu.imag)) > IMAG_TOL:
            raise StateValidityError(
                "negativity spectrum has imaginary part "
                f"{np.max(np.abs(mu.imag)):.2e}")
        mu = np.clip(mu.real, 0.0, 1.0)
        term1 = np.sum(np.log(np.sqrt(mu) + np.sqrt(1.0 - mu)))
    lam = np.clip(np.linalg.eigvalsh(D), 0.0, 1.0)
    term2 = 0.5 * np.sum(np.log(lam ** 2 + (1.0 - lam) ** 2))
    return float(term1 + term2)
