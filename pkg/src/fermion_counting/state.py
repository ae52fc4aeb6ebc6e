"""Gaussian-state utilities acting on the single-particle correlation matrix.

The entire state of a Gaussian trajectory is the L x L complex Hermitian
matrix D with D[l, l'] = <psi^dag_{l'} psi_l> and spectrum in [0, 1].
"""

from __future__ import annotations

import struct

import numpy as np

HERMITICITY_TOL = 1e-10
SPECTRUM_TOL = 1e-8
CLAMP_EPS = 1e-12

MAGIC = b"GJD1"


class StateValidityError(RuntimeError):
    """Correlation matrix left the physical set beyond tolerance."""


def hermitize(D: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian part, (D + D^dag)/2. Idempotent."""
    return 0.5 * (D + D.conj().T)


def reduce(D: np.ndarray, offset: int = 0, length: int | None = None) -> np.ndarray:
    """Contiguous principal submatrix of size `length` starting at `offset`.

    Indices wrap around the periodic ring.
    """
    L = D.shape[0]
    if length is None:
        length = L
    if not 1 <= length <= L:
        raise ValueError(f"window length must be in [1, {L}], got {length}")
    idx = (offset + np.arange(length)) % L
    return D[np.ix_(idx, idx)]


def occupation(D: np.ndarray, l: int) -> float:
    """Mean occupation of site l, clamped to [0, 1]."""
    return float(min(1.0, max(0.0, D[l, l].real)))


def check_spectrum(D: np.ndarray, tol: float = SPECTRUM_TOL) -> np.ndarray:
    """Eigenvalues of D; raises if they leave [-tol, 1 + tol]."""
    w = np.linalg.eigvalsh(hermitize(D))
    if w[0] < -tol or w[-1] > 1.0 + tol:
        raise StateValidityError(
            f"spectrum [{w[0]:.3e}, {w[-1]:.3e}] outside [0, 1] by more than {tol:.1e}")
    return w


def clamped_eigenvalues(D: np.ndarray, eps: float = CLAMP_EPS) -> np.ndarray:
    """Eigenvalues clamped to [eps, 1 - eps] for entropy-style formulas.

    Clamping is applied only here, never to the evolving state.
    """
    w = np.linalg.eigvalsh(hermitize(D))
    return np.clip(w, eps, 1.0 - eps)


def binary_entropy(w: np.ndarray) -> float:
    """- sum [w ln w + (1 - w) ln(1 - w)] with 0 ln 0 := 0."""
    w = np.clip(w, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return float(-np.sum(w * np.log(w) + (1.0 - w) * np.log1p(-w)))


def save_state(path, D: np.ndarray) -> None:
    """Checkpoint dump: magic "GJD1", L as little-endian u32, then the matrix
    row-major as little-endian f64 (re, im) pairs."""
    D = np.ascontiguousarray(D, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", D.shape[0]))
        fh.write(D.astype("<c16").tobytes())


def load_state(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (L,) = struct.unpack("<I", fh.read(4))
        data = np.frombuffer(fh.read(16 * L * L), dtype="<c16")
    return data.reshape(L, L).astype(np.complex128)
