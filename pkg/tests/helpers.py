"""Shared helpers for building random Gaussian states and small models."""

import numpy as np

from fermion_counting.model import (ModelParams, build_hopping_hamiltonian,
                                    build_jump_channels)
from fermion_counting.state import hermitize


def random_pure_correlation(L, n_particles, rng):
    """Projector onto a random n_particles-dimensional subspace."""
    A = rng.normal(size=(L, n_particles)) + 1j * rng.normal(size=(L, n_particles))
    Q, _ = np.linalg.qr(A)
    return Q @ Q.conj().T


def random_mixed_correlation(L, rng):
    """Random Hermitian matrix with spectrum drawn uniformly in [0, 1]."""
    A = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
    Q, _ = np.linalg.qr(A)
    w = rng.random(L)
    return hermitize(Q @ np.diag(w) @ Q.conj().T)


def random_hermitian(L, rng, scale=1.0):
    A = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
    return hermitize(A) * scale


def small_model(L=4, gamma=0.4, n=0.4, eta=1.0, J=1.0):
    params = ModelParams.from_density(L=L, gamma=gamma, n=n, J=J, eta=eta)
    H = build_hopping_hamiltonian(L, J)
    channels = build_jump_channels(params, H)
    return params, H, channels


def random_channels(params, H, rng, scale=0.5):
    """Random non-local bath matrices at the given mean rates."""
    L = params.L
    B_plus = scale * (rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L)))
    B_minus = scale * (rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L)))
    return build_jump_channels(params, H, B_plus=B_plus, B_minus=B_minus)
