"""Least-squares fitting and feature extraction for measured curves.

A small Levenberg-Marquardt driver (finite-difference Jacobian) plus the
specific fits used in the analysis pipeline: the massive dispersion of the
momentum correlations, the exponential real-space decay, and peak / length
scale extraction from sampled curves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MAX_ITER = 200
GRAD_TOL = 1e-8
FD_REL_STEP = 1e-6


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    """Converged parameters with covariance-based uncertainties."""

    params: np.ndarray
    stderr: np.ndarray
    rss: float
    n_points: int
    n_iter: int
    converged: bool
    labels: tuple = ()
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        labels = self.labels or tuple(f"p{i}" for i in range(len(self.params)))
        out = {
            "params": {k: float(v) for k, v in zip(labels, self.params)},
            "stderr": {k: float(v) for k, v in zip(labels, self.stderr)},
            "rss": float(self.rss),
            "n_points": int(self.n_points),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
        }
        out.update({k: (float(v) if np.isscalar(v) else v)
                    for k, v in self.extras.items()})
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)


def _jacobian(model, x, p):
    J = np.empty((len(x), len(p)))
    f0 = model(x, p)
    for j in range(len(p)):
        step = FD_REL_STEP * max(abs(p[j]), 1e-8)
        pj = p.copy()
        pj[j] += step
        J[:, j] = (model(x, pj) - f0) / step
    return J, f0


def least_squares_fit(model, x, y, p0, weights=None, labels=()) -> FitResult:
    """Levenberg-Marquardt minimization of sum w (y - model(x, p))^2.

    Finite-difference Jacobian with relative step 1e-6; the damping factor
    is multiplied by 10 on rejected steps and divided by 10 on accepted
    ones, so the weighted residual sum decreases monotonically.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p0, dtype=float).copy()
    if x.shape[0] != y.shape[0]:
        raise FitError("x and y must have the same length")
    if x.shape[0] < len(p):
        raise FitError(f"{x.shape[0]} points cannot constrain {len(p)} parameters")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    mu = 1e-3
    J, f = _jacobian(model, x, p)
    r = y - f
    rss = float(np.sum(w * r * r))
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        A = J.T @ (w[:, None] * J)
        g = J.T @ (w * r)
        if np.linalg.norm(g) < GRAD_TOL * (1.0 + np.linalg.norm(p)):
            converged = True
            break
        try:
            step = np.linalg.solve(A + mu * np.diag(np.diag(A)) +
                                   1e-300 * np.eye(len(p)), g)
        except np.linalg.LinAlgError:
            mu *= 10.0
            continue
        p_try = p + step
        f_try = model(x, p_try)
        r_try = y - f_try
        rss_try = float(np.sum(w * r_try * r_try))
        if np.isfinite(rss_try) and rss_try < rss:
            p, r, rss = p_try, r_try, rss_try
            mu = max(mu / 10.0, 1e-12)
            J, f = _jacobian(model, x, p)
        else:
            mu *= 10.0
            if mu > 1e12:
                break
    dof = max(x.shape[0] - len(p), 1)
    A = J.T @ (w[:, None] * J)
    try:
        cov = np.linalg.inv(A) * rss / dof
        stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        stderr = np.full(len(p), np.nan)
    return FitResult(params=p, stderr=stderr, rss=rss, n_points=x.shape[0],
                     n_iter=it, converged=converged, labels=tuple(labels))


# ---------------------------------------------------------------------------
# specific fits
# ---------------------------------------------------------------------------

def _mass_model(x, p):
    return p[0] * np.sqrt(x * x + np.abs(p[1]))


def fit_Cq_mass(q_tilde_l0, Cq_rescaled, weights=None) -> FitResult:
    """Fit the rescaled momentum correlation to p1 sqrt(x^2 + p2).

    x = q_tilde * l0, y = C_q / (g0 / l0); p2 estimates the dimensionless
    mass delta_eta, p1 the stiffness prefactor (1 at perfect agreement).
    """
    x = np.asarray(q_tilde_l0, dtype=float)
    y = np.asarray(Cq_rescaled, dtype=float)
    large = x > np.median(x)
    p1 = float(np.mean(y[large] / x[large])) if np.any(large) else 1.0
    p1 = p1 if np.isfinite(p1) and p1 > 0 else 1.0
    p2 = float(max((y[np.argmin(x)] / p1) ** 2 - np.min(x) ** 2, 1e-6))
    res = least_squares_fit(_mass_model, x, y, [p1, p2], weights=weights,
                            labels=("prefactor", "mass"))
    res.params[1] = abs(res.params[1])
    return res


def fit_Cl_exponential(l, Cl, l0, stderr=None, l_max=None) -> FitResult:
    """Exponential-decay fit |C_l| ~ p * l^{-3/2} exp(-l/xi) in log space.

    Linear regression of ln(l^{3/2} |C_l|) against l on the window
    [2*l0, l_max], excluding bins whose |C_l| is below three standard
    errors. Returns parameters (amplitude, xi).
    """
    l = np.asarray(l, dtype=float)
    Cl = np.asarray(Cl, dtype=float)
    absC = np.abs(Cl)
    if l_max is None:
        l_max = float(np.max(l))
    mask = (l >= 2.0 * l0) & (l <= l_max) & (absC > 0)
    if stderr is not None:
        mask &= absC >= 3.0 * np.asarray(stderr, dtype=float)
    if np.count_nonzero(mask) < 3:
        raise FitError("fewer than 3 usable bins in the exponential-fit window")
    xw = l[mask]
    yw = np.log(absC[mask] * xw ** 1.5)
    A = np.vstack([np.ones_like(xw), xw]).T
    coef, res_sum, _, _ = np.linalg.lstsq(A, yw, rcond=None)
    intercept, slope = coef
    if slope >= 0:
        raise FitError(f"non-decaying window (slope {slope:.3e} >= 0)")
    xi = -1.0 / slope
    rss = float(res_sum[0]) if len(res_sum) else 0.0
    dof = max(len(xw) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * rss / dof
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(params=np.array([np.exp(intercept), xi]),
                     stderr=np.array([np.exp(intercept) * se[0],
                                      xi * xi * se[1]]),
                     rss=rss, n_points=len(xw), n_iter=1, converged=True,
                     labels=("amplitude", "xi"),
                     extras={"window": [float(xw[0]), float(xw[-1])]})


def _parabolic_peak(x, y) -> tuple[float, float]:
    """Position and height of the maximum, refined by a parabola through the
    discrete peak and its neighbors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise FitError("need at least 3 samples to locate a peak")
    i = int(np.argmax(y))
    if i == 0 or i == len(x) - 1:
        return float(x[i]), float(y[i])
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if a >= 0:
        return float(x1), float(y1)
    xp = -b / (2.0 * a)
    yp = y1 - a * (x1 - xp) ** 2
    return float(xp), float(yp)


def extract_qc(q, ratio) -> tuple[float, float]:
    """Momentum of the maximum of C_q/q (or any peaked curve), with the peak
    refined by parabolic interpolation."""
    return _parabolic_peak(q, ratio)


def extract_lm(ell, c_eff) -> tuple[float, float]:
    """Scale of the maximum of the effective central charge c_ell."""
    return _parabolic_peak(ell, c_eff)


def extract_lc(l_chord, absC, l0, deviation: float = 0.10) -> float:
    """Crossover length where |C_l| leaves the 1/l^2 tangent by `deviation`.

    The tangent A / l_chord^2 is anchored where the local agreement with the
    data is best within [2*l0, 6*l0]; scanning outward, the first chord
    distance whose relative deviation exceeds the threshold is returned.
    Returns inf if the curve never leaves the tangent.
    """
    l_chord = np.asarray(l_chord, dtype=float)
    absC = np.abs(np.asarray(absC, dtype=float))
    window = (l_chord >= 2.0 * l0) & (l_chord <= 6.0 * l0) & (absC > 0)
    if not np.any(window):
        raise FitError("no data in the tangent anchoring window [2 l0, 6 l0]")
    amps = absC[window] * l_chord[window] ** 2
    # anchor amplitude = median of the local 1/l^2 amplitudes in the window
    A = float(np.median(amps))
    start = np.max(np.nonzero(window)[0])
    for i in range(start + 1, len(l_chord)):
        if absC[i] == 0.0:
            continue
        tangent = A / l_chord[i] ** 2
        if abs(absC[i] - tangent) > deviation * tangent:
            return float(l_chord[i])
    return np.inf


def power_law_exponent(x, y) -> tuple[float, float]:
    """Slope (and standard error) of ln y against ln x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise FitError("need at least 2 points for a power-law slope")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("power-law regression needs positive data")
    lx = np.log(x)
    ly = np.log(y)
    A = np.vstack([np.ones_like(lx), lx]).T
    coef, res_sum, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    slope = float(coef[1])
    if len(x) == 2:
        return slope, 0.0
    rss = float(res_sum[0]) if len(res_sum) else 0.0
    dof = max(len(x) - 2, 1)
    cov = np.linalg.inv(A.T @ A) * rss / dof
    return slope, float(np.sqrt(max(cov[1, 1], 0.0)))
