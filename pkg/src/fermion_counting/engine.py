"""Trajectory engine: time stepping, ensemble statistics, parallel driver.

One full time step is the conditioned substep over eta*dt (stochastic jump
sweep + closed-form no-jump evolution) followed by exact deterministic
Lindblad propagation over (1-eta)*dt. For the default local channels the
whole step is carried out in the eigenbasis of H, where both linear maps
are diagonal; the stochastic sweep there consumes the random stream in
exactly the same order as the real-space reference, so both paths generate
identical jump records.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass

import numpy as np

from .conditional import DIV_GUARD, PROB_TOL, conditional_substep
from .model import (JumpChannels, LatticeHamiltonian, ModelParams,
                    initial_cdw_state)
from .observables import (fermionic_negativity, snapshot_connected_profile,
                          snapshot_pair_profile, subsystem_entropy)
from .state import StateValidityError, check_spectrum, hermitize
from .unconditional import LindbladPropagator, exact_propagate

DEFAULT_P_TARGET = 1.25e-4


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Ensemble-run configuration; durations in units of 1/J.

    Exactly one of dt / p_target fixes the step: with dt=None the step is
    chosen so the largest per-site jump probability equals p_target.
    Defaults: t_burn = max(10/gamma, L/(4J)); measure_stride spaces
    snapshots by at least one mean jump time 1/gamma.
    """

    n_traj: int
    master_seed: int
    t_measure: float
    dt: float | None = None
    p_target: float = DEFAULT_P_TARGET
    t_burn: float | None = None
    measure_stride: int | None = None
    entropy_lengths: tuple = ()
    entropy_offsets: int = 4
    negativity_lengths: tuple = ()
    use_fast_path: bool = True
    record_events: bool = False

    def __post_init__(self):
        if self.n_traj < 1:
            raise EngineError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.t_measure <= 0:
            raise EngineError("t_measure must be positive")
        if self.dt is not None and self.dt <= 0:
            raise EngineError("dt must be positive")
        if self.dt is None and not 0 < self.p_target < 0.1:
            raise EngineError(f"p_target {self.p_target} outside (0, 0.1)")


def choose_dt(params: ModelParams, p_target: float = DEFAULT_P_TARGET) -> float:
    """Step size with peak per-site jump probability p_target:
    dt = p_target / (eta * max(gamma_+, gamma_-)); eta factor dropped at
    eta = 0 where no jumps occur."""
    gmax = max(params.gamma_plus, params.gamma_minus)
    if gmax == 0.0:
        raise EngineError("cannot choose dt without dissipation")
    eta = params.eta if params.eta > 0 else 1.0
    return p_target / (eta * gmax)


@dataclass(frozen=True)
class ResolvedSchedule:
    dt: float
    n_burn: int
    stride: int
    n_snapshots: int

    @property
    def snapshot_spacing(self) -> float:
        return self.stride * self.dt


def resolve_schedule(config: RunConfig, params: ModelParams) -> ResolvedSchedule:
    dt = config.dt if config.dt is not None else choose_dt(params, config.p_target)
    t_burn = config.t_burn
    if t_burn is None:
        t_burn = max(10.0 / params.gamma, params.L / (4.0 * params.J))
    stride = config.measure_stride
    if stride is None:
        stride = max(1, math.ceil((1.0 / params.gamma) / dt))
    n_burn = max(0, math.ceil(t_burn / dt))
    n_snapshots = max(1, round(config.t_measure / (stride * dt)))
    return ResolvedSchedule(dt=dt, n_burn=n_burn, stride=int(stride),
                            n_snapshots=int(n_snapshots))


def trajectory_rng(master_seed: int, traj_index: int) -> np.random.Generator:
    """Independent stream per trajectory, stable under changes of n_traj."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(traj_index,))
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

class ReferenceStepper:
    """Real-space step for arbitrary channels; the correctness reference."""

    def __init__(self, params: ModelParams, H: LatticeHamiltonian,
                 channels: JumpChannels, dt: float):
        self.params = params
        self.H = H
        self.channels = channels
        self.dt = dt
        self.tau2 = (1.0 - params.eta) * dt
        self.propagator = (LindbladPropagator(channels)
                           if self.tau2 > 0.0 else None)

    def initial(self, D: np.ndarray) -> np.ndarray:
        return D.astype(complex).copy()

    def step(self, D: np.ndarray, rng: np.random.Generator):
        D, events = conditional_substep(D, self.params, self.H, self.dt, rng,
                                        self.channels)
        if self.propagator is not None:
            D = exact_propagate(D, self.propagator, self.tau2)
        return hermitize(D), events

    def to_site_basis(self, D: np.ndarray) -> np.ndarray:
        return D


class EigenbasisStepper:
    """Local-channel step carried in the eigenbasis of H.

    Unitary conjugation and the exact Lindblad substep are diagonal there
    (lambda_k = eps_k - i*gamma, steady state n*1), leaving only the jump
    sweep and, off half filling, one linear solve per step.
    """

    def __init__(self, params: ModelParams, H: LatticeHamiltonian, dt: float):
        self.params = params
        self.dt = dt
        eps, V = H.eigensystem()
        self.eps = eps
        self.V = V
        self.Vh = V.conj().T
        tau1 = params.eta * dt
        self.tau1 = tau1
        self.phase1 = np.exp(-1j * eps * tau1)
        tau2 = (1.0 - params.eta) * dt
        self.tau2 = tau2
        gam = params.gamma
        self.decay2 = np.exp(-(gam + 1j * eps) * tau2) if tau2 > 0 else None
        self.fill2 = params.n * (1.0 - np.exp(-2.0 * gam * tau2))
        self.c_nojump = (np.exp(-params.delta_gamma * tau1)
                         if params.delta_gamma != 0.0 else None)
        self.p_max = params.eta * dt * max(params.gamma_plus,
                                           params.gamma_minus)

    def initial(self, D: np.ndarray) -> np.ndarray:
        return self.Vh @ D.astype(complex) @ self.V

    def to_site_basis(self, Dt: np.ndarray) -> np.ndarray:
        return hermitize(self.V @ Dt @ self.Vh)

    def _sweep(self, Dt: np.ndarray, rng: np.random.Generator):
        """Thinned jump sweep; identical random stream to the reference:
        a permutation, a vector of L uniforms addressed by sweep position,
        and one extra uniform per firing site."""
        p = self.params
        L = Dt.shape[0]
        order = rng.permutation(L)
        r1 = rng.random(L)
        events = []
        coef = p.eta * self.dt
        for i, l in enumerate(order):
            if r1[i] >= self.p_max:
                continue
            u = self.Vh[:, l]
            Du = Dt @ u
            occ = np.vdot(u, Du).real
            if occ < -PROB_TOL or occ > 1.0 + PROB_TOL:
                raise StateValidityError(
                    f"occupation {occ} at site {l} outside [0, 1]")
            occ_cl = min(1.0, max(0.0, occ))
            p_plus = coef * p.gamma_plus * (1.0 - occ_cl)
            p_minus = coef * p.gamma_minus * occ_cl
            p_jump = p_plus + p_minus
            if r1[i] >= p_jump:
                continue
            r2 = rng.random()
            loss = r2 < p_minus / p_jump
            if loss:
                denom = occ
                if denom <= DIV_GUARD:
                    continue
                Dt -= np.outer(Du, Du.conj()) / denom
            else:
                denom = 1.0 - occ
                if denom <= DIV_GUARD:
                    continue
                w = u - Du
                Dt += np.outer(w, w.conj()) / denom
            events.append((int(l), -1 if loss else +1))
        return Dt, events

    def step(self, Dt: np.ndarray, rng: np.random.Generator):
        if self.params.eta > 0.0:
            Dt, events = self._sweep(Dt, rng)
            if self.c_nojump is not None:
                L = Dt.shape[0]
                A = self.c_nojump * np.eye(L) + (1.0 - self.c_nojump) * Dt
                try:
                    Dt = np.linalg.solve(A, Dt)
                except np.linalg.LinAlgError as exc:
                    raise StateValidityError("no-jump solve failed") from exc
            Dt = self.phase1[:, None] * Dt * self.phase1.conj()[None, :]
        else:
            events = []
        if self.tau2 > 0.0:
            Dt = self.decay2[:, None] * Dt * self.decay2.conj()[None, :]
            idx = np.arange(Dt.shape[0])
            Dt[idx, idx] += self.fill2
        return hermitize(Dt), events


def make_stepper(params: ModelParams, H: LatticeHamiltonian,
                 channels: JumpChannels, dt: float, use_fast_path: bool = True):
    if use_fast_path and channels.is_local:
        return EigenbasisStepper(params, H, dt)
    return ReferenceStepper(params, H, channels, dt)


# ---------------------------------------------------------------------------
# ensemble statistics
# ---------------------------------------------------------------------------

class EnsembleStats:
    """Mergeable running mean/variance (Welford) over per-trajectory vectors."""

    def __init__(self):
        self.count = 0
        self.mean: dict = {}
        self.M2: dict = {}

    def add(self, sample: dict) -> None:
        self.count += 1
        for key, value in sample.items():
            value = np.asarray(value, dtype=float)
            if key not in self.mean:
                self.mean[key] = np.zeros_like(value)
                self.M2[key] = np.zeros_like(value)
            delta = value - self.mean[key]
            self.mean[key] = self.mean[key] + delta / self.count
            self.M2[key] = self.M2[key] + delta * (value - self.mean[key])

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count = other.count
            self.mean = {k: v.copy() for k, v in other.mean.items()}
            self.M2 = {k: v.copy() for k, v in other.M2.items()}
            return self
        if set(self.mean) != set(other.mean):
            raise EngineError("cannot merge statistics with different keys")
        n1, n2 = self.count, other.count
        n = n1 + n2
        for key in self.mean:
            delta = other.mean[key] - self.mean[key]
            self.mean[key] = self.mean[key] + delta * (n2 / n)
            self.M2[key] = (self.M2[key] + other.M2[key]
                            + delta * delta * (n1 * n2 / n))
        self.count = n
        return self

    def stderr(self, key: str) -> np.ndarray:
        """Standard error of the mean over trajectories."""
        if self.count < 2:
            return np.full_like(np.asarray(self.mean[key], dtype=float), np.nan)
        return np.sqrt(self.M2[key] / (self.count * (self.count - 1)))


# ---------------------------------------------------------------------------
# trajectory driver
# ---------------------------------------------------------------------------

def _entropy_offset_list(L: int, n_offsets: int) -> tuple:
    n_offsets = max(1, min(n_offsets, L))
    return tuple(int(o) for o in np.linspace(0, L, n_offsets, endpoint=False))


def run_trajectory(traj_index: int, params: ModelParams,
                   H: LatticeHamiltonian, channels: JumpChannels,
                   config: RunConfig) -> dict:
    """Evolve one trajectory and return its within-trajectory averages.

    Keys: pair_profile (site-averaged <n_l n_{l+d}>), connected (per-state
    connected correlation profile), density, jump_rate
    (events per site per unit time), and, if requested, entropy / negativity
    on the configured block-length grids. Raises EngineError with seed and
    step diagnostics if the state leaves the physical set.
    """
    sched = resolve_schedule(config, params)
    rng = trajectory_rng(config.master_seed, traj_index)
    stepper = make_stepper(params, H, channels, sched.dt,
                           config.use_fast_path)
    D = stepper.initial(initial_cdw_state(params.L))
    offsets = _entropy_offset_list(params.L, config.entropy_offsets)
    n_events = 0
    step_no = 0
    event_log = [] if config.record_events else None

    def advance(n_steps):
        nonlocal D, n_events, step_no
        for _ in range(n_steps):
            try:
                D, events = stepper.step(D, rng)
            except StateValidityError as exc:
                raise EngineError(
                    f"trajectory {traj_index} (seed {config.master_seed}) "
                    f"aborted at step {step_no}, t = {step_no * sched.dt:.4f}: "
                    f"{exc}") from exc
            n_events += len(events)
            if event_log is not None:
                t = step_no * sched.dt
                event_log.extend((t, site, kind) for site, kind in events)
            step_no += 1

    advance(sched.n_burn)
    pair_acc = np.zeros(params.L)
    conn_acc = np.zeros(params.L)
    dens_acc = np.zeros(params.L)
    S_acc = np.zeros(len(config.entropy_lengths))
    E_acc = np.zeros(len(config.negativity_lengths))
    events_at_burn = n_events
    for _ in range(sched.n_snapshots):
        advance(sched.stride)
        Ds = stepper.to_site_basis(D)
        try:
            check_spectrum(Ds)
        except StateValidityError as exc:
            raise EngineError(
                f"trajectory {traj_index} (seed {config.master_seed}) "
                f"invalid at step {step_no}: {exc}") from exc
        pair_acc += snapshot_pair_profile(Ds)
        conn_acc += snapshot_connected_profile(Ds)
        dens_acc += np.real(np.diag(Ds))
        for j, ell in enumerate(config.entropy_lengths):
            S_acc[j] += subsystem_entropy(Ds, int(ell), offsets)
        for j, ell in enumerate(config.negativity_lengths):
            vals = [fermionic_negativity(Ds, int(ell), offset=o)
                    for o in offsets]
            E_acc[j] += np.mean(vals)
    k = sched.n_snapshots
    t_meas = k * sched.stride * sched.dt
    sample = {
        "pair_profile": pair_acc / k,
        "connected": conn_acc / k,
        "density": dens_acc / k,
        "jump_rate": np.array((n_events - events_at_burn)
                              / (params.L * t_meas)),
    }
    if config.entropy_lengths:
        sample["entropy"] = S_acc / k
    if config.negativity_lengths:
        sample["negativity"] = E_acc / k
    if event_log is not None:
        sample_events = event_log
        return {"sample": sample, "events": sample_events}
    return {"sample": sample, "events": None}


_WORKER_CTX = {}


def _worker_init(params, H, channels, config):
    _WORKER_CTX["args"] = (params, H, channels, config)


def _worker_run(traj_index):
    params, H, channels, config = _WORKER_CTX["args"]
    return run_trajectory(traj_index, params, H, channels, config)


def ensemble_run(params: ModelParams, H: LatticeHamiltonian,
                 channels: JumpChannels, config: RunConfig,
                 n_workers: int = 1) -> tuple[EnsembleStats, dict]:
    """Run the full ensemble and merge trajectory statistics.

    Results are independent of n_workers: every trajectory has its own seed
    stream and the merge happens in trajectory order.
    """
    stats = EnsembleStats()
    all_events = [] if config.record_events else None
    indices = list(range(config.n_traj))
    if n_workers <= 1 or config.n_traj == 1:
        results = [run_trajectory(i, params, H, channels, config)
                   for i in indices]
    else:
        with multiprocessing.Pool(
                processes=min(n_workers, config.n_traj),
                initializer=_worker_init,
                initargs=(params, H, channels, config)) as pool:
            results = pool.map(_worker_run, indices)
    for i, res in zip(indices, results):
        stats.add(res["sample"])
        if all_events is not None and res["events"] is not None:
            all_events.extend((i, t, site, kind)
                              for t, site, kind in res["events"])
    meta = {"schedule": resolve_schedule(config, params),
            "events": all_events}
    return stats, meta
