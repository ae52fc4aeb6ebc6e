"""Command-line harness: config parsing, orchestration, persistence.

Subcommands: run (one ensemble experiment), sweep (parameter grid with a
combined scaling table), theory (analytic curves only), oracle-check
(small-lattice Fock-space equivalence smoke test). All numeric output is
written with shortest round-trip float formatting so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (EngineError, RunConfig, ensemble_run, resolve_schedule,
                     run_trajectory)
from .fits import (FitError, extract_lc, extract_lm, extract_qc,
                   fit_Cl_exponential, fit_Cq_mass)
from .model import (ModelParams, build_hopping_hamiltonian,
                    build_jump_channels, initial_cdw_state)
from .observables import (chord_length, connected_density_correlation,
                          effective_central_charge, momentum_correlation)
from .theory import (TheoryParams, asymptotic_Cl, entropy_prediction,
                     gaussian_Cl, gaussian_Cq, rg_corrected_Cq)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

_MODEL_KEYS = {"L", "gamma", "n", "gamma_plus", "gamma_minus", "eta", "J",
               "beta"}
_RUN_KEYS = {"dt", "p_target", "t_burn", "t_measure", "stride", "n_traj",
             "seed"}
_OBS_KEYS = {"correlations", "momentum", "entropy", "negativity",
             "subsystem_lengths", "entropy_offsets"}
_THEORY_KEYS = {"overlays"}
_FIT_KEYS = {"Cq_mass", "Cl_exponential", "qc", "lc", "lm", "l_max"}
_TOP_KEYS = {"model", "run", "observables", "theory", "fits", "output",
             "sweep"}
_SWEEP_KEYS = {"parameter", "values"}


@dataclass
class ExperimentConfig:
    """Validated experiment description; echoes losslessly into metadata."""

    model: dict
    run: dict
    observables: dict
    theory: dict
    fits: dict
    output: str | None = None
    sweep: dict | None = None

    def as_dict(self) -> dict:
        out = {"model": dict(self.model), "run": dict(self.run),
               "observables": dict(self.observables),
               "theory": dict(self.theory), "fits": dict(self.fits)}
        if self.output is not None:
            out["output"] = self.output
        if self.sweep is not None:
            out["sweep"] = dict(self.sweep)
        return out


def _check_keys(section: dict, allowed: set, name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")


def parse_config(path_or_dict) -> ExperimentConfig:
    """Load, schema-validate, and default-fill a JSON experiment config."""
    if isinstance(path_or_dict, dict):
        raw = copy.deepcopy(path_or_dict)
    else:
        with open(path_or_dict, encoding="utf-8") as fh:
            raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "top level")

    model = dict(raw.get("model", {}))
    _check_keys(model, _MODEL_KEYS, "model")
    if "L" not in model:
        raise ConfigError("model.L is required")
    L = int(model["L"])
    if L < 2:
        raise ConfigError(f"model.L must be >= 2, got {L}")
    has_rates = "gamma_plus" in model or "gamma_minus" in model
    if has_rates:
        if "gamma" in model or "n" in model:
            raise ConfigError("give either (gamma, n) or (gamma_plus, "
                              "gamma_minus), not both")
        if not ("gamma_plus" in model and "gamma_minus" in model):
            raise ConfigError("gamma_plus and gamma_minus must come together")
    else:
        if "gamma" not in model:
            raise ConfigError("model.gamma is required")
        n = float(model.setdefault("n", 0.5))
        if not 0.0 < n < 1.0:
            raise ConfigError(f"model.n must be in (0, 1), got {n}")
        if float(model["gamma"]) <= 0:
            raise ConfigError("model.gamma must be positive")
    eta = float(model.setdefault("eta", 1.0))
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"model.eta must be in [0, 1], got {eta}")
    model.setdefault("J", 1.0)
    model.setdefault("beta", 0.5)

    run = dict(raw.get("run", {}))
    _check_keys(run, _RUN_KEYS, "run")
    if "t_measure" not in run:
        raise ConfigError("run.t_measure is required")
    run.setdefault("dt", None)
    run.setdefault("p_target", 1.25e-4)
    run.setdefault("t_burn", None)
    run.setdefault("stride", None)
    run.setdefault("n_traj", 1)
    run.setdefault("seed", 0)
    if int(run["n_traj"]) < 1:
        raise ConfigError("run.n_traj must be >= 1")
    if not 0 <= int(run["seed"]) < 2 ** 64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")

    obs = dict(raw.get("observables", {}))
    _check_keys(obs, _OBS_KEYS, "observables")
    obs.setdefault("correlations", True)
    obs.setdefault("momentum", True)
    obs.setdefault("entropy", True)
    obs.setdefault("negativity", False)
    obs.setdefault("subsystem_lengths", None)
    obs.setdefault("entropy_offsets", 4)

    theory = dict(raw.get("theory", {}))
    _check_keys(theory, _THEORY_KEYS, "theory")
    theory.setdefault("overlays", False)

    fits = dict(raw.get("fits", {}))
    _check_keys(fits, _FIT_KEYS, "fits")
    for key in ("Cq_mass", "Cl_exponential", "qc", "lc", "lm"):
        fits.setdefault(key, False)
    fits.setdefault("l_max", None)

    sweep = raw.get("sweep")
    if sweep is not None:
        sweep = dict(sweep)
        _check_keys(sweep, _SWEEP_KEYS, "sweep")
        if "parameter" not in sweep or "values" not in sweep:
            raise ConfigError("sweep needs 'parameter' and 'values'")
        if not sweep["values"]:
            raise ConfigError("sweep.values must be non-empty")

    return ExperimentConfig(model=model, run=run, observables=obs,
                            theory=theory, fits=fits,
                            output=raw.get("output"), sweep=sweep)


def model_params_from_config(cfg: ExperimentConfig) -> ModelParams:
    m = cfg.model
    if "gamma_plus" in m:
        return ModelParams(L=int(m["L"]), gamma_plus=float(m["gamma_plus"]),
                           gamma_minus=float(m["gamma_minus"]),
                           J=float(m["J"]), eta=float(m["eta"]))
    return ModelParams.from_density(L=int(m["L"]), gamma=float(m["gamma"]),
                                    n=float(m["n"]), J=float(m["J"]),
                                    eta=float(m["eta"]))


def theory_params_from_config(cfg: ExperimentConfig) -> TheoryParams:
    params = model_params_from_config(cfg)
    return TheoryParams(n=params.n, gamma=params.gamma, J=params.J,
                        delta_eta=params.delta_eta,
                        beta=float(cfg.model["beta"]))


def default_subsystem_lengths(L: int) -> list:
    grid = np.unique(np.round(np.geomspace(1, max(L // 2, 2), 16)).astype(int))
    return [int(g) for g in grid]


def run_config_from_config(cfg: ExperimentConfig,
                           params: ModelParams) -> RunConfig:
    obs = cfg.observables
    lengths = obs["subsystem_lengths"]
    if lengths is None:
        lengths = default_subsystem_lengths(params.L)
    lengths = tuple(int(x) for x in lengths)
    run = cfg.run
    return RunConfig(
        n_traj=int(run["n_traj"]),
        master_seed=int(run["seed"]),
        t_measure=float(run["t_measure"]),
        dt=None if run["dt"] is None else float(run["dt"]),
        p_target=float(run["p_target"]),
        t_burn=None if run["t_burn"] is None else float(run["t_burn"]),
        measure_stride=None if run["stride"] is None else int(run["stride"]),
        entropy_lengths=lengths if obs["entropy"] else (),
        entropy_offsets=int(obs["entropy_offsets"]),
        negativity_lengths=lengths if obs["negativity"] else (),
    )


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_json(path: Path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.as_dict(), sort_keys=True).encode()
    return hashlib.sha256(canonical).hexdigest()


# ---------------------------------------------------------------------------
# experiment pipeline
# ---------------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """Execute one ensemble experiment and write all artifacts to out_dir.

    Returns a summary dict (also serialized as fits.json / meta.json).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = model_params_from_config(cfg)
    tparams = theory_params_from_config(cfg)
    H = build_hopping_hamiltonian(params.L, params.J)
    channels = build_jump_channels(params, H)
    rcfg = run_config_from_config(cfg, params)
    stats, run_meta = ensemble_run(params, H, channels, rcfg,
                                   n_workers=threads)
    sched = run_meta["schedule"]
    L = params.L
    l = np.arange(L)
    l_chord = chord_length(l, L)

    # primary profile: per-state connected correlation (the quantity the
    # analytic curves describe); C_cov additionally carries the
    # trajectory-to-trajectory covariance of the local densities
    C = stats.mean["connected"]
    C_err = stats.stderr("connected")
    C_cov = connected_density_correlation(stats.mean["pair_profile"],
                                          stats.mean["density"])

    summary = {}
    if cfg.observables["correlations"]:
        write_csv(out / "correlations.csv",
                  ["l", "l_chord", "C_mean", "C_stderr", "C_cov"],
                  zip(l, l_chord, C, C_err, C_cov))
    q = q_tilde = Cq = None
    if cfg.observables["momentum"]:
        q, q_tilde, Cq = momentum_correlation(C)
        write_csv(out / "momentum.csv", ["k", "q", "q_tilde", "Cq"],
                  zip(np.arange(L), q, q_tilde, Cq))
    if rcfg.entropy_lengths:
        ells = np.asarray(rcfg.entropy_lengths, dtype=int)
        ell_chord = chord_length(ells, L)
        S = stats.mean["entropy"]
        S_err = stats.stderr("entropy")
        if rcfg.negativity_lengths:
            E = stats.mean["negativity"]
            E_err = stats.stderr("negativity")
        else:
            E = np.zeros_like(S)
            E_err = np.zeros_like(S)
        c_eff = effective_central_charge(S, ell_chord)
        write_csv(out / "entropy.csv",
                  ["ell", "ell_chord", "S_mean", "S_stderr", "E_mean",
                   "E_stderr", "c_eff"],
                  zip(ells, ell_chord, S, S_err, E, E_err, c_eff))
        summary["entropy_lengths"] = [int(x) for x in ells]

    if cfg.theory["overlays"]:
        write_theory_curves(tparams, out, L=L)

    fit_results = compute_fits(cfg, tparams, l_chord, C, C_err, q_tilde, Cq,
                               rcfg, stats)
    write_json(out / "fits.json", fit_results)

    meta = {
        "version": __version__,
        "config": cfg.as_dict(),
        "config_sha256": config_hash(cfg),
        "seed": int(cfg.run["seed"]),
        "n_traj": int(cfg.run["n_traj"]),
        "schedule": {"dt": sched.dt, "n_burn": sched.n_burn,
                     "stride": sched.stride,
                     "n_snapshots": sched.n_snapshots},
        "derived": {"l0": tparams.l0, "g0": tparams.g0,
                    "delta_eta": tparams.delta_eta,
                    "xi": (None if np.isinf(tparams.xi) else tparams.xi),
                    "n": params.n, "gamma": params.gamma},
        "mean_jump_rate": float(stats.mean["jump_rate"]),
    }
    write_json(out / "meta.json", meta)
    summary["fits"] = fit_results
    summary["meta"] = meta
    return summary


def compute_fits(cfg, tparams, l_chord, C, C_err, q_tilde, Cq, rcfg,
                 stats) -> dict:
    out = {}
    fits = cfg.fits
    L = len(l_chord)
    l0 = tparams.l0
    if (fits["Cq_mass"] or fits["qc"]) and Cq is None:
        raise ConfigError("momentum observables must be enabled for C_q fits")
    if fits["Cq_mass"]:
        k = np.arange(1, L // 2)
        res = fit_Cq_mass(q_tilde[k] * l0, Cq[k] / (tparams.g0 / l0))
        out["Cq_mass"] = res.as_dict()
    if fits["qc"]:
        k = np.arange(1, L // 2)
        qc, height = extract_qc(q_tilde[k], Cq[k] / q_tilde[k])
        out["qc"] = {"q_c": qc, "peak": height}
    if fits["Cl_exponential"]:
        sel = np.arange(1, L // 2)
        l_max = fits["l_max"]
        res = fit_Cl_exponential(l_chord[sel], C[sel], l0,
                                 stderr=C_err[sel], l_max=l_max)
        out["Cl_exponential"] = res.as_dict()
    if fits["lc"]:
        sel = np.arange(1, L // 2)
        lc = extract_lc(l_chord[sel], C[sel], l0)
        out["lc"] = {"l_c": (None if np.isinf(lc) else lc)}
    if fits["lm"] and rcfg.entropy_lengths:
        ells = np.asarray(rcfg.entropy_lengths, dtype=int)
        ell_chord = chord_length(ells, L)
        c_eff = effective_central_charge(stats.mean["entropy"], ell_chord)
        lm, cmax = extract_lm(ell_chord, c_eff)
        out["lm"] = {"l_m": lm, "c_max": cmax}
    return out


def write_theory_curves(tparams: TheoryParams, out_dir, L: int = 256) -> None:
    """Emit theory_Cq.csv, theory_Cl.csv, theory_entropy.csv."""
    out = Path(out_dir)
    k = np.arange(1, L // 2 + 1)
    q = 2.0 * np.pi * k / L
    q_tilde = 2.0 * np.sin(q / 2.0)
    Cq = gaussian_Cq(q_tilde, tparams)
    Crg, valid = rg_corrected_Cq(q_tilde, tparams, with_validity=True)
    write_csv(out / "theory_Cq.csv",
              ["q", "q_tilde", "Cq_gaussian", "Cq_rg", "rg_valid"],
              zip(q, q_tilde, Cq, Crg, valid.astype(int)))
    l = np.arange(1, L // 2 + 1)
    Cl = gaussian_Cl(l, tparams, L=max(4096, 4 * L))
    Cl_asym = asymptotic_Cl(l, tparams)
    write_csv(out / "theory_Cl.csv", ["l", "Cl_gaussian", "Cl_asymptotic"],
              zip(l, Cl, Cl_asym))
    ells = np.unique(np.round(np.geomspace(1, L // 2, 24)).astype(int))
    S = entropy_prediction(ells.astype(float), tparams)
    Srg = entropy_prediction(ells.astype(float), tparams, rg_corrected=True)
    c_eff = effective_central_charge(Srg, ells)
    write_csv(out / "theory_entropy.csv",
              ["ell", "S_gaussian", "S_rg", "c_eff_rg"],
              zip(ells, S, Srg, c_eff))


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def run_sweep(cfg: ExperimentConfig, out_dir, threads: int = 1) -> list:
    """Run the config once per sweep value; emit per-point artifacts and a
    combined sweep.csv scaling table."""
    if cfg.sweep is None:
        raise ConfigError("config has no 'sweep' section")
    parameter = cfg.sweep["parameter"]
    values = cfg.sweep["values"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    columns = None
    for i, value in enumerate(values):
        point = copy.deepcopy(cfg)
        point.sweep = None
        if parameter == "delta_eta":
            point.model["eta"] = 1.0 - float(value)
        elif parameter in _MODEL_KEYS:
            point.model[parameter] = value
        elif parameter in _RUN_KEYS:
            point.run[parameter] = value
        else:
            raise ConfigError(f"unknown sweep parameter '{parameter}'")
        point = parse_config(point.as_dict())
        summary = run_experiment(point, out / f"point_{i:02d}",
                                 threads=threads)
        row = {parameter: float(value)}
        for name, res in summary["fits"].items():
            if "params" in res:
                for pname, pval in res["params"].items():
                    row[f"{name}.{pname}"] = pval
            else:
                row.update({f"{name}.{k}": v for k, v in res.items()})
        if columns is None:
            columns = list(row)
        rows.append(row)
    write_csv(out / "sweep.csv", columns,
              [[("nan" if r.get(c) is None else r.get(c, "nan"))
                for c in columns] for r in rows])
    return rows


# ---------------------------------------------------------------------------
# oracle check
# ---------------------------------------------------------------------------

def oracle_check(seed: int = 7, n_steps: int = 30, L: int = 4,
                 tol: float = 1e-6) -> float:
    """Evolve a random small instance with both the Gaussian machinery and
    the dense Fock-space reference; return the max deviation of D."""
    from .oracle import (build_fock_operators, kraus_step_exact,
                         state_to_correlation)
    rng = np.random.default_rng(seed)
    params = ModelParams.from_density(L=L, gamma=0.4, n=0.4, eta=0.3)
    H = build_hopping_hamiltonian(L)
    channels = build_jump_channels(params, H)
    fock = build_fock_operators(params, H, channels)
    D = initial_cdw_state(L)
    vec = np.zeros(2 ** L, dtype=complex)
    # CDW |1010...> index: occupied sites contribute bit (site 0 = MSB)
    idx = 0
    for site in range(L):
        idx = 2 * idx + (1 if site % 2 == 0 else 0)
    vec[idx] = 1.0
    rho = np.outer(vec, vec.conj())
    dt = 0.02
    worst = 0.0
    for step in range(n_steps):
        rng_g = np.random.default_rng((seed, step))
        rng_f = np.random.default_rng((seed, step))
        from .conditional import conditional_substep
        from .unconditional import LindbladPropagator, exact_propagate
        D, _ = conditional_substep(D, params, H, dt, rng_g, channels)
        if params.eta < 1.0:
            prop = LindbladPropagator(channels)
            D = exact_propagate(D, prop, (1.0 - params.eta) * dt)
        rho = _fock_reference_step(rho, fock, params, dt, rng_f)
        dev = np.max(np.abs(D - state_to_correlation(rho, fock)))
        worst = max(worst, dev)
    return worst


def _fock_reference_step(rho, fock, params, dt, rng):
    """Fock-space step mirroring the Gaussian sweep's sampling order."""
    from .oracle import (apply_jump, jump_probabilities, lindblad_rk4,
                         no_jump_exact)
    L = fock.L
    order = rng.permutation(L)
    r1 = rng.random(L)
    for i, l in enumerate(order):
        probs = jump_probabilities(rho, fock, params.eta, dt)
        p_plus = probs[("+", int(l))]
        p_minus = probs[("-", int(l))]
        p_jump = p_plus + p_minus
        if r1[i] >= p_jump:
            continue
        r2 = rng.random()
        kind = "-" if r2 < p_minus / p_jump else "+"
        try:
            rho = apply_jump(rho, fock, kind, int(l))
        except ZeroDivisionError:
            continue
    rho = no_jump_exact(rho, fock, params.eta * dt)
    if params.eta < 1.0:
        rho = lindblad_rk4(rho, fock, (1.0 - params.eta) * dt)
    return rho


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fermion-counting",
        description="Quantum-jump trajectories of monitored free fermions "
                    "with imbalanced, inefficient gain/loss detection.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
            ("run", "run one ensemble experiment"),
            ("sweep", "run a parameter sweep with a combined scaling table"),
            ("theory", "emit analytic theory curves only"),
            ("oracle-check", "small-lattice Fock-space equivalence check")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=str,
                       required=name in ("run", "sweep", "theory"),
                       help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, default=1,
                       help="trajectory worker processes")
        p.add_argument("--out", type=str, default=None,
                       help="output directory (overrides config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "oracle-check":
        worst = oracle_check()
        ok = worst < 1e-6
        print(f"oracle-check: max deviation {worst:.3e} "
              f"{'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.run["seed"] = int(args.seed)
    out_dir = args.out or cfg.output
    if out_dir is None:
        print("no output directory (give --out or config 'output')",
              file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            run_experiment(cfg, out_dir, threads=args.threads)
        elif args.command == "sweep":
            run_sweep(cfg, out_dir, threads=args.threads)
        elif args.command == "theory":
            tparams = theory_params_from_config(cfg)
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_theory_curves(tparams, out_dir,
                                L=int(cfg.model["L"]))
            write_json(Path(out_dir) / "meta.json",
                       {"version": __version__, "config": cfg.as_dict(),
                        "config_sha256": config_hash(cfg)})
    except (ConfigError, EngineError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
