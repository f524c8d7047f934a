"""Config-driven command line front end.

Subcommands: ``solve`` (equilibria of returned/accelerated processes),
``bounds`` (hitting statistics plus the zeta-optimized bound report),
``window`` (relaxation curves against the bound curves over a time
grid), ``sweep`` (scaling studies over A or N) and ``simulate``
(trajectories plus Monte Carlo estimators).  Every command writes its
delimited output, rendered figures and a manifest into --out
atomically.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 bound inapplicable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import optimize_zeta, report_for_plan, tilde_bound, eta_bound, inputs_from_plan
from .config import ModelBundle, build_bundle, load_config, resolve_mu
from .errors import (
    BoundInapplicableError,
    ConfigError,
    ExprSyntaxError,
    QedistError,
)
from .generator import ProbabilityVector, ReturnDistribution, build_returned_generator
from .mpp import mpp_quasi_equilibrium
from .plotting import sweep_figure, window_figure, zeta_figure
from .simulate import Absorbing, Accelerated, Returned, estimate_hitting, simulate
from .solvers import (
    hitting_stats,
    stationary_distribution,
    total_variation,
    transient_distribution,
)
from .truncation import accelerated_stats, select_truncation

__all__ = ["main"]


class _Out:
    """Atomic output directory: stage, fsync-rename, manifest at the end."""

    def __init__(self, out_dir: Path, config_text: str, command: str, argv: list[str]):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.config_sha = hashlib.sha256(config_text.encode()).hexdigest()
        self.command = command
        self.argv = argv

    def path(self, name: str) -> Path:
        return self.dir / name

    def write_text(self, name: str, text: str) -> Path:
        tmp = self.dir / f".{name}.tmp-{os.getpid()}"
        tmp.write_text(text)
        os.replace(tmp, self.dir / name)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return self.dir / name

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        tmp = self.dir / f".{name}.tmp-{os.getpid()}"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow(row)
        os.replace(tmp, self.dir / name)
        self.files[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        return self.dir / name

    def adopt(self, name: str) -> None:
        """Register a file written in place by a library helper."""
        self.files[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()

    def finish(self) -> None:
        manifest = {
            "tool": "qedist",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config_sha256": self.config_sha,
            "outputs": dict(sorted(self.files.items())),
            "timings_s": {k: round(v, 6) for k, v in self.timings.items()},
        }
        self.write_text("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))


def _parse_grid(spec: str) -> np.ndarray:
    """Grid spec: 'lo:hi:n', 'lo:hi:n:log', or comma-separated values."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) not in (3, 4):
            raise ConfigError(f"bad grid spec {spec!r}; want lo:hi:n[:log]")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ConfigError("grid needs at least one point")
        if len(parts) == 4:
            if parts[3] != "log":
                raise ConfigError(f"unknown grid scale {parts[3]!r}")
            if lo <= 0:
                raise ConfigError("log grid needs positive endpoints")
            return np.geomspace(lo, hi, n)
        return np.linspace(lo, hi, n)
    try:
        vals = [float(x) for x in spec.split(",") if x.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad grid spec {spec!r}") from None
    return np.array(vals)


def _stats_summary(stats) -> dict:
    return {
        "s": stats.s,
        "p": stats.p,
        "p_s": stats.p_s,
        "one_minus_p_s": 1.0 - stats.p_s,
        "T_s": stats.T_s,
        "q_s": stats.q_s,
        "n_states": int(stats.labels.size),
    }


def _plan_summary(plan) -> dict:
    return {
        "zeta": plan.zeta,
        "members_size": int(plan.members.size),
        "members_min": int(plan.members.min()),
        "members_max": int(plan.members.max()),
        "T_zeta_plus": plan.T_zeta_plus,
        "r_zeta": plan.r_zeta,
        "one_minus_r_zeta": 1.0 - plan.r_zeta,
        "q_zeta": plan.q_zeta,
        "residual": plan.residual,
    }


def _report_envelope(bundle: ModelBundle, command: str, started: float) -> dict:
    cfg = bundle.config
    return {
        "tool": "qedist",
        "version": __version__,
        "command": command,
        "config": {"model": cfg.model, "run": cfg.run},
        "elapsed_s": round(time.perf_counter() - started, 6),
        "truncation_tail_rate": bundle.tail_rate,
    }


def _need_chain(bundle: ModelBundle, command: str):
    if bundle.generator is None or bundle.s is None:
        raise ConfigError(f"command {command!r} needs a birth-death or general-ctmc model")


def cmd_solve(args, cfg, bundle: ModelBundle, out: _Out) -> int:
    started = time.perf_counter()
    run = cfg.run
    if bundle.kind == "mpp":
        radius = args.radius or float(run.get("radius", cfg.model.get("radius", 4.0)))
        t0 = time.perf_counter()
        pi, comparison, summary = mpp_quasi_equilibrium(
            bundle.mpp_model, x0=cfg.model.get("x0"), radius_multiplier=radius
        )
        out.timings["quasi_equilibrium"] = time.perf_counter() - t0
        pi.to_csv(out.path("stationary.csv"))
        out.adopt("stationary.csv")
        out.write_text("gaussian.json", comparison.to_json())
        report = _report_envelope(bundle, "solve", started)
        report["gaussian"] = comparison.to_dict()
        out.write_text("report.json", json.dumps(report, indent=2, sort_keys=True))
        out.finish()
        return 0
    _need_chain(bundle, "solve")
    Q, s = bundle.generator, bundle.s
    mu = resolve_mu(run.get("mu"), s, Q.n)
    t0 = time.perf_counter()
    pi_mu = stationary_distribution(build_returned_generator(Q, mu))
    out.timings["stationary"] = time.perf_counter() - t0
    pi_mu.to_csv(out.path("stationary.csv"))
    out.adopt("stationary.csv")
    report = _report_envelope(bundle, "solve", started)
    report["return_law"] = run.get("mu", "delta")
    if "zeta" in run:
        stats = hitting_stats(Q, s)
        plan = select_truncation(Q, stats, float(run["zeta"]))
        acc = accelerated_stats(Q, plan.members, s)
        pi_acc = stationary_distribution(acc.generator)
        pi_acc.to_csv(out.path("accelerated.csv"))
        out.adopt("accelerated.csv")
        report["hitting"] = _stats_summary(stats)
        report["plan"] = _plan_summary(plan)
        report["accelerated"] = {
            "T_tilde_plus": acc.T_plus,
            "T_tilde_s": acc.T_s,
            "r_tilde": acc.r,
            "tv_to_returned": total_variation(pi_mu, pi_acc),
        }
    out.write_text("report.json", json.dumps(report, indent=2, sort_keys=True))
    out.finish()
    return 0


def cmd_bounds(args, cfg, bundle: ModelBundle, out: _Out) -> int:
    started = time.perf_counter()
    _need_chain(bundle, "bounds")
    run = cfg.run
    Q, s = bundle.generator, bundle.s
    M = float(run.get("M", 1.0))
    D = args.D or float(run.get("D", 1.0))
    t = run.get("t")
    zeta_grid = _parse_grid(args.zeta_grid) if args.zeta_grid else None
    t0 = time.perf_counter()
    stats = hitting_stats(Q, s)
    out.timings["hitting_stats"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    best_zeta, best, reports = optimize_zeta(Q, stats, M, t=t, D=D, zeta_grid=zeta_grid)
    out.timings["optimize_zeta"] = time.perf_counter() - t0
    rows = [r.to_csv_row() for r in reports]
    out.write_csv("bounds_grid.csv", list(best.CSV_FIELDS), rows)
    zeta_figure(
        out.path("bounds.png"),
        [r.zeta for r in reports],
        [r.tv_bound for r in reports],
        best_zeta=best_zeta,
    )
    out.adopt("bounds.png")
    report = _report_envelope(bundle, "bounds", started)
    report["hitting"] = _stats_summary(stats)
    report["best"] = best.to_dict()
    report["renewal_identity"] = _renewal_check(Q, stats)
    mu_spec = run.get("mu")
    if mu_spec is not None:
        mu = resolve_mu(mu_spec, s, Q.n)
        pi_mu = stationary_distribution(build_returned_generator(Q, mu))
        pi_s = stationary_distribution(build_returned_generator(Q, ReturnDistribution.delta(s)))
        exact = total_variation(pi_mu, pi_s)
        report["exact_tv_mu_vs_delta"] = exact
        report["mu_T_over_T_s"] = stats.mu_T(mu) / stats.T_s
    out.write_text("report.json", json.dumps(report, indent=2, sort_keys=True))
    out.finish()
    return 0


def _renewal_check(Q, stats) -> dict:
    """T_s * sum_k pi(k) q_k0 against 1 - p_s (must agree to 1e-8 relative)."""
    pi = stationary_distribution(
        build_returned_generator(Q, ReturnDistribution.delta(stats.s))
    )
    flow = float(np.dot(pi.probs, Q.q_abs[1:]))
    lhs = stats.T_s * flow
    rhs = 1.0 - stats.p_s
    return {
        "T_s_times_kill_flow": lhs,
        "one_minus_p_s": rhs,
        "relative_error": abs(lhs - rhs) / rhs if rhs > 0 else 0.0,
    }


def cmd_window(args, cfg, bundle: ModelBundle, out: _Out) -> int:
    started = time.perf_counter()
    _need_chain(bundle, "window")
    run = cfg.run
    Q, s = bundle.generator, bundle.s
    spec = args.t_grid or run.get("t")
    if spec is None:
        raise ConfigError("window needs --t-grid or run.t")
    t_grid = _parse_grid(spec) if isinstance(spec, str) else np.atleast_1d(np.asarray(spec, float))
    D = args.D or float(run.get("D", 1.0))
    zeta = float(run.get("zeta", 1.0))
    stats = hitting_stats(Q, s)
    plan = select_truncation(Q, stats, zeta)
    acc = accelerated_stats(Q, plan.members, s)
    pi_s = stationary_distribution(build_returned_generator(Q, ReturnDistribution.delta(s)))
    pi_acc = stationary_distribution(acc.generator)
    inputs = inputs_from_plan(stats, plan, M=float(run.get("M", 1.0)), D=D)
    delta_s = ProbabilityVector(states=np.array([s]), probs=np.array([1.0]))
    rows = []
    for t in t_grid:
        t0 = time.perf_counter()
        law = transient_distribution(Q, delta_s, float(t))
        out.timings[f"uniformization_t={t:g}"] = time.perf_counter() - t0
        tv_ret = total_variation(law, pi_s)
        tv_acc = total_variation(law, pi_acc)
        try:
            eta = eta_bound(inputs, float(t))
        except BoundInapplicableError:
            eta = None
        try:
            tld = tilde_bound(acc.T_plus, acc.T_s, acc.r, stats.q_s, D, float(t))
        except BoundInapplicableError:
            tld = None
        rows.append(
            [
                float(t),
                tv_ret,
                tv_acc,
                eta if eta is not None else "",
                tld if tld is not None else "",
            ]
        )
    out.write_csv(
        "window.csv",
        ["t", "tv_exact_returned", "tv_exact_accelerated", "eta_bound", "tilde_bound"],
        rows,
    )
    from .bounds import informal_window

    window = informal_window(inputs)
    window_figure(
        out.path("window.png"),
        t_grid,
        [r[1] for r in rows],
        eta=[r[3] if r[3] != "" else np.nan for r in rows],
        tilde=[r[4] if r[4] != "" else np.nan for r in rows],
        window=window,
    )
    out.adopt("window.png")
    report = _report_envelope(bundle, "window", started)
    report["hitting"] = _stats_summary(stats)
    report["plan"] = _plan_summary(plan)
    report["window_informal"] = {"t_low": window[0], "t_high": window[1]}
    out.write_text("report.json", json.dumps(report, indent=2, sort_keys=True))
    out.finish()
    return 0


def _sweep_point_bd(cfg, A: float, args) -> list:
    model_cfg = dict(cfg.model)
    model_cfg["A"] = float(A)
    model_cfg.pop("s", None)
    sub = type(cfg)(model=model_cfg, run=cfg.run, source_text=cfg.source_text, path=cfg.path)
    bundle = build_bundle(sub, cap_override=args.cap)
    Q, s = bundle.generator, bundle.s
    stats = hitting_stats(Q, s)
    hi = min(int(2 * A), Q.n)
    mu = ReturnDistribution.uniform(np.arange(1, hi + 1))
    pi_mu = stationary_distribution(build_returned_generator(Q, mu))
    pi_s = stationary_distribution(build_returned_generator(Q, ReturnDistribution.delta(s)))
    exact = total_variation(pi_mu, pi_s)
    M = max(1.0, stats.mu_T(mu) / stats.T_s)
    _, best, _ = optimize_zeta(Q, stats, M)
    return [float(A), s, 1.0 - stats.p_s, stats.T_s, exact, best.tv_bound, best.zeta]


def _sweep_point_mpp(cfg, N: float, args) -> list:
    model_cfg = dict(cfg.model)
    model_cfg["N"] = float(N)
    sub = type(cfg)(model=model_cfg, run=cfg.run, source_text=cfg.source_text, path=cfg.path)
    bundle = build_bundle(sub)
    radius = args.radius or float(cfg.run.get("radius", cfg.model.get("radius", 4.0)))
    pi, comparison, summary = mpp_quasi_equilibrium(
        bundle.mpp_model, x0=cfg.model.get("x0"), radius_multiplier=radius
    )
    mean_err = float(np.abs(comparison.mean_pi - N * summary.c).max()) / np.sqrt(N)
    cov_err = float(
        np.abs(comparison.cov_pi / N - summary.Sigma).max() / np.abs(summary.Sigma).max()
    )
    return [float(N), comparison.states, mean_err, cov_err, comparison.tv_to_gaussian]


def cmd_sweep(args, cfg, bundle: ModelBundle, out: _Out) -> int:
    started = time.perf_counter()
    run = cfg.run
    spec = args.grid or run.get("grid")
    if spec is None:
        grid = np.array([])
    else:
        grid = _parse_grid(spec) if isinstance(spec, str) else np.asarray(spec, dtype=float)
    threads = max(1, args.threads)
    if bundle.kind == "mpp":
        header = ["N", "states", "mean_err_per_sqrtN", "cov_rel_err", "tv_to_gaussian"]
        point = lambda v: _sweep_point_mpp(cfg, v, args)
        xlabel = "N"
    else:
        _need_chain(bundle, "sweep")
        header = ["A", "s", "one_minus_p_s", "T_s", "exact_tv", "tv_bound", "zeta_star"]
        point = lambda v: _sweep_point_bd(cfg, v, args)
        xlabel = "A"
    t0 = time.perf_counter()
    if threads > 1 and grid.size > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(point, grid))
    else:
        rows = [point(v) for v in grid]
    out.timings["sweep"] = time.perf_counter() - t0
    out.write_csv("sweep.csv", header, rows)
    if rows:
        tv_col = 4 if bundle.kind != "mpp" else 4
        bound_col = 5 if bundle.kind != "mpp" else None
        sweep_figure(
            out.path("sweep.png"),
            [r[0] for r in rows],
            [r[tv_col] for r in rows],
            bound=[r[bound_col] for r in rows] if bound_col is not None else None,
            xlabel=xlabel,
        )
        out.adopt("sweep.png")
    report = _report_envelope(bundle, "sweep", started)
    report["points"] = len(rows)
    out.write_text("report.json", json.dumps(report, indent=2, sort_keys=True))
    out.finish()
    return 0


def cmd_simulate(args, cfg, bundle: ModelBundle, out: _Out) -> int:
    started = time.perf_counter()
    _need_chain(bundle, "simulate")
    run = cfg.run
    Q, s = bundle.generator, bundle.s
    seed = args.seed if args.seed is not None else int(run.get("seed", 20100801))
    t_max = float(run.get("t_max", 100.0))
    replicates = int(run.get("replicates", 1000))
    mu = resolve_mu(run.get("mu"), s, Q.n)
    modes = {
        "absorbing": Absorbing(),
        "returned": Returned(mu),
    }
    if "zeta" in run:
        stats = hitting_stats(Q, s)
        plan = select_truncation(Q, stats, float(run["zeta"]))
        modes["accelerated"] = Accelerated(members=plan.members, s=s)
    for name, mode in modes.items():
        traj = simulate(Q, s, t_max, seed, mode)
        fname = f"trajectory_{name}.csv"
        traj.to_csv(out.path(fname))
        out.adopt(fname)
    t0 = time.perf_counter()
    p_est, T_est = estimate_hitting(Q, s, s, max(replicates, 100), seed)
    out.timings["estimate_hitting"] = time.perf_counter() - t0
    stats = hitting_stats(Q, s)
    estimators = {
        "p_s": {**p_est.to_dict(), "exact": stats.p_s},
        "T_s": {**T_est.to_dict(), "exact": stats.T_s},
        "seed": seed,
    }
    out.write_text("estimators.json", json.dumps(estimators, indent=2, sort_keys=True))
    report = _report_envelope(bundle, "simulate", started)
    report["hitting"] = _stats_summary(stats)
    out.write_text("report.json", json.dumps(report, indent=2, sort_keys=True))
    out.finish()
    return 0


_COMMANDS = {
    "solve": cmd_solve,
    "bounds": cmd_bounds,
    "window": cmd_window,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qedist",
        description="Quasi-equilibrium distributions of absorbing chains, with TV error bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="TOML or JSON model/run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
        p.add_argument("--zeta-grid", default=None, help="zeta grid spec lo:hi:n[:log]")
        p.add_argument("--t-grid", default=None, help="time grid spec lo:hi:n[:log]")
        p.add_argument("--grid", default=None, help="sweep grid over A (birth-death) or N (mpp)")
        p.add_argument("--cap", type=int, default=None, help="state-space truncation cap")
        p.add_argument("--D", type=float, default=None, help="coupling constant stand-in")
        p.add_argument("--radius", type=float, default=None, help="ellipsoid radius multiplier")
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        bundle = build_bundle(cfg, cap_override=args.cap)
        out = _Out(Path(args.out), cfg.source_text, args.command, argv)
        return args.func(args, cfg, bundle, out)
    except (ConfigError, ExprSyntaxError) as exc:
        print(f"qedist: configuration error: {exc}", file=sys.stderr)
        return 2
    except BoundInapplicableError as exc:
        print(f"qedist: bound inapplicable: {exc}", file=sys.stderr)
        return 4
    except QedistError as exc:
        print(f"qedist: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
