"""Command-line entry point: ``slowfast <command> --config run.yaml [options]``.

Every command writes into one run directory: a copy of the effective config,
``meta.jsonl`` with one record per stage, ``results.csv`` and plot data.  The
exit status is 0 exactly when every enabled check passes; configuration
errors exit with status 2.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import harness
from .averaging import averaged_drift_analytic, averaged_drift_ergodic, solve_averaged
from .config import ExperimentConfig, load_config
from .coupled import default_initial_condition, khasminskii_residual, plan_noise, simulate_coupled
from .errors import ConfigurationError, PrecisionError
from .fast import (
    contraction_diagnostic,
    linear_stationary_law,
    moment_diagnostic,
    stationary_moments,
    tail_is_flat,
)
from .io import RunDirectory, read_csv, read_meta
from .reaction import SystemSpec
from .spectral import verify_hypothesis_h1
from .stochastic import AUX_NOISE, FROZEN_NOISE, RngStream, hs_decay_profile, stream_id

GAP_DELTAS = tuple(2.0**-j for j in range(4, 8))


@dataclass
class Checks:
    """Named pass/fail rows collected by a command."""

    rows: list = field(default_factory=list)

    def add(self, name: str, value, threshold: str, passed: bool):
        self.rows.append((name, value, threshold, bool(passed)))
        mark = "PASS" if passed else "FAIL"
        print(f"[{mark}] {name}: {value} ({threshold})")

    @property
    def ok(self) -> bool:
        return all(r[3] for r in self.rows)

    def write(self, run: RunDirectory, name: str = "checks.csv"):
        run.write_table(name, ["check", "value", "threshold", "passed"], self.rows)


def _out_dir(args, config: ExperimentConfig) -> RunDirectory:
    """``--out`` verbatim, otherwise ``<output_dir>/<command>``."""
    return RunDirectory(Path(args.out) if args.out else Path(config.output_dir) / args.command)


# -- commands -----------------------------------------------------------------


def cmd_check(config: ExperimentConfig, args, run: RunDirectory) -> bool:
    spec = config.build_spec()
    checks = Checks()
    rep = verify_hypothesis_h1(spec.basis_slow, args.mu, args.n_int, args.beta)
    checks.add(
        f"H1(mu={args.mu:g}, n={args.n_int}, beta={args.beta:g})",
        "pass" if rep.passed else "; ".join(rep.reasons),
        "summable tails and 1/(2n) < beta < 1/3",
        rep.passed,
    )
    t = np.logspace(-4, -1, 25)
    hs = hs_decay_profile(spec.basis_slow, spec.q1, t)
    checks.add("HS decay exponent gamma", f"{hs.fitted_gamma:.4f}", "gamma < 1/2", hs.fitted_gamma < 0.5)
    run.write_plotdata("hs_decay", t, hs.hs_values)
    checks.add("dissipativity margin delta", f"{spec.delta:.4g}", "delta > 0", spec.delta > 0)
    h_max = max(config.step(e) / e for e in config.epsilons)
    checks.add("micro-step guard h/eps", f"{h_max:.4g}", "<= 0.1", h_max <= 0.1)
    checks.write(run, "results.csv")
    return checks.ok


def cmd_simulate(config: ExperimentConfig, args, run: RunDirectory) -> bool:
    spec = config.build_spec()
    eps = args.epsilon if args.epsilon is not None else config.epsilons[0]
    u0, v0 = default_initial_condition(spec, config.alpha)
    h = config.step(eps)
    every = int(round(config.slot_width / h))
    res = simulate_coupled(spec, u0, v0, eps, h, config.seed, config.replicas, config.slot_width, every)
    u2 = np.sum(res.slow.states**2, axis=-1)
    v2 = np.sum(res.fast.states**2, axis=-1)
    sqrt_m = np.sqrt(config.replicas)
    rows = zip(
        res.slow.times, u2.mean(1), u2.std(1, ddof=1) / sqrt_m, v2.mean(1), v2.std(1, ddof=1) / sqrt_m
    )
    run.write_table("results.csv", ["t", "mean_u2", "u2_se", "mean_v2", "v2_se"], rows)
    run.write_plotdata("slow_energy", res.slow.times, u2.mean(1), u2.std(1, ddof=1) / sqrt_m)
    run.write_plotdata("fast_energy", res.fast.times, v2.mean(1), v2.std(1, ddof=1) / sqrt_m)
    run.save_trajectory("trajectory.npz", res.slow.times, U=res.slow.states, V=res.fast.states)
    ok = bool(np.all(np.isfinite(u2)) and np.all(np.isfinite(v2)))
    print(f"simulated eps={eps:g}, h={h:g}, replicas={config.replicas}: finite={ok}")
    return ok


def cmd_average(config: ExperimentConfig, args, run: RunDirectory) -> bool:
    spec = config.build_spec()
    drift = harness.make_drift(config, spec)
    u0, _ = default_initial_condition(spec, config.alpha)
    h = config.slot_width
    plan = plan_noise(spec, config.seed, max(config.epsilons), h, config.replicas, h)
    traj = solve_averaged(spec, drift, u0, h, plan.slow_noise(spec), 0)
    u2 = np.sum(traj.states**2, axis=-1)
    se = u2.std(1, ddof=1) / np.sqrt(config.replicas)
    run.write_table("results.csv", ["t", "mean_u2", "u2_se"], zip(traj.times, u2.mean(1), se))
    run.write_plotdata("averaged_energy", traj.times, u2.mean(1), se)
    run.save_trajectory("trajectory.npz", traj.times, U=traj.states)
    ok = bool(np.all(np.isfinite(u2)))
    print(f"averaged run with drift mode {drift.mode!r}, h={h:g}: finite={ok}")
    return ok


def cmd_drift_validate(config: ExperimentConfig, args, run: RunDirectory) -> bool:
    spec = config.build_spec()
    opts = {k: v for k, v in config.drift.items() if k in ("burn_in", "window", "h_fast", "n_batches")}
    burn_in = opts.get("burn_in", 20.0)
    window = opts.get("window", 200.0)
    h_fast = opts.get("h_fast", 1e-2)
    n_batches = int(opts.get("n_batches", 20))
    k = spec.basis_slow.modes.astype(float)
    u_all = RngStream(config.seed, stream_id(AUX_NOISE, 0)).normals((args.samples, spec.mode_count)) / k
    stream = RngStream(config.seed, stream_id(FROZEN_NOISE, 0))
    rows, ok = [], True
    for s, u in enumerate(u_all):
        exact = averaged_drift_analytic(spec, u)
        est, se = averaged_drift_ergodic(spec, u, burn_in, window, h_fast, stream, n_batches)
        z = (est - exact) / se
        good = np.abs(z) <= 3.0
        ok &= bool(good.all())
        rows += [(s, m + 1, exact[m], est[m], se[m], z[m], good[m]) for m in range(spec.mode_count)]
    run.write_table("results.csv", ["sample", "mode", "analytic", "ergodic", "std_error", "z", "passed"], rows)
    worst = max(abs(r[5]) for r in rows)
    print(f"[{'PASS' if ok else 'FAIL'}] ergodic vs analytic drift: max |z| = {worst:.3f} over {len(rows)} entries")
    return ok


def _fast_suite(config: ExperimentConfig, spec: SystemSpec, checks: Checks, run: RunDirectory):
    u0, v0 = default_initial_condition(spec, config.alpha)
    h = 1e-3
    stream = RngStream(config.seed, stream_id(FROZEN_NOISE, 1))
    v2 = v0 + 1.0
    s, rho = contraction_diagnostic(spec, u0, v0, v2, 10.0, h, stream)
    bound = np.exp(-2.0 * spec.delta * s) * rho[0] * (1.0 + 10.0 * spec.reactions.lip_g * h)
    checks.add("fast contraction", f"max ratio {np.max(rho / bound):.4f}", "<= 1", np.all(rho <= bound))
    run.write_plotdata("contraction", s, rho)

    n_rep = max(config.replicas, 50)
    horizon = np.ceil(10.0 / spec.delta / 1e-2) * 1e-2
    t, m, se = moment_diagnostic(spec, u0, v0, 2, horizon, 1e-2, n_rep, stream)
    flat = tail_is_flat(t, m, se, 5.0 / spec.delta)
    checks.add("fast second moment tail", f"{m[-1]:.4g}", "flat within 3 SE for s >= 5/delta", flat)
    run.write_plotdata("fast_moment", t, m, se)

    if spec.linear is not None:
        mom = stationary_moments(spec, u0, n_rep, horizon, 1e-2, RngStream(config.seed, stream_id(FROZEN_NOISE, 2)))
        mean, var = linear_stationary_law(spec, u0)
        checks.add("fast stationary law", f"{n_rep} replicas", "mean and variance within 3 SE", mom.agrees(mean, var))


def cmd_diagnose(config: ExperimentConfig, args, run: RunDirectory) -> bool:
    spec = config.build_spec()
    checks = Checks()
    diag = config.diagnostics
    if diag.get("fast", True):
        _fast_suite(config, spec, checks, run)
    if diag.get("moments", True):
        rep = harness.moment_uniformity(config, threads=args.threads)
        checks.add("moment uniformity (E sup|U|^2)", np.round(rep.sup_u, 4).tolist(), "4 combined SE", rep.uniform_u)
        checks.add("moment uniformity (sup E|V|^2)", np.round(rep.sup_v, 4).tolist(), "4 combined SE", rep.uniform_v)
        run.write_plotdata("moments_u", rep.epsilons, rep.sup_u, rep.sup_u_se)
        run.write_plotdata("moments_v", rep.epsilons, rep.sup_v, rep.sup_v_se)
    if diag.get("increments", True):
        eps = config.epsilons[0]
        h = config.step(eps)
        probe = h * 2.0 ** np.arange(0, 12)
        probe = probe[probe <= spec.horizon / 4 * (1 + 1e-12)]
        rep = harness.time_increment_check(config, eps, probe, threads=args.threads)
        checks.add("time increment exponent", f"{rep.exponent:.4f}", f">= {rep.threshold:.4g}", rep.passed)
        run.write_plotdata("increments", rep.h_probe, rep.mean_sq, rep.std_errors)
    if diag.get("gaps", True):
        rep = harness.gap_slope(config, config.epsilons[-1], GAP_DELTAS)
        if rep.fit is None:
            checks.add("discretization gaps", "identically zero", "zero for slow-independent coefficients", rep.identically_zero)
        else:
            lo, hi = rep.band
            checks.add("gap slope in block length", f"{rep.fit.slope:.4f}", f"[{lo:.3g}, {hi:.3g}]", rep.passed)
        run.write_plotdata("gap_v", rep.deltas, rep.gap_v, rep.gap_v_se)
        run.write_plotdata("gap_u_sup", rep.deltas, rep.gap_u_sup, rep.gap_u_sup_se)
    if diag.get("residual", True) and spec.linear is not None:
        u0, v0 = default_initial_condition(spec, config.alpha)
        res = khasminskii_residual(
            spec, config.epsilons, config.replicas, config.seed, config.c_h, config.alpha, u0=u0, v0=v0
        )
        checks.add("residual slope in eps", f"{res.fit.slope:.4f}", "[0.7, 1.3]", 0.7 <= res.fit.slope <= 1.3)
        run.write_plotdata("residual", res.epsilons, res.values, res.std_errors)
    checks.write(run, "results.csv")
    return checks.ok


def cmd_rate(config: ExperimentConfig, args, run: RunDirectory) -> bool:
    def progress(eps, m, s):
        print(f"eps={eps:.6g}  mse={m:.6g}  se={s:.3g}", flush=True)

    est = harness.run_rate(config, threads=args.threads, progress=progress)
    header = ["epsilon", "mse", "std_error", "replicas", "seed"]
    run.write_table("results.csv", header, [dict(r, seed=est.seed) for r in est.rows()])
    run.write_table(
        "fit.csv", ["slope", "intercept", "r2", "seed"], [(est.fit.slope, est.fit.intercept, est.fit.r2, est.seed)]
    )
    run.write_plotdata("rate", est.epsilons, est.mse, est.std_errors)
    lo, hi = harness.RATE_BAND
    ok = lo <= est.fit.slope <= hi and est.fit.r2 >= harness.RATE_MIN_R2
    print(f"[{'PASS' if ok else 'FAIL'}] slope {est.fit.slope:.4f} (band [{lo}, {hi}]), r2 {est.fit.r2:.4f}")
    run.append_meta("rate-summary", config, wall_time=est.wall_time, slope=est.fit.slope, r2=est.fit.r2)
    return ok


def cmd_report(path: Path) -> int:
    run = RunDirectory(path)
    results = run.path / "results.csv"
    if not results.exists():
        print(f"{results}: no results to report", file=sys.stderr)
        return 2
    rows = read_csv(results)
    header = list(rows[0]) if rows else []
    widths = [max(len(h), *(len(r[h]) for r in rows)) for h in header]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(r[h].ljust(w) for h, w in zip(header, widths)) for r in rows]
    fit = run.path / "fit.csv"
    if fit.exists():
        f = read_csv(fit)[0]
        lines.append(f"fit: slope={f['slope']} intercept={f['intercept']} r2={f['r2']}")
    if header[:3] == ["epsilon", "mse", "std_error"]:
        run.write_plotdata(
            "rate", [float(r["epsilon"]) for r in rows], [float(r["mse"]) for r in rows],
            [float(r["std_error"]) for r in rows],
        )
    ok = all(r.get("passed", "true") == "true" for r in rows)
    meta = run.path / "meta.jsonl"
    if meta.exists():
        for rec in read_meta(meta):
            lines.append(f"stage {rec.get('stage')}: seed={rec.get('seed')} config={rec.get('config_hash')} "
                         f"passed={rec.get('passed')}")
            if str(rec.get("stage", "")).endswith("-end"):
                ok = bool(rec.get("passed"))
    text = f"== {run.path}\n" + "\n".join(lines) + "\n"
    (run.path / "summary.txt").write_text(text)
    print(text, end="")
    return 0 if ok else 1


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "average": cmd_average,
    "drift-validate": cmd_drift_validate,
    "diagnose": cmd_diagnose,
    "rate": cmd_rate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowfast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["report"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--replicas", type=int, default=None, help="override the replica count")
        p.add_argument("--out", default=None, help="run directory (default: <output_dir>/<command>)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replica chunks")
        if name == "check":
            p.add_argument("--mu", type=float, default=0.6)
            p.add_argument("--n-int", type=int, default=3)
            p.add_argument("--beta", type=float, default=0.2)
        if name == "simulate":
            p.add_argument("--epsilon", type=float, default=None)
        if name == "drift-validate":
            p.add_argument("--samples", type=int, default=10)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        if args.out is not None:
            return cmd_report(Path(args.out))
        if args.config is None:
            print("report needs --out or --config", file=sys.stderr)
            return 2
        root = Path(load_config(args.config).output_dir)
        runs = sorted(p.parent for p in root.glob("*/results.csv"))
        if not runs:
            print(f"{root}: no run directories with results", file=sys.stderr)
            return 2
        return max(cmd_report(p) for p in runs)
    try:
        config = load_config(args.config, seed=args.seed, replicas=args.replicas)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run = _out_dir(args, config)
    run.write_config(config)
    run.append_meta(f"{args.command}-start", config)
    try:
        ok = COMMANDS[args.command](config, args, run)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.append_meta(f"{args.command}-end", config, passed=False, error=str(exc))
        return 2
    except PrecisionError as exc:
        print(f"precision abort: {exc}", file=sys.stderr)
        run.append_meta(f"{args.command}-end", config, passed=False, error=str(exc))
        return 1
    run.append_meta(f"{args.command}-end", config, passed=bool(ok))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
