"""Command-line entry point: ``hawkesgen <command> --scenario FILE [options]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analytics, deviations, microstructure, ruin
from .config import Report, Scenario, load_scenario
from .errors import NumericalError, ScenarioError, ValidationError
from .simulate import RngStream, _atomic_write, count_samples, replicate, simulate_branching

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def parse_curve(spec: str) -> tuple[str, np.ndarray]:
    """``name:a:b:n`` to ``(name, linspace(a, b, n))``."""
    parts = spec.split(":")
    if len(parts) != 4:
        raise ValidationError(f"curve spec {spec!r} must look like name:start:stop:count")
    try:
        a, b, n = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise ValidationError(f"curve spec {spec!r} has a non-numeric field") from None
    if n < 1:
        raise ValidationError("curve needs at least one point")
    return parts[0], np.linspace(a, b, n)


def parse_floats(spec: str) -> np.ndarray:
    try:
        return np.array([float(s) for s in spec.split(",") if s.strip()])
    except ValueError:
        raise ValidationError(f"cannot parse number list {spec!r}") from None


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.9f}"


def write_csv(path: Path, header: list[str], rows) -> Path:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) if not isinstance(v, (int, np.integer)) else str(int(v)) for v in row) + "\n")
    _atomic_write(path, buf.getvalue())
    return path


# ------------------------------------------------------------------ commands


def cmd_simulate(sc: Scenario, args, out: Path, rep: Report) -> None:
    summaries = replicate(sc, sc.reps, tol=sc.series_tol)
    first = simulate_branching(sc.sequence, sc.horizon, RngStream(sc.seed, 0), sc.series_tol)
    f1 = out / "events.csv"
    first.to_csv(f1)
    rows = [(s.stream, s.N_T, s.M_used, s.truncation_bound) for s in summaries]
    f2 = write_csv(out / "replications.csv", ["stream", "N_T", "M_used", "truncation_bound"], rows)
    rep.files += [f1, f2]
    rate = np.array([s.N_T for s in summaries]) / sc.horizon
    se = rate.std(ddof=1) / math.sqrt(rate.size) if rate.size > 1 else math.inf
    rep.add("mean_N_T_over_T", rate.mean(), se)
    rep.add("truncation_bound", max(s.truncation_bound for s in summaries), 0.0)
    rep.add("N_T_stream0", first.n_events, first.truncation_bound)


def cmd_moments(sc: Scenario, args, out: Path, rep: Report) -> None:
    lc = analytics.limit_constants(sc.sequence, sc.series_tol)
    rep.add("m", lc.m, lc.truncation_error_m)
    rep.add("sigma2", lc.sigma2, lc.truncation_error_sigma2)
    rep.add("rho", sc.sequence.rho, 0.0)
    rates = analytics.generation_rates(sc.sequence, min(50, max(10, sc.sequence.K + 5)))
    rep.files.append(write_csv(out / "generation_rates.csv", ["n", "m_n"], enumerate(rates)))
    if sc.partition is not None:
        lln = analytics.partition_lln(sc.sequence, sc.partition, sc.series_tol)
        for k, v in enumerate(lln):
            rep.add(f"partition_rate_{k + 1}", v, sc.series_tol)


def cmd_ldp(sc: Scenario, args, out: Path, rep: Report) -> None:
    cm = deviations.CumulantModel(sc.sequence, divergence_cap=sc.divergence_cap)
    tc = cm.theta_c()
    rep.add("theta_c", tc, 1e-12 if math.isfinite(tc) else 0.0)
    if args.theta:
        for th in parse_floats(args.theta):
            rep.add(f"Gamma({th:g})", cm.gamma(th), sc.series_tol)
    if args.curve:
        _, xs = parse_curve(args.curve)
        rows = [(x, cm.rate_I(x)) for x in xs]
        rep.files.append(write_csv(out / "rate_I.csv", ["x", "I"], rows))


def cmd_mdp(sc: Scenario, args, out: Path, rep: Report) -> None:
    lc = analytics.limit_constants(sc.sequence, sc.series_tol)
    xs = parse_curve(args.curve)[1] if args.curve else np.array([0.5, 1.0])
    T = sc.horizon
    a = T ** args.exponent
    N = count_samples(sc.sequence, T, sc.reps, RngStream(sc.seed).generator(), sc.series_tol)
    z = (N - lc.m * T) / a
    rows = []
    for x in xs:
        freq = float(np.mean(z > x))
        se = math.sqrt(freq * (1 - freq) / N.size)
        emp = -(T / a**2) * math.log(freq) if freq > 0 else math.inf
        J = deviations.rate_J(lc, x)
        rows.append((x, freq, se, emp, J, emp / J))
        rep.add(f"rate_ratio(x={x:g})", emp / J, (T / a**2) * se / max(freq, 1e-300) / J)
    rep.files.append(write_csv(out / "mdp.csv", ["x", "frequency", "se", "empirical_rate", "J", "ratio"], rows))


def cmd_equilibrium(sc: Scenario, args, out: Path, rep: Report) -> None:
    ss = parse_curve(args.curve)[1] if args.curve else np.array([0.0, 2.0, 5.0, 10.0])
    T = args.horizon if args.horizon else sc.horizon
    rows = []
    for s in ss:
        b = analytics.equilibrium_bound(sc.sequence, float(s), T, sc.grid_step, sc.series_tol)
        rows.append((s, b.value, b.truncation_error))
        rep.add(f"bound(s={s:g})", b.value, b.truncation_error)
    rep.add("strong_cap", analytics.strong_cap(sc.sequence), 0.0)
    rep.files.append(write_csv(out / "equilibrium.csv", ["s", "bound", "truncation_error"], rows))


def cmd_microstructure(sc: Scenario, args, out: Path, rep: Report) -> None:
    part = sc.partition
    if part is None or part.d not in (2, 4):
        raise ValidationError("microstructure needs a partition block with d = 2 or d = 4")
    taus = parse_floats(args.tau_grid) if args.tau_grid else np.logspace(-2, 1, 10)
    table = microstructure.covariance_table(sc.sequence, step=max(sc.grid_step, 1e-3))
    moments = [microstructure.analytic_second_moments(table, part, t) for t in taus]
    paths, warm = microstructure.stationary_paths(sc.sequence, part, sc.horizon, sc.reps,
                                                  RngStream(sc.seed).generator(), tol=sc.series_tol)
    rep.notes.append(f"warm-up length {warm:.6g}; generation-pair truncation bound {table.truncation_bound:.3g}")
    sig = microstructure.signature_plot(paths, taus, 1, [mo.x1x1 / t for mo, t in zip(moments, taus)])
    sig.to_csv(out / "signature.csv")
    rep.files.append(out / "signature.csv")
    for t, v, e in zip(taus, sig.value, sig.se):
        rep.add(f"C({t:g})", v, e)
    if part.d == 4:
        ep = microstructure.epps_curve(paths, taus, [mo.correlation for mo in moments])
        ep.to_csv(out / "epps.csv")
        rep.files.append(out / "epps.csv")
        for t, v, e in zip(taus, ep.value, ep.se):
            rep.add(f"corr({t:g})", v, e)


def cmd_ruin(sc: Scenario, args, out: Path, rep: Report) -> None:
    if sc.claims is None:
        raise ValidationError("ruin needs a [ruin] block with premium and claims")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ruin.NetProfitWarning)
        model = ruin.RiskModel(sc.sequence, sc.claims, sc.premium)
    us = parse_curve(args.curve)[1] if args.curve else np.asarray(sc.reserves or (0.0, 5.0, 10.0), float)
    if model.net_profit_margin <= 0:
        rep.notes.append("net profit condition fails; ruin is certain in the long run")
    asym = None
    if sc.claims.light_tailed and model.net_profit_margin > 0:
        try:
            td = ruin.lundberg_exponent(model)
            rep.add("theta_dagger", td, 1e-12)
            rep.add("knee", ruin.knee(model, td), 1e-6)
        except ValidationError as exc:
            rep.notes.append(str(exc))
    elif model.net_profit_margin > 0:
        asym = ruin.heavy_tail_asymptote(model, args.horizon)
        rep.add("heavy_tail_constant", asym.constant, 0.0)
    est = ruin.ruin_curve(model, us, sc.reps, RngStream(sc.seed).generator(), horizon=args.horizon,
                          tol=sc.series_tol)
    rows = []
    for e in est:
        a = float(asym(e.u)[0]) if asym is not None else math.nan
        rows.append((e.u, e.psi, e.se, a))
        rep.add(f"psi(u={e.u:g})", e.psi, e.se)
    rep.files.append(write_csv(out / "ruin.csv", ["u", "psi", "se", "psi_asym"], rows))


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "ldp": cmd_ldp,
    "mdp-check": cmd_mdp,
    "equilibrium": cmd_equilibrium,
    "microstructure": cmd_microstructure,
    "ruin": cmd_ruin,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hawkesgen", description="Generation-dependent Hawkes process toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", required=True, help="scenario TOML file")
        s.add_argument("--seed", type=int, help="override the scenario seed")
        s.add_argument("--reps", type=int, help="override the replication count")
        s.add_argument("--out", help="output directory (default: scenario out_dir, then $HAWKESGEN_OUT)")
        s.add_argument("--tol", type=float, help="override the series tolerance")
        s.add_argument("--theta", help="comma-separated theta values (ldp)")
        s.add_argument("--curve", help="name:start:stop:count grid (ldp, mdp-check, equilibrium, ruin)")
        s.add_argument("--tau-grid", dest="tau_grid", help="comma-separated sampling scales (microstructure)")
        s.add_argument("--horizon", type=float, help="override the horizon (ruin: finite-horizon T)")
        if name == "mdp-check":
            s.add_argument("--exponent", type=float, default=0.75, help="scale a(T) = T**exponent")
    return p


def run(command: str, sc: Scenario, args, out_dir=None) -> Report:
    from dataclasses import replace

    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.reps is not None:
        over["reps"] = args.reps
    if args.tol is not None:
        over["series_tol"] = args.tol
    if args.horizon is not None and command not in ("ruin",):
        over["horizon"] = args.horizon
    sc = replace(sc, **over) if over else sc
    out = sc.output_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = Report(command, sc)
    COMMANDS[command](sc, args, out, rep)
    rep.finish()
    path = out / f"{command}_report.json"
    rep.files.append(path)
    rep.write(path)
    return rep


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        sc = load_scenario(args.scenario)
        rep = run(args.command, sc, args, args.out)
    except (ValidationError, ScenarioError) as exc:
        print(f"hawkesgen: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"hawkesgen: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for k, (v, e) in rep.results.items():
        print(f"{k} = {v} +/- {e}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
