"""``peloton`` command line: simulate, analyze, fit, equilibrium and report.

Every artifact carries the tool version, seed and config hash.  CSV outputs hold
them in a leading ``# provenance: {...}`` comment, JSON outputs as top-level keys.
Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .dilemma.config import SimConfig, load_config
from .dilemma.experiment import MODELS, model_dataset, run_experiment, simulate_races
from .dilemma.game import (
    NotChickenError,
    PayoffMatrix,
    best_response_dynamics,
    expected_payoffs,
    nash_cooperation_fraction,
)
from .dilemma.simulator import SimulationFault
from .metrics import (
    DraftingParams,
    MetricRow,
    race_metrics,
    read_metrics_csv,
    reconcile_checkers,
    reconcile_ranks,
    write_metrics_csv,
)
from .racelog import RaceLog, RaceLogError, parse_race_log, rank_race, serialize_race_log, write_rank_csv
from .stats.correlation import pearson
from .stats.distributions import ConvergenceError
from .stats.lmm import LmmConvergenceError, LmmError, fit_lmm

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NONCONVERGENCE = 0, 1, 2, 3
TOOL = "peloton"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- #
# Output plumbing


def atomic_write(path: Path, data: bytes | str) -> Path:
    """Write to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def provenance(seed, config_hash) -> dict:
    return {"tool": TOOL, "version": __version__, "seed": seed, "config_hash": config_hash}


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def resolve_seed(flag: int | None, config: SimConfig | None = None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("PELOTON_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(f"PELOTON_SEED must be an integer, got {env!r}") from exc
    return config.seed if config is not None else 0


def resolve_config(path: Path | None, seed: int | None) -> SimConfig:
    base = load_config(path) if path is not None else SimConfig()
    return base.with_(seed=resolve_seed(seed, base))


def read_commented_csv(path: Path) -> tuple[dict, list[dict]]:
    """Rows of a CSV plus the provenance comment, if any."""
    prov: dict = {}
    body = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            tag, _, payload = line[1:].strip().partition(":")
            if tag.strip() == "provenance":
                prov = json.loads(payload)
        elif line.strip():
            body.append(line)
    return prov, list(csv.DictReader(body))


def time_trial_csv(trials: dict[str, float], prov: dict) -> str:
    buf = io.StringIO()
    buf.write("# provenance: " + json.dumps(prov, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["skater_id", "best_time"])
    for sid in sorted(trials):
        w.writerow([sid, repr(float(trials[sid]))])
    return buf.getvalue()


def read_time_trials(path: Path) -> dict[str, float]:
    """``skater_id,best_time`` or ``skater_id,standardized_best`` rows."""
    _, rows = read_commented_csv(path)
    cols = set(rows[0]) if rows else set()
    value = next((c for c in ("best_time", "standardized_best") if c in cols), None)
    if rows and ("skater_id" not in cols or value is None):
        raise CliError(f"{path}: expected columns skater_id and best_time or standardized_best")
    try:
        return {r["skater_id"]: float(r[value]) for r in rows}
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from exc


def write_logs(logs: list[RaceLog], out: Path, fmt: str) -> dict[str, str]:
    files = {}
    for log in logs:
        data = serialize_race_log(log, fmt)
        name = f"logs/{log.meta.race_id}.{fmt}"
        atomic_write(out / name, data)
        files[name] = sha256(data)
    return files


def write_manifest(out: Path, files: dict[str, str], extra: dict) -> None:
    manifest = {**extra, "files": dict(sorted(files.items()))}
    data = dump_json(manifest).encode()
    atomic_write(out / "manifest.json", data)


# --------------------------------------------------------------------------- #
# Analysis shared by analyze and report


def load_logs(directory: Path) -> tuple[list[RaceLog], dict[str, str]]:
    """Parse every ``*.csv`` / ``*.jsonl`` log; failures are returned as reasons."""
    if not directory.is_dir():
        raise CliError(f"{directory} is not a directory", EXIT_IO)
    logs, bad = [], {}
    for path in sorted(directory.iterdir()):
        fmt = {".csv": "csv", ".jsonl": "jsonl"}.get(path.suffix)
        if fmt is None:
            continue
        try:
            logs.append(parse_race_log(path.read_bytes(), fmt))
        except (RaceLogError, ValueError) as exc:
            bad[path.name] = f"invalid: {exc}"
    return logs, bad


def merge_checkers(
    first: list[MetricRow], second: list[MetricRow], tolerance: float
) -> tuple[list[MetricRow], list[str]]:
    """Combine two checkers' rows; exposure disagreements are blanked and listed."""
    other = {r.skater_id: r for r in second}
    merged, remeasure = [], []
    for r in first:
        o = other.get(r.skater_id)
        if o is None:
            merged.append(r)
            continue
        tau = r.tau
        if r.tau is not None and o.tau is not None:
            tau = reconcile_checkers(r.tau, o.tau, tolerance)
            if tau is None:
                remeasure.append(r.skater_id)
        ranks = [
            reconcile_ranks(a, b) if a is not None and b is not None else a
            for a, b in ((r.rank_L3, o.rank_L3), (r.rank_L2, o.rank_L2), (r.rank_L1, o.rank_L1))
        ]
        merged.append(
            MetricRow(r.race_id, r.skater_id, tau, r.imputed_fraction, *ranks,
                      r.finish_rank, r.norm_finish_rank, r.breakaway)
        )
    return merged, remeasure


def analyze_logs(
    logs: list[RaceLog],
    params: DraftingParams,
    breakaway_gap: float,
    second: dict[str, RaceLog] | None = None,
    discrepancy_tol: float = 0.1,
) -> tuple[list[MetricRow], dict[str, dict], dict]:
    rows, excluded, ranks = [], {}, {}
    for log in sorted(logs, key=lambda g: g.meta.race_id):
        rid = log.meta.race_id
        try:
            race_rows = race_metrics(log, params, breakaway_gap)
        except (RaceLogError, ValueError) as exc:
            excluded[rid] = {"reason": f"unmeasurable: {exc}"}
            continue
        ranks[rid] = rank_race(log)
        if race_rows[0].breakaway:
            excluded[rid] = {"reason": "breakaway"}
            continue
        if second and rid in second:
            race_rows, remeasure = merge_checkers(
                race_rows, race_metrics(second[rid], params, breakaway_gap), discrepancy_tol
            )
            if remeasure:
                excluded.setdefault(rid, {"reason": "partial"})["remeasure"] = remeasure
        rows.extend(race_rows)
    return rows, excluded, ranks


def logs_provenance(logs: list[RaceLog]) -> tuple[object, object]:
    """Seed and config hash shared by a set of logs (lists when they differ)."""
    seeds, hashes = [], []
    for log in sorted(logs, key=lambda g: g.meta.race_id):
        p = log.meta.provenance
        seeds.append(p.get("experiment_seed", p.get("seed")))
        hashes.append(p.get("config_hash"))

    def collapse(vals):
        uniq = list(dict.fromkeys(vals))
        return uniq[0] if len(uniq) == 1 else uniq

    return collapse(seeds), collapse(hashes)


def write_analysis(out_csv: Path, rows, excluded, ranks, prov: dict) -> dict[str, str]:
    buf = io.StringIO()
    write_metrics_csv(rows, buf, comment="provenance: " + json.dumps(prov, sort_keys=True))
    stem = out_csv.with_suffix("")
    rank_buf = io.StringIO()
    rank_buf.write("# provenance: " + json.dumps(prov, sort_keys=True) + "\n")
    write_rank_csv(ranks, rank_buf)
    sidecar = dump_json({**prov, "excluded": excluded})
    outputs = {
        out_csv: buf.getvalue(),
        Path(f"{stem}.excluded.json"): sidecar,
        Path(f"{stem}.ranks.csv"): rank_buf.getvalue(),
    }
    hashes = {}
    for path, text in outputs.items():
        atomic_write(path, text)
        hashes[path.name] = sha256(text.encode())
    return hashes


def fit_report(model: str, rows, time_trials, method: str, prov: dict) -> dict:
    fit = fit_lmm(model_dataset(model, rows, time_trials), method=method)
    return {**prov, "model": model, "fit": fit.to_dict()}


# --------------------------------------------------------------------------- #
# Subcommands


def cmd_simulate(args) -> int:
    config = resolve_config(args.config, args.seed)
    roster, results = simulate_races(config, args.n_races, jobs=args.jobs)
    out = args.out
    logs = [r.log for r in results]
    files = write_logs(logs, out, args.format)
    prov = provenance(config.seed, config.config_hash())
    tt = time_trial_csv({e.skater_id: e.best_time for e in roster}, prov)
    atomic_write(out / "time_trials.csv", tt)
    files["time_trials.csv"] = sha256(tt.encode())
    seeds = {log.meta.race_id: log.meta.provenance["seed"] for log in logs}
    write_manifest(out, files, {**prov, "n_races": args.n_races, "race_seeds": seeds,
                                "config": config.to_dict()})
    print(f"simulated {len(logs)} races (seed {config.seed}, config {config.config_hash()}) -> {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    params = DraftingParams(gap_threshold=args.gap_threshold)
    logs, bad = load_logs(args.logs)
    for name, reason in bad.items():
        print(f"warning: {name}: {reason}", file=sys.stderr)
    if not logs:
        raise CliError(f"no valid race logs in {args.logs}")
    second = None
    if args.second_checker is not None:
        other, _ = load_logs(args.second_checker)
        second = {g.meta.race_id: g for g in other}
    rows, excluded, ranks = analyze_logs(logs, params, args.breakaway_gap, second, args.discrepancy_tol)
    for name, reason in bad.items():
        excluded[name] = {"reason": reason}
    seed, chash = logs_provenance(logs)
    prov = {
        **provenance(seed, chash),
        "gap_threshold": args.gap_threshold,
        "breakaway_gap": args.breakaway_gap,
    }
    write_analysis(args.out, rows, excluded, ranks, prov)
    kept = len({r.race_id for r in rows})
    print(f"{kept} races measured, {len(excluded)} excluded -> {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        with open(args.metrics, encoding="utf-8") as fh:
            rows = read_metrics_csv(fh)
        mprov, _ = read_commented_csv(args.metrics)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    trials = read_time_trials(args.time_trials) if args.time_trials else None
    prov = provenance(mprov.get("seed"), mprov.get("config_hash"))
    report = fit_report(args.model, rows, trials, args.method, prov)
    atomic_write(args.out, dump_json(report))
    fit = report["fit"]
    for name, c in fit["coefficients"].items():
        print(f"{name:>16s} {c['estimate']: .6g}  95% CI [{c['ci95'][0]:.4g}, {c['ci95'][1]:.4g}]  p={c['p']:.3g}")
    print(f"n={fit['n']} subjects={fit['n_subjects']} loglik={fit['loglik']:.6g}")
    if not fit["convergence"].get("converged", True):
        print("warning: variance ratio search did not converge", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    m = PayoffMatrix(args.T, args.R, args.S, args.P)
    try:
        x = nash_cooperation_fraction(m)
    except NotChickenError as exc:
        raise CliError(str(exc)) from exc
    pc, pd = expected_payoffs(m, x)
    print("ordering: T > R > S > P holds (chicken game)")
    print(f"x* = {x:.4f}")
    print(f"payoff_C(x*) = {pc:.6g}")
    print(f"payoff_D(x*) = {pd:.6g}")
    report = {
        **provenance(None, None),
        "payoffs": {"T": m.T, "R": m.R, "S": m.S, "P": m.P},
        "ordering": "chicken",
        "x_star": x,
        "payoff_C": pc,
        "payoff_D": pd,
        "indifference_gap": abs(pc - pd),
    }
    if args.dynamics:
        traj = best_response_dynamics(m, args.x0, args.step, args.iterations)
        report["dynamics"] = {"x0": args.x0, "step": args.step, "iterations": args.iterations,
                              "final": float(traj[-1])}
        print(f"best response from x0={args.x0}: x={traj[-1]:.4f} after {args.iterations} steps")
        if args.trajectory:
            lines = ["iteration,x"] + [f"{k},{v!r}" for k, v in enumerate(traj.tolist())]
            atomic_write(args.trajectory, "\n".join(lines) + "\n")
    if args.out:
        atomic_write(args.out, dump_json(report))
    return EXIT_OK


def cmd_report(args) -> int:
    config = resolve_config(args.config, args.seed)
    params = DraftingParams(gap_threshold=args.gap_threshold)
    res = run_experiment(config, args.n_races, params=params, breakaway_gap=args.breakaway_gap,
                         method=args.method, jobs=args.jobs)
    out = args.out
    prov = provenance(config.seed, config.config_hash())
    files = write_logs(res.logs, out, args.format)
    tt = time_trial_csv(res.time_trials(), prov)
    atomic_write(out / "time_trials.csv", tt)
    files["time_trials.csv"] = sha256(tt.encode())

    rows, excluded, ranks = analyze_logs(res.logs, params, args.breakaway_gap)
    aprov = {**prov, "gap_threshold": args.gap_threshold, "breakaway_gap": args.breakaway_gap}
    files.update(write_analysis(out / "metrics.csv", rows, excluded, ranks, aprov))

    fits = {}
    code = EXIT_OK
    for model in MODELS:
        try:
            fits[model] = fit_report(model, rows, res.time_trials(), args.method, prov)["fit"]
        except LmmError as exc:
            fits[model] = {"error": str(exc)}
        except LmmConvergenceError as exc:
            fits[model] = {"error": str(exc)}
            code = EXIT_NONCONVERGENCE
    fit_text = dump_json({**prov, "method": args.method, "fits": fits})
    atomic_write(out / "fits.json", fit_text)
    files["fits.json"] = sha256(fit_text.encode())

    # Plot-ready tables: exposure against finish rank, and per-race correlations.
    comment = "# provenance: " + json.dumps(prov, sort_keys=True) + "\n"
    scatter = [comment + "race_id,skater_id,tau,norm_finish_rank"]
    scatter += [f"{r.race_id},{r.skater_id},{r.tau!r},{r.norm_finish_rank!r}" for r in rows if r.tau is not None]
    corr = [comment + "race_id,r,p,n"]
    for rid in sorted({r.race_id for r in rows}):
        pairs = [(r.tau, r.norm_finish_rank) for r in rows if r.race_id == rid and r.tau is not None]
        try:
            rr, pp, nn = pearson(*zip(*pairs))
            corr.append(f"{rid},{rr!r},{pp!r},{nn}")
        except ValueError:
            corr.append(f"{rid},,,{len(pairs)}")
    for name, lines in (("tau_vs_rank.csv", scatter), ("race_correlations.csv", corr)):
        text = "\n".join(lines) + "\n"
        atomic_write(out / name, text)
        files[name] = sha256(text.encode())

    seeds = {log.meta.race_id: log.meta.provenance["seed"] for log in res.logs}
    write_manifest(out, files, {**prov, "n_races": args.n_races, "race_seeds": seeds,
                                "config": config.to_dict()})

    print(f"{args.n_races} races, {len(excluded)} excluded, {len(rows)} skater rows")
    for model, fit in fits.items():
        if "error" in fit:
            print(f"{model}: {fit['error']}")
            continue
        slope = [k for k in fit["coefficients"] if k != "intercept"]
        desc = ", ".join(
            f"{k}={fit['coefficients'][k]['estimate']:.4g} (p={fit['coefficients'][k]['p']:.3g})" for k in slope
        )
        print(f"{model}: {desc}; n={fit['n']}")
    return code


# --------------------------------------------------------------------------- #
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description="Drafting and the skater's dilemma in mass-start races")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def seeded(p):
        p.add_argument("--config", type=Path, help="key = value simulation config")
        p.add_argument("--seed", type=int, help="experiment seed (default: $PELOTON_SEED, then config)")
        p.add_argument("--n-races", type=int, default=9)
        p.add_argument("--jobs", type=int, default=default_jobs())
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    def thresholds(p):
        p.add_argument("--gap-threshold", type=float, default=0.2, help="shelter gap in seconds")
        p.add_argument("--breakaway-gap", type=float, default=2.0, help="breakaway gap in seconds")

    p = sub.add_parser("simulate", help="simulate races and write logs, time trials and a manifest")
    seeded(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="measure exposure and ranks in a directory of race logs")
    p.add_argument("logs", type=Path)
    thresholds(p)
    p.add_argument("--second-checker", type=Path, help="directory with a second checker's logs")
    p.add_argument("--discrepancy-tol", type=float, default=0.1)
    p.add_argument("--out", type=Path, required=True, help="metrics CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="fit one mixed model to a metrics CSV")
    p.add_argument("metrics", type=Path)
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--time-trials", type=Path, help="CSV with skater_id,best_time (eq3)")
    p.add_argument("--method", choices=("reml", "ml"), default="reml")
    p.add_argument("--out", type=Path, required=True, help="fit report JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("equilibrium", help="mixed equilibrium of a chicken game")
    for name in ("T", "R", "S", "P"):
        p.add_argument(name, type=float)
    p.add_argument("--dynamics", action="store_true", help="also run best-response dynamics")
    p.add_argument("--x0", type=float, default=0.1)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--trajectory", type=Path, help="CSV for the dynamics trajectory")
    p.add_argument("--out", type=Path, help="JSON report")
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("report", help="simulate, analyze and fit end to end")
    seeded(p)
    thresholds(p)
    p.add_argument("--method", choices=("reml", "ml"), default="reml")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (LmmConvergenceError, ConvergenceError, SimulationFault) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LmmError, RaceLogError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
