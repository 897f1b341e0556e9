"""Command-line entry point: simulate | couple | verify | rate | appendix | report.

Exit codes: 0 when every verdict passes (or there is nothing to judge), 1 when
at least one verdict fails, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from kactransport import appendix, coupling, suites
from kactransport import stats as st
from kactransport.ensemble import default_jobs, parallel_map
from kactransport.report import FAIL, StatReport
from kactransport.rng import RandomStream, SeedSpec, stream_id
from kactransport.transport import ThetaSet, ThetaValidationError, simulate_family

OUT_ENV = "KACTRANSPORT_OUT"
ENSEMBLE_COLUMNS = ("eps", "rep", "sup_error", "L1", "L21", "L22", "L3", "maxLambdaDev", "maxGammaDev")
ENTRY_COLUMNS = ("name", "verdict", "estimate", "target", "tolerance", "comparison", "standard_error",
                 "p_value", "sample_size", "seed", "detail")


class UsageError(Exception):
    """Bad flag value; the message names the flag."""


# --- output helpers ------------------------------------------------------------

def write_atomic(path: Path, text: str):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _num(v) for v in row])
    return buf.getvalue()


def entries_csv(report: StatReport) -> str:
    rows = [[getattr(e, c) for c in ENTRY_COLUMNS] for e in report.entries]
    return csv_text(ENTRY_COLUMNS, rows)


def _json(data) -> str:
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def emit_report(report: StatReport, out_dir: Path, stem: str, fmt: str) -> int:
    """Write ``<stem>.json`` (and ``.csv`` for csv format); print the chosen view; return the exit code."""
    write_atomic(out_dir / f"{stem}.json", report.to_json())
    if fmt == "csv":
        text = entries_csv(report)
        write_atomic(out_dir / f"{stem}.csv", text)
        sys.stdout.write(text)
    elif fmt == "json":
        sys.stdout.write(report.to_json())
    else:
        print(report.table())
    return exit_code(report)


def exit_code(report: StatReport) -> int:
    return 1 if any(e.verdict == FAIL for e in report.entries) else 0


# --- argument parsing -----------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None, help="master seed (default 1)")
    common.add_argument("--config", type=Path, default=None, help="JSON config file; flags override it")
    common.add_argument("--jobs", type=_positive_int, default=None,
                        help="worker processes (default: number of CPUs)")
    common.add_argument("--out", type=Path, default=None,
                        help=f"output directory (default ${OUT_ENV} or the current directory)")
    common.add_argument("--format", choices=("json", "csv", "table"), default="table")

    p = argparse.ArgumentParser(prog="kactransport", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="transport paths driven by one skeleton")
    s.add_argument("--theta", type=float, nargs="+", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--paths", type=_positive_int, default=1)
    s.add_argument("--horizon", type=float, default=1.0, help="horizon T (default 1)")
    s.add_argument("--grid", type=_float_list, default=None,
                   help="comma-separated times; default: every breakpoint")
    s.add_argument("--summary", action="store_true", help="one CSV for all paths instead of one per path")

    c = sub.add_parser("couple", parents=[common], help="strong coupling realizations")
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--theta", type=float, required=True)
    c.add_argument("--backend", choices=("skeleton", "grid"), default="skeleton")
    c.add_argument("--reps", type=_positive_int, default=1)
    c.add_argument("--horizon", type=float, default=1.0)
    c.add_argument("--grid-step", type=float, default=None)

    v = sub.add_parser("verify", parents=[common], help="run verification suites")
    v.add_argument("--suite", choices=suites.SUITES + ("all",), default="all")

    r = sub.add_parser("rate", parents=[common], help="sup-error rate experiment")
    r.add_argument("--eps-list", type=_float_list, default=None)
    r.add_argument("--reps", type=_positive_int, default=None)
    r.add_argument("--theta", type=float, default=None)
    r.add_argument("--horizon", type=float, default=None)
    r.add_argument("--grid-step", type=float, default=None)

    a = sub.add_parser("appendix", parents=[common], help="combinatorial and series oracles")
    a.add_argument("--check", choices=("lemmaF", "serie", "thinning", "all"), default="all")

    rp = sub.add_parser("report", parents=[common], help="re-render a saved JSON report")
    rp.add_argument("input", type=Path)
    return p


# --- configuration ---------------------------------------------------------------

def load_config(args) -> dict:
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc}")
        if not isinstance(raw, dict):
            raise UsageError("--config: top level must be a JSON object")
    return raw


def resolve_common(args, raw: dict):
    seed = args.seed if args.seed is not None else raw.get("seed", 1)
    if not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise UsageError(f"--seed: invalid seed {seed!r}")
    jobs = args.jobs if args.jobs is not None else raw.get("jobs", default_jobs())
    out = args.out or (Path(os.environ[OUT_ENV]) if os.environ.get(OUT_ENV) else None) \
        or Path(raw.get("out", "."))
    return seed, int(jobs), Path(out)


def suite_config(raw: dict) -> dict:
    sections = {k: v for k, v in raw.items() if k not in ("seed", "jobs", "out")}
    try:
        return suites.merged_config(sections)
    except (KeyError, AttributeError) as exc:
        raise UsageError(f"--config: {exc}")


# --- subcommands ----------------------------------------------------------------------

def _safe(x: float) -> str:
    return f"{x:g}".replace("-", "m").replace(".", "p")


def _simulate_path(task):
    seed, i, angles, raw, eps, horizon = task
    thetas = ThetaSet(tuple(angles), eps, tuple(raw))
    return simulate_family(thetas, horizon, RandomStream(SeedSpec(seed, stream_id("simulate", i))))


def cmd_simulate(args, raw, seed, jobs, out):
    try:
        thetas = ThetaSet.of(args.theta, args.eps)
    except ThetaValidationError as exc:
        raise UsageError(f"--theta: {exc}")
    except ValueError as exc:
        raise UsageError(f"--eps: {exc}")
    if not (math.isfinite(args.horizon) and args.horizon > 0):
        raise UsageError(f"--horizon: must be positive, got {args.horizon}")
    if args.grid is not None and any(not 0 <= g <= args.horizon for g in args.grid):
        raise UsageError(f"--grid: times must lie in [0, {args.horizon}]")
    tasks = [(seed, i, thetas.angles, thetas.raw, thetas.epsilon, args.horizon) for i in range(args.paths)]
    families = parallel_map(_simulate_path, tasks, jobs)
    files = []
    summary_rows = []
    for i, family in enumerate(families):
        for th, path in zip(thetas.raw, family):
            t = path.breakpoints if args.grid is None else np.asarray(args.grid)
            z = path.values if args.grid is None else path.at(t)
            rows = list(zip(t, z.real, z.imag))
            if args.summary:
                summary_rows += [(i, th, *row) for row in rows]
            else:
                name = f"path_{i}_theta_{_safe(th)}_eps_{_safe(args.eps)}.csv"
                write_atomic(out / name, csv_text(("t", "re", "im"), rows))
                files.append(name)
    if args.summary:
        write_atomic(out / "simulate_summary.csv", csv_text(("path", "theta", "t", "re", "im"), summary_rows))
        files.append("simulate_summary.csv")
    meta = {"config": _echo(args, seed, raw), "files": files}
    write_atomic(out / "simulate.json", _json(meta))
    print(f"wrote {len(files)} file(s) to {out}")
    return 0


def _couple_task(task):
    seed, backend, eps, theta, horizon, grid_step, rep = task
    stream = RandomStream(SeedSpec(seed, stream_id(f"couple-{backend}", rep)))
    if backend == "grid":
        r = coupling.build_grid_coupling(eps, theta, horizon, grid_step, stream)
    else:
        r = coupling.build_skeleton_coupling(eps, theta, horizon, stream)
    d = coupling.decomposition_diagnostics(r)
    rec = dict(r.record(), rep=rep)
    rec.update({k: d[k] for k in ("m_cap", "L1", "L21", "L22", "L3", "maxLambdaDev", "maxGammaDev")})
    rec["identity_errors"] = suites.identity_errors(r)
    return rec


def cmd_couple(args, raw, seed, jobs, out):
    try:
        coupling.check_angle(args.theta, args.eps)
    except ThetaValidationError as exc:
        raise UsageError(f"--theta: {exc}")
    except ValueError as exc:
        raise UsageError(f"--eps: {exc}")
    if not (math.isfinite(args.horizon) and args.horizon > 0):
        raise UsageError(f"--horizon: must be positive, got {args.horizon}")
    if args.backend == "grid":
        h = coupling.default_grid_step(args.eps) if args.grid_step is None else args.grid_step
        if not (h > 0 and (args.eps**2 / 4) / h >= 10):
            raise UsageError(f"--grid-step: {h} gives fewer than 10 grid points per excursion")
    tasks = [(seed, args.backend, args.eps, args.theta, args.horizon, args.grid_step, i)
             for i in range(args.reps)]
    records = parallel_map(_couple_task, tasks, jobs)
    write_atomic(out / "couple.json", _json({"config": _echo(args, seed, raw), "realizations": records}))
    rows = [[args.eps, r["rep"]] + [r[c] for c in ENSEMBLE_COLUMNS[2:]] for r in records]
    text = csv_text(ENSEMBLE_COLUMNS, rows)
    write_atomic(out / "couple_ensemble.csv", text)
    if args.format == "json":
        sys.stdout.write(_json(records))
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify(args, raw, seed, jobs, out):
    cfg = suite_config(raw)
    entries = suites.run_suite(args.suite, cfg, seed, jobs)
    used = cfg if args.suite == "all" else _sections_for(args.suite, cfg)
    report = StatReport(entries, {**_echo(args, seed, {}), "parameters": used})
    return emit_report(report, out, f"verify_{args.suite}", args.format)


def _sections_for(suite: str, cfg: dict) -> dict:
    shared = {"covariance": ["family"], "normality": ["family"], "independence": ["family"]}
    return {k: cfg[k] for k in [suite] + shared.get(suite, [])}


def cmd_rate(args, raw, seed, jobs, out):
    cfg = suite_config(raw)
    c = cfg["rate"]
    for flag, key in (("eps_list", "eps_list"), ("reps", "reps"), ("theta", "theta"),
                      ("horizon", "horizon_T"), ("grid_step", "grid_step")):
        if getattr(args, flag) is not None:
            c[key] = getattr(args, flag)
    try:
        for e in c["eps_list"]:
            coupling.check_angle(c["theta"], e)
    except ThetaValidationError as exc:
        raise UsageError(f"--theta: {exc}")
    except ValueError as exc:
        raise UsageError(f"--eps-list: {exc}")
    try:
        rep = st.rate_experiment(c["eps_list"], c["reps"], seed, c["theta"], c["horizon_T"],
                                 c["grid_step"], c["slack"], jobs)
    except coupling.ConfigurationError as exc:
        raise UsageError(f"--grid-step: {exc}")
    except ValueError as exc:
        raise UsageError(f"--eps-list/--reps: {exc}")
    median_eps = [e for e in c["median_eps"] if e in c["eps_list"]] or None
    report = StatReport(st.rate_entries(rep, median_eps=median_eps),
                        {**_echo(args, seed, {}), "parameters": {"rate": c}})
    data = rep.to_dict()
    records = data.pop("records")
    write_atomic(out / "rate.json", _json({"config": report.config, "rate": data,
                                           "entries": report.to_dict()["entries"]}))
    rows = [[r[col] for col in ENSEMBLE_COLUMNS] for r in records]
    write_atomic(out / "rate_ensemble.csv", csv_text(ENSEMBLE_COLUMNS, rows))
    if args.format == "json":
        sys.stdout.write(_json(data))
    elif args.format == "csv":
        sys.stdout.write(entries_csv(report))
    else:
        for r in rep.rows:
            print(f"eps={r.epsilon:g} reps={r.reps} sup_error q={r.sup_error_quantiles} "
                  f"normalized q={r.normalized_ratio_quantiles}")
        print(report.table())
    return exit_code(report)


def cmd_appendix(args, raw, seed, jobs, out):
    checks = ("lemmaF", "serie", "thinning") if args.check == "all" else (args.check,)
    details = {}
    if "lemmaF" in checks:
        details["lemmaF"] = appendix.lemmaF_bound_check()
    if "serie" in checks:
        details["serie"] = [vars(appendix.serie_probe(d)) for d in (0.3, 0.5, 1.0)]
    if "thinning" in checks:
        details["thinning"] = [appendix.thinning_pmf_check(d, 10) for d in (0.5, 1.0, 2.0)]
    report = StatReport(appendix.appendix_entries(checks), _echo(args, seed, {}))
    write_atomic(out / f"appendix_{args.check}_details.json", _json(_jsonable(details)))
    return emit_report(report, out, f"appendix_{args.check}", args.format)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def cmd_report(args, raw, seed, jobs, out):
    try:
        data = json.loads(args.input.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"input: cannot read {args.input}: {exc}")
    if "entries" not in data:
        raise UsageError(f"input: {args.input} has no entries array")
    report = StatReport.from_dict({"config": data.get("config", {}), "entries": data["entries"]})
    if args.format == "json":
        sys.stdout.write(report.to_json())
    elif args.format == "csv":
        sys.stdout.write(entries_csv(report))
    else:
        print(report.table())
    return exit_code(report)


def _echo(args, seed, raw) -> dict:
    """Run configuration for the report (worker count and output location excluded)."""
    skip = {"config", "jobs", "out", "func", "input"}
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}
    flags["seed"] = seed
    return flags


COMMANDS = {
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "verify": cmd_verify,
    "rate": cmd_rate,
    "appendix": cmd_appendix,
    "report": cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        raw = load_config(args)
        seed, jobs, out = resolve_common(args, raw)
        return COMMANDS[args.command](args, raw, seed, jobs, out)
    except UsageError as exc:
        print(f"kactransport {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
