"""Command line: ``python -m safem {run,compare,analyze}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .driver import ConfigError, RunAborted, SafemConfig, run_safem
from .io import (
    load_experiment,
    read_runlog,
    write_levels_csv,
    write_runlog_csv,
    write_runlog_json,
)
from .iterate import SmootherSpec
from .mesh import write_mesh
from .problems import BENCHMARKS, make_problem
from .sparse import write_matrix_market

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="safem", description="Smoothed adaptive FEM experiments")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("config")
    run.add_argument("--problem", choices=BENCHMARKS, help="override the config's problem")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (overrides output.directory)")
    run.add_argument("--dump-mesh", metavar="PATH", help="write the final mesh")
    run.add_argument("--dump-indicators", metavar="PATH", help="write the final indicators")
    run.add_argument("--dump-problem", metavar="PREFIX",
                     help="write the initial mesh and coefficient table")
    run.add_argument("--dump-matrix", metavar="PATH",
                     help="write the final system matrix in MatrixMarket format")

    cmp_ = sub.add_parser("compare", help="reference run (L=1) against a parameter sweep")
    cmp_.add_argument("config")
    cmp_.add_argument("--problem", choices=BENCHMARKS)
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--out")
    cmp_.add_argument("--jobs", type=int, default=1)
    cmp_.add_argument("--repeats", type=int, default=3,
                      help="independent runs per point; the median-time run is kept")

    an = sub.add_parser("analyze", help="report on saved run logs")
    an.add_argument("logs", nargs="*")
    an.add_argument("--lam", type=float, help="stopping parameter for the equivalence bound")
    an.add_argument("--lambda-opt", type=float, dest="lambda_opt")
    an.add_argument("--lemma10", nargs="+", metavar="KEY=VALUE",
                    help="evaluate the tail-summability bound, e.g. q=0.5 delta=0.5 C=0.1 eps=1 N=1")
    an.add_argument("--rate-s", type=float, default=0.5, dest="rate_s")
    an.add_argument("--out", help="write the JSON report here instead of stdout")
    return p


def _outputs(output, out_override, default_name):
    directory = Path(out_override or output.get("directory", "."))
    directory.mkdir(parents=True, exist_ok=True)
    name = output.get("basename", default_name)
    formats = output.get("formats", ["csv", "json"])
    return directory, name, formats


def _summary_line(log):
    last = log.levels[-1]
    return (f"problem={log.problem} levels={len(log.levels)} dofs={last.num_dofs} "
            f"eta={last.estimator:.6e} cost={last.cost} time={last.cumulative_time:.4f}s "
            f"stop={log.stop_reason}")


def _write_log(log, directory, name, formats):
    if "csv" in formats:
        write_runlog_csv(log, directory / f"{name}.csv")
        write_levels_csv(log, directory / f"{name}_levels.csv")
    if "json" in formats:
        write_runlog_json(log, directory / f"{name}.json")


def cmd_run(args):
    problem_id, config, output, _ = load_experiment(args.config)
    problem_id = args.problem or problem_id
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    problem, _ = _make(problem_id)
    if args.dump_problem:
        write_mesh(problem.mesh, f"{args.dump_problem}_mesh.txt")
        Path(f"{args.dump_problem}_coefficients.txt").write_text(problem.coefficient_table())
    directory, name, formats = _outputs(output, args.out, problem_id)
    try:
        log = run_safem(problem, config)
    except RunAborted as exc:
        _write_log(exc.log, directory, name, formats)
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_log(log, directory, name, formats)
    if args.dump_mesh:
        write_mesh(log.final_mesh, args.dump_mesh)
    if args.dump_indicators:
        log.final_indicators.write(args.dump_indicators)
    if args.dump_matrix:
        from .fem import assemble, build_space

        write_matrix_market(assemble(problem, build_space(log.final_mesh)).B, args.dump_matrix)
    print(_summary_line(log))
    return EXIT_OK


def _make(problem_id):
    try:
        return make_problem(problem_id)
    except ValueError as exc:
        raise ConfigError("problem", str(exc)) from exc


def _point_key(cfg: SafemConfig):
    # with L = 1 every level solves, so K and the smoother are irrelevant
    if cfg.L == 1:
        return (1, 0, "-", cfg.theta, cfg.lam)
    return (cfg.L, cfg.K, json.dumps(cfg.smoother.to_dict(), sort_keys=True), cfg.theta, cfg.lam)


def sweep_points(base: SafemConfig, sweep: dict):
    """Reference config plus deduplicated sweep points."""
    reference = replace(base, L=1, K=0)
    keys = [k for k in ("L", "K", "smoother", "theta", "lam") if k in sweep]
    points, seen = [], {_point_key(reference)}
    for combo in itertools.product(*(sweep[k] for k in keys)):
        changes = dict(zip(keys, combo))
        if "smoother" in changes:
            changes["smoother"] = SmootherSpec.from_value(changes["smoother"])
        cfg = replace(base, **changes)
        key = _point_key(cfg)
        if key not in seen:
            seen.add(key)
            points.append(cfg)
    return reference, points


def _median_run(problem_id, config_dict, repeats):
    """Run ``repeats`` times and keep the run with the median total time."""
    problem, _ = make_problem(problem_id)
    config = SafemConfig.from_dict(config_dict)
    logs = []
    for _ in range(repeats):
        try:
            logs.append(run_safem(problem, config))
        except RunAborted as exc:
            return {"ok": False, "error": str(exc)}
    times = [lg.levels[-1].cumulative_time for lg in logs]
    median = statistics.median_low(times)
    log = logs[times.index(median)]
    log.final_mesh = log.final_function = log.final_indicators = None
    return {"ok": True, "log": log}


def _label(cfg):
    return f"L={cfg.L} K={cfg.K} smoother={cfg.smoother.kind} theta={cfg.theta} lam={cfg.lam}"


def cmd_compare(args):
    problem_id, base, output, sweep = load_experiment(args.config)
    problem_id = args.problem or problem_id
    _make(problem_id)
    if not sweep:
        raise ConfigError("sweep", "compare needs a sweep section")
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    if args.jobs < 1 or args.repeats < 1:
        raise UsageError("--jobs and --repeats must be positive")
    reference, points = sweep_points(base, sweep)
    configs = [reference] + points
    payload = [(problem_id, c.to_dict(), args.repeats) for c in configs]
    if args.jobs == 1:
        results = [_median_run(*p) for p in payload]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_median_run, *zip(*payload)))
    directory, name, formats = _outputs(output, args.out, f"{problem_id}_compare")
    ref = results[0]
    if not ref["ok"]:
        print(f"reference run failed: {ref['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    rows, speed_rows, failed = [], [], False
    for cfg, res in zip(configs, results):
        label = "reference" if cfg is reference else _label(cfg)
        if not res["ok"]:
            failed = True
            rows.append([label, cfg.L, cfg.K, cfg.smoother.kind, cfg.theta, cfg.lam,
                         "FAILED", "", "", "", "", "", "", ""])
            continue
        log = res["log"]
        _write_log(log, directory, f"{name}_{len(rows)}", formats)
        last = log.solve_levels()[-1]
        sp = analysis.speedup_factor(ref["log"], log, "estimator")
        rows.append([
            label, cfg.L, cfg.K, cfg.smoother.kind, cfg.theta, cfg.lam, "ok",
            last.num_dofs, repr(last.estimator), last.cost, last.work,
            repr(last.cumulative_time), repr(analysis.weighted_time(last.estimator, last.cumulative_time)),
            repr(float(sp["speedup"][-1])),
        ])
        for lv, s, flag in zip(sp["levels"], sp["speedup"], sp["extrapolated"]):
            speed_rows.append([label, lv, repr(float(s)), int(flag)])
    with open(directory / f"{name}_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "L", "K", "smoother", "theta", "lam", "status", "final_dofs",
                    "final_estimator", "cost", "work", "cumulative_time", "weighted_time",
                    "final_speedup"])
        w.writerows(rows)
    with open(directory / f"{name}_speedup.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "level", "speedup", "extrapolated"])
        w.writerows(speed_rows)
    for row in rows:
        print(f"{row[0]}: {row[6]}" + (f" speedup={float(row[13]):.3f}" if row[6] == "ok" else ""))
    return EXIT_RUNTIME if failed else EXIT_OK


def _parse_lemma10(items):
    allowed = {"q", "delta", "C", "eps", "N"}
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or key not in allowed:
            raise UsageError(f"bad --lemma10 argument {item!r}; use q=.. delta=.. C=.. eps=.. [N=..]")
        out[key] = int(value) if key == "N" else float(value)
    missing = {"q", "delta", "C", "eps"} - set(out)
    if missing:
        raise UsageError(f"--lemma10 is missing {sorted(missing)}")
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else (None if math.isnan(f) else str(f))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def analyze_log(log, lam=None, lam_opt=None, s=0.5):
    report = {"problem": log.problem, "config": log.config, "rates": {}}
    for quantity in ("estimator", "quasi_error", "reference_error"):
        for abscissa in ("dofs", "cost"):
            try:
                fit = analysis.fit_rate(log, quantity, abscissa)
            except analysis.AnalysisError:
                continue
            report["rates"][f"{quantity}_vs_{abscissa}"] = vars(fit)
    has_oracle = not np.any(np.isnan(log.column("quasi_error")))
    if has_oracle and len(log.solve_levels()) > 0:
        tail = analysis.tail_summability(log)
        report["tail_summability"] = vars(tail)
        report["estimator_equivalence"] = analysis.estimator_equivalence_check(
            log, lam if lam is not None else log.config.get("lam"), lam_opt
        )
        report["approximation_class"] = analysis.empirical_approx_class(log, s)
    else:
        report["tail_summability"] = "unavailable: no oracle fields"
        report["estimator_equivalence"] = "unavailable: no oracle fields"
    return report


def cmd_analyze(args):
    if not args.logs and not args.lemma10:
        raise UsageError("give at least one run log or --lemma10")
    report = {"schema_version": 1, "logs": []}
    for path in args.logs:
        try:
            log = read_runlog(path)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            print(f"cannot read {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        report["logs"].append({"path": str(path), **analyze_log(log, args.lam, args.lambda_opt, args.rate_s)})
    if args.lemma10:
        params = _parse_lemma10(args.lemma10)
        N = params.pop("N", 1)
        try:
            res = analysis.lemma10_bound(N=N, **params)
        except analysis.AnalysisError as exc:
            raise UsageError(str(exc)) from exc
        report["lemma10"] = {**params, "N": N, **res}
        print(f"M({N}) = {res['M_of_N']:.12g}")
        print(f"N0 = {res['N0']}  C_tilde_bound = {res['C_tilde_bound']:.12g}")
    text = json.dumps(_jsonable(report), indent=1)
    if args.out:
        Path(args.out).write_text(text)
    elif args.logs:
        print(text)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        handler = {"run": cmd_run, "compare": cmd_compare, "analyze": cmd_analyze}[args.command]
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

