"""Run-log serialization (CSV and JSON) and experiment config files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import yaml

from .driver import (
    RECORD_COLUMNS,
    SOLVE,
    ConfigError,
    LevelSummary,
    RunLog,
    RunRecord,
    SafemConfig,
)

SCHEMA_VERSION = 1
LEVEL_COLUMNS = (
    "level", "level_type", "k_final", "num_triangles", "num_dofs", "estimator",
    "marked_proposed", "marked_final", "estimator_exact", "algebraic_error",
    "quasi_error", "reference_error", "cost", "work", "cumulative_time",
    "log10_dofs", "log10_cost", "log10_estimator",
)
_INT_FIELDS = {"level", "k", "counter", "num_triangles", "num_dofs", "marked_proposed",
               "marked_final", "cost", "work", "k_final"}


def _meta(log: RunLog):
    return {
        "schema_version": SCHEMA_VERSION,
        "problem": log.problem,
        "config": log.config,
        "stop_reason": log.stop_reason,
        "aborted_level": log.aborted_level,
    }


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def _unclean(name, value):
    if value is None or value == "":
        return float("nan")
    if value in ("inf", "-inf"):
        return float(value)
    if name in _INT_FIELDS:
        return int(value)
    if name in ("level_type",):
        return value
    return float(value)


def write_runlog_json(log: RunLog, path) -> None:
    data = {
        **_meta(log),
        "records": [{k: _clean(v) for k, v in vars(r).items()} for r in log.records],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, default=_json_default)


def _json_default(obj):
    if isinstance(obj, float):
        return _clean(obj)
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_runlog_csv(log: RunLog, path) -> None:
    """One row per record; the first line is a ``#`` comment with JSON metadata."""
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(_meta(log), default=_json_default) + "\n")
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for r in log.records:
            writer.writerow([_csv_value(getattr(r, c)) for c in RECORD_COLUMNS])


def _csv_value(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return v


def write_levels_csv(log: RunLog, path) -> None:
    """Per-level table with log10 columns for log-log plots."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEVEL_COLUMNS)
        for s in log.levels:
            row = [getattr(s, c) for c in LEVEL_COLUMNS[:-3]]
            logs = [math.log10(x) if x > 0 else "" for x in (s.num_dofs, s.cost, s.estimator)]
            writer.writerow([_csv_value(v) for v in row] + logs)


def levels_from_records(records, L, aborted_level=None):
    """Rebuild level summaries: the last record of each completed level."""
    by_level = {}
    for r in records:
        by_level.setdefault(r.level, []).append(r)
    out = []
    for level in sorted(by_level):
        if level == aborted_level:
            continue
        last = by_level[level][-1]
        out.append(LevelSummary(
            level=level, level_type=last.level_type, k_final=last.k,
            num_triangles=last.num_triangles, num_dofs=last.num_dofs,
            estimator=last.estimator, marked_proposed=last.marked_proposed,
            marked_final=last.marked_final, terminated=True,
            estimator_exact=last.estimator_exact, algebraic_error=last.algebraic_error,
            quasi_error=last.quasi_error, reference_error=last.reference_error,
            cost=last.cost, work=last.work, cumulative_time=last.cumulative_time,
        ))
    return out


def _build_log(meta, rows):
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {meta.get('schema_version')!r}")
    records = [RunRecord(**{c: _unclean(c, row.get(c)) for c in RECORD_COLUMNS}) for row in rows]
    config = meta["config"]
    aborted = meta.get("aborted_level")
    log = RunLog(problem=meta["problem"], config=config, records=records,
                 stop_reason=meta.get("stop_reason", ""), aborted_level=aborted)
    log.levels = levels_from_records(records, int(config["L"]), aborted)
    for s in log.levels:
        if s.level_type not in (SOLVE, "intermediate"):
            raise ValueError(f"bad level_type {s.level_type!r}")
    return log


def read_runlog(path) -> RunLog:
    """Read a log written by :func:`write_runlog_csv` or :func:`write_runlog_json`."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return _build_log(data, data["records"])
    first, _, rest = text.partition("\n")
    if not first.startswith("# "):
        raise ValueError("CSV run log must start with a '# {metadata}' line")
    meta = json.loads(first[2:])
    reader = csv.DictReader(rest.splitlines())
    if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
        raise ValueError("CSV run log has unexpected columns")
    return _build_log(meta, list(reader))


CONFIG_SECTIONS = ("problem", "safem", "output", "sweep")
SWEEP_KEYS = ("L", "K", "smoother", "theta", "lam")


def load_experiment(path):
    """Parse and validate a YAML experiment file.

    Returns ``(problem_id, SafemConfig, output dict, sweep dict)``.
    """
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    unknown = set(data) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config section")
    problem = data.get("problem")
    if isinstance(problem, dict):
        problem = problem.get("id")
    if not isinstance(problem, str):
        raise ConfigError("problem", "must name a benchmark id")
    config = SafemConfig.from_dict(data.get("safem") or {})
    output = dict(data.get("output") or {})
    sweep = dict(data.get("sweep") or {})
    bad = set(sweep) - set(SWEEP_KEYS)
    if bad:
        raise ConfigError(f"sweep.{sorted(bad)[0]}", "unknown sweep key")
    for key, values in sweep.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}", "must be a non-empty list")
    return problem, config, output, sweep
