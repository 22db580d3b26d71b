"""Scenario files (YAML) and run-output directories (JSON + CSV)."""

from __future__ import annotations

import csv
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .model import (PowerProfile, Schedule, Scenario, ScenarioError, Trajectory,
                    min_slots_for_accuracy)

SCALAR_FIELDS = ("num_uavs", "altitude", "period", "num_slots", "max_speed", "min_separation",
                 "max_power", "noise_power", "ref_channel_gain", "discretization_threshold",
                 "convergence_threshold", "subslot_factor")
DB_FIELDS = {"noise_power_dbm": "noise_power", "ref_gain_db": "ref_channel_gain"}
KNOWN = set(SCALAR_FIELDS) | set(DB_FIELDS) | {"user_positions", "user_generation"}


class ScenarioFileError(ValueError):
    """Unreadable or malformed scenario/run file; ``where`` points at the culprit."""

    def __init__(self, message: str, where: str = ""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ScenarioSpec:
    """Parsed scenario document; ``seed`` is set when users were generated."""

    scenario: Scenario
    seed: int | None = None
    auto_slots: bool = False


def generate_users(count: int, region, seed: int) -> np.ndarray:
    (x0, x1), (y0, y1) = region
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(x0, x1, count), rng.uniform(y0, y1, count)])


def auto_num_slots(params: dict) -> int:
    """Fewest slots meeting the discretization threshold, rounded up to a
    multiple of M so round-robin masks are always available."""
    defaults = {f: Scenario.__dataclass_fields__[f].default for f in SCALAR_FIELDS
                if f != "num_uavs"}
    p = {**defaults, **params}
    n = max(2, min_slots_for_accuracy(p["max_speed"], p["period"], p["altitude"],
                                      p["discretization_threshold"]))
    m = int(params["num_uavs"])
    return int(math.ceil(n / m) * m)


def build_scenario(doc: dict, overrides: dict | None = None) -> ScenarioSpec:
    """Scenario from a parsed document plus CLI overrides (period, num_uavs, seed)."""
    if not isinstance(doc, dict):
        raise ScenarioFileError("top level must be a mapping")
    unknown = sorted(set(doc) - KNOWN)
    if unknown:
        raise ScenarioFileError(f"unknown field(s) {', '.join(unknown)}", unknown[0])
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    params = {}
    for name in SCALAR_FIELDS:
        if name in doc:
            params[name] = doc[name]
    for db_name, name in DB_FIELDS.items():
        if db_name in doc:
            if name in doc:
                raise ScenarioFileError(f"give either {db_name} or {name}, not both", db_name)
            value = _number(doc[db_name], db_name)
            params[name] = dbm_to_watts(value) if db_name.endswith("dbm") else db_to_linear(value)
    for name in params:
        if name in ("num_uavs", "num_slots", "subslot_factor"):
            continue
        params[name] = _number(params[name], name)
    if "num_uavs" not in params and "num_uavs" not in overrides:
        raise ScenarioFileError("missing required field", "num_uavs")
    if "period" in overrides:
        params["period"] = float(overrides["period"])
    if "num_uavs" in overrides:
        params["num_uavs"] = int(overrides["num_uavs"])

    has_pos, has_gen = "user_positions" in doc, "user_generation" in doc
    if has_pos == has_gen:
        raise ScenarioFileError("give exactly one of user_positions or user_generation",
                                "user_positions")
    seed = None
    if has_pos:
        try:
            users = np.asarray(doc["user_positions"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ScenarioFileError(f"not a list of [x, y] points ({exc})", "user_positions")
    else:
        gen = doc["user_generation"]
        if not isinstance(gen, dict) or not {"count", "region", "seed"} <= set(gen):
            raise ScenarioFileError("needs count, region and seed", "user_generation")
        seed = int(overrides.get("seed", gen["seed"]))
        try:
            region = np.asarray(gen["region"], dtype=float).reshape(2, 2)
        except (TypeError, ValueError):
            raise ScenarioFileError("region must be [[x_min, x_max], [y_min, y_max]]",
                                    "user_generation.region")
        users = generate_users(int(gen["count"]), region, seed)

    auto = "num_slots" not in params
    if auto:
        try:
            params["num_slots"] = auto_num_slots(params)
        except ValueError as exc:
            # let model validation name the offending field
            params["num_slots"] = 2
            del exc
    scenario = Scenario(user_positions=users, **params)  # raises ScenarioError
    return ScenarioSpec(scenario, seed, auto)


def _number(value, name) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioFileError(f"expected a number, got {value!r}", name)
    return float(value)


def load_scenario(path, overrides: dict | None = None) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFileError(f"cannot read scenario ({exc.strerror})", str(path))
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ScenarioFileError(f"YAML parse error: {getattr(exc, 'problem', exc)}", where)
    return build_scenario(doc, overrides)


def scenario_document(scenario: Scenario) -> dict:
    doc = {name: getattr(scenario, name) for name in SCALAR_FIELDS}
    doc["user_positions"] = scenario.user_positions.tolist()
    return doc


def save_scenario(scenario: Scenario, path) -> None:
    """Write every field in linear units so the file reloads exactly."""
    _atomic_text(Path(path), yaml.safe_dump(scenario_document(scenario), sort_keys=False))


def _atomic_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- run outputs

@dataclass
class RunOutput:
    summary: dict
    trajectory: Trajectory
    power: PowerProfile
    schedule: Schedule
    relaxed_schedule: Schedule
    trace: list


def _rows(path: Path, header: list[str]):
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            got = next(reader, None)
            if got != header:
                raise ScenarioFileError(f"expected header {header}, got {got}", str(path))
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ScenarioFileError(f"expected {len(header)} columns", f"{path}:{lineno}")
                yield lineno, row
    except OSError as exc:
        raise ScenarioFileError(f"cannot read ({exc.strerror})", str(path))


def write_run(out_dir, summary: dict, trajectory: Trajectory, power: PowerProfile,
              schedule: Schedule, relaxed: Schedule, trace: list, scenario: Scenario) -> None:
    """Write all run files into a fresh temp directory, then swap it in."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out_dir.parent, prefix=f".{out_dir.name}."))
    try:
        (tmp / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        q = trajectory.waypoints
        dt = scenario.slot_length
        with (tmp / "trajectory.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["uav", "slot", "time_s", "x_m", "y_m", "speed_mps"])
            for m in range(q.shape[0]):
                hops = np.linalg.norm(np.diff(q[m], axis=0), axis=1)
                for n in range(q.shape[1]):
                    speed = hops[n] / dt if n < q.shape[1] - 1 else 0.0
                    w.writerow([m, n, repr(n * dt), repr(float(q[m, n, 0])),
                                repr(float(q[m, n, 1])), repr(float(speed))])
        with (tmp / "power.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["uav", "slot", "power_w"])
            for m, n in np.ndindex(power.levels.shape):
                w.writerow([m, n, repr(float(power.levels[m, n]))])
        with (tmp / "schedule.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "uav", "subslot"])
            for k, m, s in zip(*np.nonzero(schedule.weights > 0.5)):
                w.writerow([k, m, s])
        with (tmp / "relaxed_schedule.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "uav", "slot", "alpha"])
            for k, m, n in zip(*np.nonzero(relaxed.weights)):
                w.writerow([k, m, n, repr(float(relaxed.weights[k, m, n]))])
        with (tmp / "trace.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "eta", "eta_lp"])
            for i, (eta, eta_lp) in enumerate(trace):
                w.writerow([i, repr(float(eta)), repr(float(eta_lp))])
        old = None
        if out_dir.exists():
            old = out_dir.with_name(f".{out_dir.name}.old")
            if old.exists():
                shutil.rmtree(old)
            out_dir.rename(old)
        tmp.rename(out_dir)
        if old is not None:
            shutil.rmtree(old)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def read_run(run_dir, scenario: Scenario) -> RunOutput:
    """Load a run directory and check it against the scenario's dimensions."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ScenarioFileError("run directory not found", str(run_dir))
    try:
        summary = json.loads((run_dir / "summary.json").read_text())
    except OSError as exc:
        raise ScenarioFileError(f"cannot read ({exc.strerror})", str(run_dir / "summary.json"))
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"invalid JSON ({exc.msg})",
                                f"{run_dir / 'summary.json'}:{exc.lineno}")
    K, M, N = scenario.num_users, scenario.num_uavs, scenario.num_slots
    for key, expected in (("num_users", K), ("num_uavs", M), ("num_slots", N)):
        if summary.get(key) != expected:
            raise ScenarioFileError(f"{key}={summary.get(key)} but scenario has {expected}",
                                    str(run_dir / "summary.json"))
    tau = int(summary.get("subslot_factor", scenario.subslot_factor))

    q = np.full((M, N, 2), np.nan)
    path = run_dir / "trajectory.csv"
    for lineno, row in _rows(path, ["uav", "slot", "time_s", "x_m", "y_m", "speed_mps"]):
        m, n = _index(row[0], M, path, lineno), _index(row[1], N, path, lineno)
        q[m, n] = [_float(row[3], path, lineno), _float(row[4], path, lineno)]
    if np.isnan(q).any():
        raise ScenarioFileError("missing waypoints", str(path))

    p = np.full((M, N), np.nan)
    path = run_dir / "power.csv"
    for lineno, row in _rows(path, ["uav", "slot", "power_w"]):
        p[_index(row[0], M, path, lineno), _index(row[1], N, path, lineno)] = \
            _float(row[2], path, lineno)
    if np.isnan(p).any():
        raise ScenarioFileError("missing power entries", str(path))

    a = np.zeros((K, M, N * tau))
    path = run_dir / "schedule.csv"
    for lineno, row in _rows(path, ["user", "uav", "subslot"]):
        a[_index(row[0], K, path, lineno), _index(row[1], M, path, lineno),
          _index(row[2], N * tau, path, lineno)] += 1.0

    ar = np.zeros((K, M, N))
    path = run_dir / "relaxed_schedule.csv"
    for lineno, row in _rows(path, ["user", "uav", "slot", "alpha"]):
        ar[_index(row[0], K, path, lineno), _index(row[1], M, path, lineno),
           _index(row[2], N, path, lineno)] = _float(row[3], path, lineno)

    trace = []
    path = run_dir / "trace.csv"
    for lineno, row in _rows(path, ["iteration", "eta", "eta_lp"]):
        trace.append((_float(row[1], path, lineno), _float(row[2], path, lineno)))
    return RunOutput(summary, Trajectory(q), PowerProfile(p), Schedule(a, binary=True),
                     Schedule(ar), trace)


def _index(text, size, path, lineno) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ScenarioFileError(f"expected an integer index, got {text!r}", f"{path}:{lineno}")
    if not 0 <= value < size:
        raise ScenarioFileError(f"index {value} outside 0..{size - 1}", f"{path}:{lineno}")
    return value


def _float(text, path, lineno) -> float:
    try:
        return float(text)
    except ValueError:
        raise ScenarioFileError(f"expected a number, got {text!r}", f"{path}:{lineno}")
