"""Parameter sweeps: JSON sweep files, presets, trial enumeration and execution.

Every trial seed is derived from ``(master_seed, seed)`` alone, so all
configurations in a sweep see the same placement, sensing and planning
streams for a given seed index (common random numbers), and adding or
removing configurations never changes an existing row.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, DomainError, NumericError, PlanningError
from ..field import Field, GridSpec, load_field, synth_field
from ..objective import EXTREMA, QUARTILES, QuantileSet
from ..planner import PlannerConfig
from ..team import BUDGET_POLICIES, COMM_REGIMES, POLICIES, MissionConfig, run_mission

log = logging.getLogger(__name__)

FIELD_TAG = 7  # spawn-key tag for per-seed synthetic fields
QUANTILE_SETS = {"quartiles": QUARTILES, "extrema": EXTREMA}

RESULTS_HEADER = ("config_id", "quantiles", "alpha", "budget", "budget_policy", "comm", "n_robots",
                  "policy", "c", "seed", "rmse", "quantile_errors", "planning_steps")
TIMING_HEADER = ("config_id", "seed", "wall_time")
ABORTED_HEADER = ("config_id", "quantiles", "alpha", "budget", "budget_policy", "comm", "n_robots",
                  "policy", "seed", "error")

_SPEC_KEYS = {"name", "field", "quantile_sets", "alphas", "budgets", "budget_policies", "comms",
              "team_sizes", "policies", "seeds", "master_seed", "c", "noise_sd", "partitioned_alpha",
              "se_basis", "planner", "kernel", "eta", "r"}
_FIELD_KEYS = {"kind", "seed", "per_seed", "path", "format", "cells", "size_m",
               "pixels_per_cell_side", "maxval"}
_KERNEL_KEYS = {"lengthscale", "signal_variance", "noise_variance", "prior_mean"}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _qname(qs: Sequence[float]) -> str:
    for name, levels in QUANTILE_SETS.items():
        if tuple(qs) == levels:
            return name
    return "/".join(repr(float(q)) for q in qs)


def _qlevels(name_or_levels) -> tuple[float, ...]:
    if isinstance(name_or_levels, str):
        if name_or_levels in QUANTILE_SETS:
            return QUANTILE_SETS[name_or_levels]
        try:
            return tuple(float(v) for v in name_or_levels.split("/"))
        except ValueError:
            raise ConfigError(f"unknown quantile set {name_or_levels!r}") from None
    return tuple(float(v) for v in name_or_levels)


# ------------------------------------------------------------------- the spec

@dataclass(frozen=True)
class SweepSpec:
    """A cross product of mission parameters run over a list of seeds.

    ``field`` is either ``{"kind": "blobs" | "gradient" | "checker", "seed": int,
    "per_seed": bool, "cells": [nx, ny], "size_m": [w, h]}`` or ``{"path": str,
    "format": "csv" | "pgm", "pixels_per_cell_side": int, "size_m": [w, h],
    "maxval": float}``. With ``per_seed`` each seed index draws its own
    synthetic field.

    ``partitioned_alpha`` replaces alpha for ``partitioned`` configurations;
    when it is ``None`` those configurations keep their alpha and fail
    validation unless it is 1.0.
    """

    field: dict = dc_field(default_factory=lambda: {"kind": "blobs", "seed": 0})
    quantile_sets: tuple = ("quartiles",)
    alphas: tuple = (0.66,)
    budgets: tuple = (15,)
    budget_policies: tuple = ("complete",)
    comms: tuple = ("none",)
    team_sizes: tuple = (1,)
    policies: tuple = ("pomcpow",)
    seeds: tuple = (0, 1)
    master_seed: int = 0
    c: float = 1.0
    noise_sd: float = 0.05
    partitioned_alpha: Optional[float] = None
    se_basis: str = "lattice"
    planner: dict = dc_field(default_factory=dict)
    kernel: dict = dc_field(default_factory=dict)
    eta: float = 0.5
    r: float = 10.0
    name: str = "custom"

    def __post_init__(self):
        for key in ("quantile_sets", "alphas", "budgets", "budget_policies", "comms", "team_sizes",
                    "policies", "seeds"):
            val = getattr(self, key)
            if isinstance(val, (str, bytes)) or not isinstance(val, Iterable):
                raise ConfigError(f"{key} must be a list")
            val = tuple(val)
            if not val:
                raise ConfigError(f"{key} must be nonempty")
            object.__setattr__(self, key, val)
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct: {list(self.seeds)}")
        if any(not isinstance(s, (int, np.integer)) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative integers")
        object.__setattr__(self, "quantile_sets", tuple(
            q if isinstance(q, str) else tuple(float(v) for v in q) for q in self.quantile_sets))
        for q in self.quantile_sets:
            try:
                QuantileSet(_qlevels(q))
            except DomainError as exc:
                raise ConfigError(str(exc)) from exc
        for name, allowed in (("budget_policies", BUDGET_POLICIES), ("comms", COMM_REGIMES),
                              ("policies", POLICIES)):
            bad = [v for v in getattr(self, name) if v not in allowed]
            if bad:
                raise ConfigError(f"unknown {name}: {bad}")
        _check_keys("field", self.field, _FIELD_KEYS)
        if ("path" in self.field) == ("kind" in self.field):
            raise ConfigError("field needs exactly one of 'kind' or 'path'")
        _check_keys("kernel", self.kernel, _KERNEL_KEYS)
        try:
            PlannerConfig(**self.planner)
        except TypeError as exc:
            raise ConfigError(f"bad planner block: {exc}") from exc
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        if not isinstance(d, dict):
            raise ConfigError("sweep config must be a JSON object")
        _check_keys("sweep config", d, _SPEC_KEYS)
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    def with_seeds(self, k: int) -> "SweepSpec":
        if k < 1:
            raise ConfigError("seed count must be >= 1")
        d = self.to_dict()
        d["seeds"] = list(range(k))
        return SweepSpec.from_dict(d)


def _check_keys(what: str, d: dict, allowed: set) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {what}: {unknown}")


# -------------------------------------------------------------------- presets

def preset(name: str) -> SweepSpec:
    """Sweep definitions of the three published experiments (two seeds each)."""
    common = dict(quantile_sets=("quartiles", "extrema"), seeds=(0, 1), c=1.0, name=name)
    if name == "alpha_study":
        return SweepSpec(alphas=(0.0, 0.33, 0.66, 1.0), team_sizes=(2, 4, 8), budgets=(15,),
                         budget_policies=("complete",), comms=("none", "stochastic"), **common)
    if name == "budget_study":
        return SweepSpec(alphas=(0.66,), team_sizes=(1, 2, 4, 8), budgets=(10, 15, 30),
                         budget_policies=("complete",), comms=("stochastic",), **common)
    if name == "comms_study":
        return SweepSpec(alphas=(0.66,), team_sizes=(1, 2, 4, 8), budgets=(15,),
                         budget_policies=("complete",), comms=("full", "stochastic", "none", "partitioned"),
                         partitioned_alpha=1.0, **common)
    raise ConfigError(f"unknown preset {name!r}; choose alpha_study, budget_study or comms_study")


PRESETS = ("alpha_study", "budget_study", "comms_study")


# ---------------------------------------------------------------- enumeration

@dataclass(frozen=True)
class Trial:
    config_id: str
    config: MissionConfig
    seed: int


def config_id(config: MissionConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def enumerate_configs(spec: SweepSpec) -> list[MissionConfig]:
    """Configurations in axis order quantile set, alpha, budget, policy, comm, N, planner."""
    kern = dict(spec.kernel)
    planner = PlannerConfig(**spec.planner)
    out, seen = [], set()
    for qset, alpha, budget, bpol, comm, n, pol in itertools.product(
            spec.quantile_sets, spec.alphas, spec.budgets, spec.budget_policies, spec.comms,
            spec.team_sizes, spec.policies):
        if comm == "partitioned" and spec.partitioned_alpha is not None:
            alpha = spec.partitioned_alpha
        cfg = MissionConfig(n_robots=int(n), alpha=float(alpha), budget=int(budget), budget_policy=bpol,
                            comm=comm, eta=float(spec.eta), r=float(spec.r), quantiles=_qlevels(qset),
                            c=float(spec.c), noise_sd=float(spec.noise_sd), se_basis=spec.se_basis,
                            policy=pol, planner=planner, **kern)
        if cfg in seen:
            continue
        seen.add(cfg)
        out.append(cfg)
    return out


def enumerate_trials(spec: SweepSpec) -> list[Trial]:
    """All (configuration, seed) pairs, configuration-major."""
    return [Trial(config_id(cfg), cfg, int(s)) for cfg in enumerate_configs(spec) for s in spec.seeds]


# ------------------------------------------------------------------ execution

def trial_seed(master_seed: int, seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(seed),))


@lru_cache(maxsize=8)
def _field_cached(field_json: str, master_seed: int, seed: int) -> Field:
    spec = json.loads(field_json)
    w, h = spec.get("size_m", (80.0, 60.0))
    if "path" in spec:
        return load_field(spec["path"], spec.get("format"),
                          pixels_per_cell_side=int(spec.get("pixels_per_cell_side", 5)),
                          width_m=float(w), height_m=float(h), maxval=float(spec.get("maxval", 1.0)))
    nx, ny = spec.get("cells", (25, 25))
    grid = GridSpec(int(nx), int(ny), float(w), float(h))
    if spec.get("per_seed", False):
        seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(seed), FIELD_TAG))
    else:
        seq = int(spec.get("seed", 0))
    return synth_field(spec["kind"], grid, seq)


def make_field(field_spec: dict, master_seed: int = 0, seed: int = 0) -> Field:
    """The ground-truth field a sweep uses for ``seed``."""
    return _field_cached(json.dumps(field_spec, sort_keys=True), int(master_seed), int(seed))


def _row(trial: Trial, result) -> dict:
    cfg = trial.config
    errs = np.abs(np.array(result.final.values) - np.array(result.truth.values))
    return {
        "config_id": trial.config_id,
        "quantiles": _qname(cfg.quantiles),
        "alpha": cfg.alpha,
        "budget": cfg.budget,
        "budget_policy": cfg.budget_policy,
        "comm": cfg.comm,
        "n_robots": cfg.n_robots,
        "policy": cfg.policy,
        "c": cfg.c,
        "seed": trial.seed,
        "rmse": float(result.rmse),
        "quantile_errors": ";".join(repr(float(e)) for e in errs),
        "planning_steps": result.planning_steps,
    }


def _run_one(args) -> tuple:
    trial, field_spec, master_seed, keep = args
    try:
        fld = make_field(field_spec, master_seed, trial.seed)
        result = run_mission(trial.config, fld, trial_seed(master_seed, trial.seed))
    except (ConfigError, DomainError, NumericError, PlanningError) as exc:
        return trial, None, 0.0, None, f"{type(exc).__name__}: {exc}"
    return trial, _row(trial, result), result.wall_time, (result.to_json() if keep else None), None


@dataclass
class ResultsTable:
    """Rows of a sweep in configuration-then-seed order."""

    rows: list = dc_field(default_factory=list)
    timing: list = dc_field(default_factory=list)
    aborted: list = dc_field(default_factory=list)
    trials: dict = dc_field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        return _csv(RESULTS_HEADER, self.rows)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.to_csv())
        (out / "timing.csv").write_text(_csv(TIMING_HEADER, self.timing))
        (out / "aborted.csv").write_text(_csv(ABORTED_HEADER, self.aborted))
        if self.trials:
            tdir = out / "trials"
            tdir.mkdir(exist_ok=True)
            for name, text in self.trials.items():
                (tdir / name).write_text(text)
        return out / "results.csv"

    @classmethod
    def read_csv(cls, path) -> "ResultsTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
                raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
            rows = [_parse_row(r) for r in reader]
        return cls(rows=rows)


def _parse_row(r: dict) -> dict:
    out = dict(r)
    for k in ("alpha", "c", "rmse"):
        out[k] = float(r[k])
    for k in ("budget", "n_robots", "seed", "planning_steps"):
        out[k] = int(r[k])
    return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in header])
    return buf.getvalue()


def run_sweep(spec: SweepSpec, workers: int = 1, keep_trials: bool = False) -> ResultsTable:
    """Run every trial of ``spec``; rows come back in configuration-then-seed order.

    Configurations that fail validation are logged to ``aborted`` (one row
    per seed) and contribute no result rows. ``workers > 1`` runs trials in
    separate processes; the output does not depend on the worker count.
    """
    table = ResultsTable()
    runnable = []
    for trial in enumerate_trials(spec):
        try:
            trial.config.validate()
        except ConfigError as exc:
            table.aborted.append(_aborted(trial, f"ConfigError: {exc}"))
            continue
        runnable.append(trial)
    n_bad = len({a["config_id"] for a in table.aborted})
    if n_bad:
        log.warning("%d configuration(s) failed validation and were skipped", n_bad)
    tasks = [(t, spec.field, spec.master_seed, keep_trials) for t in runnable]
    if workers <= 1:
        outcomes = map(_run_one, tasks)
        _collect(table, outcomes)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            _collect(table, pool.map(_run_one, tasks))
    return table


def _aborted(trial: Trial, error: str) -> dict:
    cfg = trial.config
    return {"config_id": trial.config_id, "quantiles": _qname(cfg.quantiles), "alpha": cfg.alpha,
            "budget": cfg.budget, "budget_policy": cfg.budget_policy, "comm": cfg.comm,
            "n_robots": cfg.n_robots, "policy": cfg.policy, "seed": trial.seed, "error": error}


def _collect(table: ResultsTable, outcomes) -> None:
    for trial, row, wall, text, err in outcomes:
        if err is not None:
            log.warning("trial %s seed %d aborted: %s", trial.config_id, trial.seed, err)
            table.aborted.append(_aborted(trial, err))
            continue
        table.rows.append(row)
        table.timing.append({"config_id": trial.config_id, "seed": trial.seed, "wall_time": wall})
        if text is not None:
            table.trials[f"{trial.config_id}_s{trial.seed}.json"] = text
        log.info("%s seed %d rmse %.4f (%.1fs)", trial.config_id, trial.seed, row["rmse"], wall)
