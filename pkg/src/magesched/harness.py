"""Experiment configuration, scenarios, CSV reporting and the ``magesched`` command line.

Every output is a pure function of the configuration and its seeds: rows are
sorted before writing and floats are printed with a fixed format, so a rerun
produces byte-identical files. Wall-clock timings are the one exception and go
to a separate ``timing.csv``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import SCHEDULERS, make_scheduler
from .errors import ConfigError, MageError
from .factorization import SgdConfig
from .inference import profile_reference, record, run_sgd1
from .matrix import UtilityMatrix
from .runtime import DEFAULT_THRESHOLD, MONITOR_PERIOD_S, N_LEVELS, MageConfig, profile_dense, run_episode
from .simworld import (N_RESOURCES, MixConfig, World, generate_mix, heterogeneous_platform, load_platform,
                       make_kernel_app)

log = logging.getLogger(__name__)

SCENARIOS = ("cmp", "cluster", "cluster_dvfs")
DEFAULT_APPS = {"cmp": 8, "cluster": 30, "cluster_dvfs": 30}
SWEEP_DEGREES = (2, 4, 8, 10)
EXPERIMENT_HEADER = ["mix_id", "scheduler", "gmean", "norm_to_greedy", "decision_time", "migration_time",
                     "corrections", "migrations"]


@dataclass
class ExperimentConfig:
    scenario: str = "cmp"
    schedulers: list = field(default_factory=lambda: ["greedy", "smallest_first", "mage_static", "mage"])
    mix_count: int = 10
    apps_per_mix: int | None = None
    seeds: list = field(default_factory=lambda: [0])
    duration: float = 30.0
    heterogeneity_degree: int | None = None
    degrees: list = field(default_factory=lambda: list(SWEEP_DEGREES))
    n_servers: int = 40
    profiling_runs: int = 3
    density_runs: list = field(default_factory=lambda: [1, 2, 3])
    history_apps: int = 16
    sgd: dict = field(default_factory=lambda: {"lam": 0.01})
    threshold: float = DEFAULT_THRESHOLD
    period: float = MONITOR_PERIOD_S
    pressure_scale: list = field(default_factory=lambda: [0.1, 0.35])
    phase_prob: float = 0.0
    workers: int = 1
    output: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: expected one of {list(SCENARIOS)}, got {self.scenario!r}")
        if isinstance(self.schedulers, str):
            self.schedulers = [self.schedulers]
        unknown = [s for s in self.schedulers if s not in SCHEDULERS]
        if unknown or not self.schedulers:
            raise ConfigError(f"schedulers: unknown {unknown}; choose from {sorted(SCHEDULERS)}")
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")
        if not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds: must be non-negative integers")
        for key in ("mix_count", "n_servers", "workers"):
            if not isinstance(getattr(self, key), int) or getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be a positive integer")
        if self.apps_per_mix is not None and self.apps_per_mix < 1:
            raise ConfigError("apps_per_mix: must be >= 1")
        if not self.duration >= 0:
            raise ConfigError("duration: must be >= 0")
        if not 1 <= self.profiling_runs <= 5:
            raise ConfigError("profiling_runs: must be within 1..5")
        if not self.density_runs or not all(1 <= r <= 5 for r in self.density_runs):
            raise ConfigError("density_runs: values must be within 1..5")
        if not self.degrees or not set(self.degrees) <= set(SWEEP_DEGREES):
            raise ConfigError(f"degrees: must be a non-empty subset of {list(SWEEP_DEGREES)}")
        if self.heterogeneity_degree is not None and self.heterogeneity_degree not in SWEEP_DEGREES:
            raise ConfigError(f"heterogeneity_degree: must be one of {list(SWEEP_DEGREES)}")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold: must be within (0, 1)")
        if not self.period > 0:
            raise ConfigError("period: must be > 0")
        if len(self.pressure_scale) != 2 or not 0 <= self.pressure_scale[0] <= self.pressure_scale[1] <= 1:
            raise ConfigError("pressure_scale: expected [low, high] within [0, 1]")
        if not 0 <= self.phase_prob <= 1:
            raise ConfigError("phase_prob: must be within [0, 1]")
        try:
            self.sgd_config()
        except (TypeError, MageError) as exc:
            raise ConfigError(f"sgd: {exc}") from exc

    def sgd_config(self) -> SgdConfig:
        return SgdConfig(**self.sgd)

    def mage_config(self) -> MageConfig:
        return MageConfig(profiling_runs=self.profiling_runs, history_apps=self.history_apps,
                          sgd=self.sgd_config())

    def mix_config(self) -> MixConfig:
        return MixConfig(pressure_scale=tuple(self.pressure_scale), phase_prob=self.phase_prob)

    def platform(self, degree: int | None = None):
        degree = degree if degree is not None else self.heterogeneity_degree
        if degree is not None:
            return heterogeneous_platform(degree, self.n_servers)
        return load_platform(self.scenario)

    def n_apps(self) -> int:
        if self.apps_per_mix is not None:
            return self.apps_per_mix
        if self.heterogeneity_degree is not None:
            return DEFAULT_APPS["cluster"]
        return DEFAULT_APPS[self.scenario]

    def mixes(self) -> list:
        """``(mix_id, mix_seed)`` for every mix of every seed."""
        return [(f"s{s}-m{i:03d}", s * 100_003 + i) for s in self.seeds for i in range(self.mix_count)]


def _key_line(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return n
    return None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Build a config from JSON text; errors name the offending line and key."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    if "scheduler" in raw:
        raw.setdefault("schedulers", raw.pop("scheduler"))
    known = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{source}: line {_key_line(text, key)}: unknown key {key!r}")
    try:
        return ExperimentConfig(**raw)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        raise ConfigError(f"{source}: line {_key_line(text, key)}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    return parse_config(text, str(p))


# -- formatting -------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        if not math.isfinite(v):
            raise MageError(f"non-finite value {v} in results")
        return f"{v:.10g}"
    return str(v)


def write_csv(path: Path, header: list, rows: list) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])
    return path


# -- scheduler experiments --------------------------------------------------------------------

def _episode(task):
    """One (mix, scheduler) episode; module-level so process pools can pickle it."""
    cfg, degree, mix_id, mix_seed, sched = task
    platform = cfg.platform(degree)
    mix = generate_mix(cfg.n_apps(), mix_seed, platform, cfg.mix_config())
    world = World(platform, mix_seed)
    scheduler = make_scheduler(sched, cfg.mage_config())
    scheduler.threshold = cfg.threshold
    t0 = time.perf_counter()
    res = run_episode(mix, world, scheduler, cfg.duration, cfg.period)
    return {
        "mix_id": mix_id,
        "scheduler": sched,
        "gmean": res.gmean,
        # simulated seconds spent profiling before decisions: deterministic, unlike wall time
        "decision_time": res.profiling_time,
        "migration_time": res.migration_time,
        "corrections": res.corrections,
        "migrations": res.migrations,
        "wall_time": time.perf_counter() - t0,
        "solver_time": res.decision_time,
    }


def _run_tasks(tasks, workers: int) -> list:
    if workers == 1:
        return [_episode(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_episode, tasks))


def _normalize(rows: list) -> list:
    greedy = {r["mix_id"]: r["gmean"] for r in rows if r["scheduler"] == "greedy"}
    for r in rows:
        g = greedy[r["mix_id"]]
        r["norm_to_greedy"] = r["gmean"] / g if g > 0 else float("nan")
    return rows


def summarize(rows: list, schedulers) -> list:
    out = []
    for s in schedulers:
        mine = [r for r in rows if r["scheduler"] == s]
        out.append({
            "mix_id": "summary",
            "scheduler": s,
            "gmean": float(np.mean([r["gmean"] for r in mine])),
            "norm_to_greedy": float(np.mean([r["norm_to_greedy"] for r in mine])),
            "decision_time": float(np.mean([r["decision_time"] for r in mine])),
            "migration_time": float(np.mean([r["migration_time"] for r in mine])),
            "corrections": float(np.mean([r["corrections"] for r in mine])),
            "migrations": float(np.mean([r["migrations"] for r in mine])),
        })
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every scheduler on every mix; write per-mix, summary and sorted-series CSVs.

    Greedy always runs because every result is normalized to it.
    """
    out = Path(out_dir or cfg.output)
    schedulers = sorted(set(cfg.schedulers) | {"greedy"})
    tasks = [(cfg, None, mid, ms, s) for mid, ms in cfg.mixes() for s in schedulers]
    rows = _normalize(_run_tasks(tasks, cfg.workers))
    rows.sort(key=lambda r: (r["mix_id"], r["scheduler"]))
    summary = summarize(rows, schedulers)
    write_csv(out / "experiment.csv", EXPERIMENT_HEADER, rows + summary)
    series = []
    for s in schedulers:
        ratios = sorted(r["norm_to_greedy"] for r in rows if r["scheduler"] == s)
        series += [{"scheduler": s, "rank": i, "norm_to_greedy": v} for i, v in enumerate(ratios)]
    write_csv(out / "normalized_series.csv", ["scheduler", "rank", "norm_to_greedy"], series)
    write_csv(out / "timing.csv", ["mix_id", "scheduler", "wall_time", "solver_time"], rows)
    return {"rows": rows, "summary": summary, "series": series, "dir": out}


# -- density sweep ----------------------------------------------------------------------------

def reference_errors(mix_seed: int, n_apps: int, runs: int, cfg: ExperimentConfig, platform) -> list:
    """Mean relative error of each new app's completed reference row against the noise-free sandbox."""
    world = World(platform, mix_seed)
    history = generate_mix(cfg.history_apps, mix_seed + 1_000_003, platform, prefix="hist")
    apps = generate_mix(n_apps, mix_seed, platform, cfg.mix_config())
    matrix = UtilityMatrix.with_reference(N_RESOURCES, N_LEVELS)
    for h in history:
        r = matrix.add_row()
        for col, v in profile_dense(h, world):
            matrix.insert(r, matrix.column_index(col), v)
    rows = {}
    for a in apps:
        rows[a.app_id] = matrix.add_row()
        record(matrix, rows[a.app_id], profile_reference(a, world, mix_seed, runs))
    mc = cfg.mage_config()
    completed, _, _ = run_sgd1(matrix, mc.sgd, mc.rank_policy)
    kernels = [make_kernel_app(k, lvl) for k in range(N_RESOURCES) for lvl in range(1, N_LEVELS + 1)]
    out = []
    for a in apps:
        truth = np.array([world.reference_perf(a)] + [world.reference_perf(a, k) for k in kernels])
        out.append(float(np.mean(np.abs(completed[rows[a.app_id]] - truth) / truth)))
    return out


def run_density_sweep(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Estimation error of the reference block versus the number of profiling runs."""
    out = Path(out_dir or cfg.output)
    platform = cfg.platform()
    rows = []
    for runs in sorted(set(cfg.density_runs)):
        for mid, ms in cfg.mixes():
            errs = reference_errors(ms, cfg.n_apps(), runs, cfg, platform)
            rows.append({"runs": runs, "mix_id": mid, "mean_error": float(np.mean(errs)),
                         "max_error": float(np.max(errs))})
    rows.sort(key=lambda r: (r["runs"], r["mix_id"]))
    summary = [{"runs": runs, "mix_id": "summary",
                "mean_error": float(np.mean([r["mean_error"] for r in rows if r["runs"] == runs])),
                "max_error": float(np.max([r["max_error"] for r in rows if r["runs"] == runs]))}
               for runs in sorted(set(cfg.density_runs))]
    write_csv(out / "density.csv", ["runs", "mix_id", "mean_error", "max_error"], rows + summary)
    return {"rows": rows, "summary": summary, "dir": out}


# -- heterogeneity sweep ----------------------------------------------------------------------

def run_heterogeneity_sweep(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Mage-over-Greedy improvement per heterogeneity degree at a fixed cluster size."""
    out = Path(out_dir or cfg.output)
    degrees = sorted(set(cfg.degrees))
    tasks = [(cfg, d, mid, ms, s) for d in degrees for mid, ms in cfg.mixes() for s in ("greedy", "mage")]
    results = _run_tasks(tasks, cfg.workers)
    rows = []
    for (_, d, mid, _, _), res in zip(tasks, results):
        res["degree"] = d
    for d in degrees:
        for mid, _ in cfg.mixes():
            pair = {r["scheduler"]: r["gmean"] for r in results if r["degree"] == d and r["mix_id"] == mid}
            rows.append({"degree": d, "mix_id": mid, "greedy_gmean": pair["greedy"], "mage_gmean": pair["mage"],
                         "improvement": pair["mage"] / pair["greedy"] - 1.0})
    rows.sort(key=lambda r: (r["degree"], r["mix_id"]))
    summary = []
    for d in degrees:
        mine = [r for r in rows if r["degree"] == d]
        summary.append({"degree": d, "mix_id": "summary",
                        "greedy_gmean": float(np.mean([r["greedy_gmean"] for r in mine])),
                        "mage_gmean": float(np.mean([r["mage_gmean"] for r in mine])),
                        "improvement": float(np.mean([r["improvement"] for r in mine]))})
    write_csv(out / "heterogeneity.csv", ["degree", "mix_id", "greedy_gmean", "mage_gmean", "improvement"],
              rows + summary)
    return {"rows": rows, "summary": summary, "dir": out}


# -- command line -----------------------------------------------------------------------------

COMMANDS = {"experiment": run_experiment, "density": run_density_sweep, "heterogeneity": run_heterogeneity_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magesched", description="Run scheduler experiments on the simulator.")
    p.add_argument("command", nargs="?", default="experiment", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--scheduler", action="append", help="scheduler name (repeatable)")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    p.add_argument("--mixes", type=int, help="mixes per seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--workers", type=int, help="parallel episode workers")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {"schedulers": args.scheduler, "seeds": args.seed, "mix_count": args.mixes,
                 "output": args.out, "scenario": args.scenario, "workers": args.workers}
    data = asdict(cfg)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        result = COMMANDS[args.command](cfg)
    except MageError as exc:
        print(f"magesched: error: {exc}", file=sys.stderr)
        return 2
    for row in result["summary"]:
        print(", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    print(f"wrote {result['dir']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
