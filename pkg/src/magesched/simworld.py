"""Deterministic ground-truth world: heterogeneous platforms, interference, DVFS, load.

Throughput of an application on a slot is

    base[core_class] * (freq / nominal) ** phi
        * prod_r max(DELTA_FLOOR, 1 - s[r] * min(1, sum of co-runner pressure on r))

where the co-runners counted for resource ``r`` depend on its sharing scope:
the SMT siblings of a core for the pipeline, the core group's cache domain for
the cache hierarchy and the last-level cache, and the whole server otherwise.

The per-class ``base`` table is derived from an intrinsic rate, the clock ratio
to the reference platform and the class's resource deficits, so platform
preference follows the same sensitivity vector that drives interference. The
model is multiplicative and therefore close to low rank in log space, which is
what makes latent-factor inference a reasonable fit for it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BusyError, ConfigError, InvalidArgument

RESOURCES = (
    "cpu",
    "cache",
    "mem_capacity",
    "mem_bandwidth",
    "net_bandwidth",
    "storage_capacity",
    "storage_bandwidth",
    "llc_thrash",
)
N_RESOURCES = len(RESOURCES)
CORE_SCOPED = frozenset({0})
DOMAIN_SCOPED = frozenset({1, 7})
DELTA_FLOOR = 0.05
NOISE_SIGMA = 0.01
PROFILE_SECONDS = 2.0
REFERENCE_CLASS = "reference"

CONTEXT_SWITCH_S = 0.01
MIGRATION_SETUP_S = 0.5
NETWORK_BPS = 10e9

LATENCY_CRITICAL = "latency_critical"
BATCH = "batch"
BEST_EFFORT = "best_effort"


# -- platforms --------------------------------------------------------------------------------

@dataclass(frozen=True)
class CoreClass:
    class_id: str
    nominal_freq: float
    smt_threads: int = 1
    base_freq: float = 1.0
    cache: str = ""
    deficit: tuple = (0.0,) * N_RESOURCES

    def __post_init__(self):
        if len(self.deficit) != N_RESOURCES:
            raise ConfigError(f"core class {self.class_id}: deficit needs {N_RESOURCES} entries")
        if self.smt_threads < 1 or self.nominal_freq < self.base_freq:
            raise ConfigError(f"core class {self.class_id}: bad threads or frequency")


@dataclass(frozen=True)
class ServerClass:
    class_id: str
    core_groups: tuple  # ((core_class_id, count), ...)
    mem_GB: float = 0.0

    @property
    def core_count(self) -> int:
        return sum(n for _, n in self.core_groups)


@dataclass(frozen=True)
class Core:
    server_id: int
    core_id: int
    core_class: str
    domain: int
    pinned_level: int | None = None


@dataclass
class Server:
    server_id: int
    server_class: str
    cores: list


class Slot(NamedTuple):
    server: int
    core: int
    freq_level: int


@dataclass
class ClusterConfig:
    name: str
    core_classes: dict
    server_classes: dict
    servers: list  # [(server_class_id, count), ...]
    reference_clock: float = 2.4
    dvfs: bool = False
    dvfs_levels: int = 20
    description: str = ""

    def __post_init__(self):
        if not 1 <= self.dvfs_levels <= 20:
            raise ConfigError("dvfs_levels must be within 1..20")
        for sc in self.server_classes.values():
            if sc.core_count < 1:
                raise ConfigError(f"server class {sc.class_id} has no cores")
            for cc, _ in sc.core_groups:
                if cc not in self.core_classes:
                    raise ConfigError(f"server class {sc.class_id} references unknown core class {cc}")
        for sc, n in self.servers:
            if sc not in self.server_classes:
                raise ConfigError(f"server list references unknown class {sc}")
            if n < 0:
                raise ConfigError("server counts must be >= 0")

    def freq_levels(self, core_class: str) -> tuple:
        cc = self.core_classes[core_class]
        if not self.dvfs:
            return (cc.nominal_freq,)
        return tuple(float(f) for f in np.linspace(cc.base_freq, cc.nominal_freq, self.dvfs_levels))

    @property
    def n_servers(self) -> int:
        return sum(n for _, n in self.servers)

    def build_servers(self, seed: int = 0) -> list:
        """Instantiate servers; with DVFS each core is pinned to a seeded frequency level."""
        rng = np.random.default_rng([seed, 7919])
        out = []
        sid = 0
        for sc_id, count in self.servers:
            sc = self.server_classes[sc_id]
            for _ in range(count):
                cores = []
                cid = 0
                for dom, (cc_id, n) in enumerate(sc.core_groups):
                    n_levels = len(self.freq_levels(cc_id))
                    for _ in range(n):
                        level = int(rng.integers(n_levels)) if self.dvfs else None
                        cores.append(Core(sid, cid, cc_id, dom, level))
                        cid += 1
                out.append(Server(sid, sc_id, cores))
                sid += 1
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        try:
            ccs = {}
            for c in d["core_classes"]:
                c = dict(c)
                c["deficit"] = tuple(float(x) for x in c.get("deficit", (0.0,) * N_RESOURCES))
                ccs[c["class_id"]] = CoreClass(**c)
            scs = {}
            for s in d["server_classes"]:
                scs[s["class_id"]] = ServerClass(s["class_id"], tuple((g[0], int(g[1])) for g in s["core_groups"]),
                                                 float(s.get("mem_GB", 0.0)))
            return cls(
                name=d.get("name", "custom"),
                core_classes=ccs,
                server_classes=scs,
                servers=[(s[0], int(s[1])) for s in d["servers"]],
                reference_clock=float(d.get("reference_clock", 2.4)),
                dvfs=bool(d.get("dvfs", False)),
                dvfs_levels=int(d.get("dvfs_levels", 20)),
                description=d.get("description", ""),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"bad platform config: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "reference_clock": self.reference_clock,
            "dvfs": self.dvfs,
            "dvfs_levels": self.dvfs_levels,
            "core_classes": [
                {"class_id": c.class_id, "nominal_freq": c.nominal_freq, "smt_threads": c.smt_threads,
                 "base_freq": c.base_freq, "cache": c.cache, "deficit": list(c.deficit)}
                for c in self.core_classes.values()
            ],
            "server_classes": [
                {"class_id": s.class_id, "mem_GB": s.mem_GB, "core_groups": [list(g) for g in s.core_groups]}
                for s in self.server_classes.values()
            ],
            "servers": [list(s) for s in self.servers],
        }


def load_platform(name_or_path) -> ClusterConfig:
    """Load a shipped preset by name (``cmp``, ``cluster``, ``cluster_dvfs``) or a JSON file."""
    p = Path(str(name_or_path))
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        try:
            text = resources.files("magesched.presets").joinpath(f"{name_or_path}.json").read_text()
        except FileNotFoundError:
            raise ConfigError(f"unknown platform preset {name_or_path!r}") from None
    try:
        return ClusterConfig.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name_or_path}: line {exc.lineno}: {exc.msg}") from exc


def heterogeneous_platform(degree: int, n_servers: int = 40, pool="hetero_pool") -> ClusterConfig:
    """A fixed-size cluster drawn from the first ``degree`` server classes of ``pool``.

    Servers are split as evenly as possible; earlier classes take the remainder.
    """
    base = pool if isinstance(pool, ClusterConfig) else load_platform(pool)
    classes = list(base.server_classes)
    if not 1 <= degree <= len(classes):
        raise ConfigError(f"degree must be within 1..{len(classes)}")
    if n_servers < degree:
        raise ConfigError("need at least one server per class")
    chosen = classes[:degree]
    share, extra = divmod(n_servers, degree)
    servers = [(c, share + (1 if i < extra else 0)) for i, c in enumerate(chosen)]
    used_cores = {cc for c in chosen for cc, _ in base.server_classes[c].core_groups}
    return ClusterConfig(
        name=f"{base.name}-degree{degree}",
        core_classes={k: v for k, v in base.core_classes.items() if k in used_cores},
        server_classes={c: base.server_classes[c] for c in chosen},
        servers=servers,
        reference_clock=base.reference_clock,
        dvfs=base.dvfs,
        dvfs_levels=base.dvfs_levels,
        description=f"{n_servers} servers over {degree} platform classes",
    )


# -- applications ------------------------------------------------------------------------------

@dataclass(frozen=True)
class LoadTrace:
    """Multiplier on a latency-critical service's offered load over simulated time."""

    kind: str = "uniform"
    period: float = 120.0
    offset: float = 0.0
    amplitude: float = 0.5
    steps: tuple = ()
    step_len: float = 10.0

    def factor(self, t: float) -> float:
        if self.kind == "uniform":
            return 1.0
        if self.kind == "diurnal":
            return 1.0 + self.amplitude * math.sin(2 * math.pi * (t + self.offset) / self.period)
        if self.steps:
            return self.steps[int(t // self.step_len) % len(self.steps)]
        return 1.0

    @classmethod
    def draw(cls, kind: str, rng: np.random.Generator, horizon: float = 600.0) -> "LoadTrace":
        n = max(1, int(horizon // 10.0))
        if kind == "diurnal":
            return cls(kind, period=float(rng.uniform(60, 240)), offset=float(rng.uniform(0, 240)),
                       amplitude=float(rng.uniform(0.2, 0.6)))
        if kind == "exponential":
            steps = np.clip(rng.exponential(1.0, n), 0.3, 2.0)
            return cls(kind, steps=tuple(float(x) for x in steps))
        if kind == "power-law":
            steps = np.clip(rng.pareto(3.0, n) + 0.5, 0.3, 2.0)
            return cls(kind, steps=tuple(float(x) for x in steps))
        return cls("uniform")


@dataclass(frozen=True)
class Phase:
    start: float
    sensitivity: tuple
    pressure: tuple
    freq_sensitivity: float
    base_throughput: dict


@dataclass
class AppSpec:
    app_id: str
    kind: str
    stateless: bool
    state_size: float  # bytes
    intrinsic: float  # isolation throughput on the reference platform
    freq_sensitivity: float
    sensitivity: tuple
    pressure: tuple
    base_throughput: dict
    qos_target: float = 0.0
    load_trace: LoadTrace = field(default_factory=LoadTrace)
    phases: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("sensitivity", "pressure"):
            vec = getattr(self, name)
            if len(vec) != N_RESOURCES or any(not 0.0 <= x <= 1.0 for x in vec):
                raise InvalidArgument(f"{self.app_id}: {name} must be {N_RESOURCES} values in [0, 1]")
        if not 0.0 <= self.freq_sensitivity <= 1.0:
            raise InvalidArgument(f"{self.app_id}: freq_sensitivity outside [0, 1]")

    def phase_at(self, t: float) -> Phase:
        active = Phase(0.0, self.sensitivity, self.pressure, self.freq_sensitivity, self.base_throughput)
        for ph in self.phases:
            if ph.start <= t:
                active = ph
        return active


def base_table(intrinsic: float, phi: float, sens, platform: ClusterConfig) -> dict:
    """Per-core-class isolation throughput at nominal frequency (plus the reference sandbox)."""
    out = {REFERENCE_CLASS: float(intrinsic)}
    s = np.asarray(sens, dtype=float)
    for cid, cc in platform.core_classes.items():
        clock = (cc.nominal_freq / platform.reference_clock) ** phi
        arch = float(np.prod(1.0 - s * np.asarray(cc.deficit)))
        out[cid] = float(intrinsic * clock * arch)
    return out


def make_kernel_app(kernel_id: int, intensity_level: int, n_resources: int = N_RESOURCES) -> AppSpec:
    """Contentious kernel: pressure ``level / 10`` on one resource, insensitive to everything."""
    if not 0 <= kernel_id < n_resources or not 1 <= intensity_level <= 10:
        raise InvalidArgument(f"no kernel ({kernel_id}, {intensity_level})")
    pressure = [0.0] * n_resources
    pressure[kernel_id] = intensity_level / 10.0
    return AppSpec(
        app_id=f"uB{kernel_id}_{10 * intensity_level}",
        kind=BEST_EFFORT,
        stateless=True,
        state_size=0.0,
        intrinsic=100.0,
        freq_sensitivity=0.0,
        sensitivity=(0.0,) * n_resources,
        pressure=tuple(pressure),
        base_throughput={},
    )


# Resource-usage archetypes: compute-bound, memory-bound, I/O and network-bound.
ARCHETYPES = np.array([
    [0.85, 0.30, 0.05, 0.10, 0.05, 0.00, 0.00, 0.15],
    [0.20, 0.55, 0.10, 0.85, 0.05, 0.05, 0.05, 0.75],
    [0.30, 0.15, 0.35, 0.30, 0.85, 0.60, 0.80, 0.20],
])
LC_PRIOR = np.array([2.0, 1.0, 3.0])
BATCH_PRIOR = np.array([3.0, 2.0, 1.0])


@dataclass
class MixConfig:
    lc_fraction: float = 0.4
    best_effort_fraction: float = 0.0  # taken out of the batch share
    pressure_scale: tuple = (0.1, 0.35)
    noise: float = 0.01
    phase_prob: float = 0.0
    phase_window: tuple = (20.0, 60.0)
    horizon: float = 600.0
    intrinsic_range: tuple = (50.0, 150.0)
    concentration: float = 0.5  # Dirichlet prior multiplier; lower -> more archetype-pure apps
    magnitude: tuple = (1.0, 1.0)  # overall sensitivity scale per app


def _draw_profile(rng, prior, cfg: MixConfig):
    w = rng.dirichlet(prior * cfg.concentration)
    mag = rng.uniform(*cfg.magnitude)
    s = np.clip(mag * (w @ ARCHETYPES) + rng.normal(0, cfg.noise, N_RESOURCES), 0.0, 0.95)
    g = rng.uniform(*cfg.pressure_scale)
    p = np.clip(s * g + rng.normal(0, cfg.noise / 3, N_RESOURCES), 0.0, 1.0)
    phi = float(np.clip(s[0] + rng.normal(0, 0.05), 0.0, 1.0))
    return tuple(float(x) for x in s), tuple(float(x) for x in p), phi


def generate_mix(n_apps: int, seed: int, platform: ClusterConfig, config: MixConfig | None = None,
                 prefix: str = "app") -> list[AppSpec]:
    """Seeded application mix with a 40:60 latency-critical to batch split."""
    if n_apps < 1:
        raise InvalidArgument("n_apps must be >= 1")
    cfg = config or MixConfig()
    rng = np.random.default_rng([seed, 104729])
    n_lc = int(round(cfg.lc_fraction * n_apps))
    n_be = min(int(round(cfg.best_effort_fraction * n_apps)), n_apps - n_lc)
    kinds = [LATENCY_CRITICAL] * n_lc + [BEST_EFFORT] * n_be + [BATCH] * (n_apps - n_lc - n_be)
    kinds = [kinds[i] for i in rng.permutation(n_apps)]
    apps = []
    for i, kind in enumerate(kinds):
        lc = kind == LATENCY_CRITICAL
        s, p, phi = _draw_profile(rng, LC_PRIOR if lc else BATCH_PRIOR, cfg)
        intrinsic = float(rng.uniform(*cfg.intrinsic_range))
        if lc:
            stateless = bool(rng.random() < 0.5)
            state = 200e6 if stateless else float(rng.uniform(1e9, 8e9))
            trace = LoadTrace.draw(str(rng.choice(["diurnal", "exponential"])), rng, cfg.horizon)
        else:
            stateless = False
            state = float(rng.uniform(0.2e9, 4e9))
            trace = LoadTrace("uniform")
        phases = []
        if cfg.phase_prob > 0 and rng.random() < cfg.phase_prob:
            s2, p2, phi2 = _draw_profile(rng, LC_PRIOR if lc else BATCH_PRIOR, cfg)
            t = float(rng.uniform(*cfg.phase_window))
            phases.append(Phase(t, s2, p2, phi2, base_table(intrinsic, phi2, s2, platform)))
        apps.append(AppSpec(
            app_id=f"{prefix}{i:03d}",
            kind=kind,
            stateless=stateless,
            state_size=state,
            intrinsic=intrinsic,
            freq_sensitivity=phi,
            sensitivity=s,
            pressure=p,
            base_throughput=base_table(intrinsic, phi, s, platform),
            qos_target=0.8 * intrinsic,
            load_trace=trace,
            phases=phases,
        ))
    return apps


def migration_cost(app: AppSpec, src_server: int, dst_server: int) -> float:
    """Seconds of lost work to move ``app`` (context switch if the server is unchanged)."""
    if src_server == dst_server:
        return CONTEXT_SWITCH_S
    return MIGRATION_SETUP_S + app.state_size * 8.0 / NETWORK_BPS


# -- world -------------------------------------------------------------------------------------

class World:
    """Servers, resident applications and a simulated clock."""

    def __init__(self, platform: ClusterConfig, seed: int = 0, noise_sigma: float = NOISE_SIGMA,
                 profiling_slots: int = 1, log_trajectory: bool = False):
        self.platform = platform
        self.seed = seed
        self.noise_sigma = noise_sigma
        self.servers = platform.build_servers(seed)
        self.cores = {(c.server_id, c.core_id): c for s in self.servers for c in s.cores}
        self.apps: dict[str, AppSpec] = {}
        self.assignments: dict[str, Slot] = {}
        self.throttle: dict[str, float] = {}
        self.paused_until: dict[str, float] = {}
        self.clock = 0.0
        self.rng = np.random.default_rng([seed, 15485863])
        self.profiling_slots = profiling_slots
        self.profiling_busy = 0
        self.trajectory: list | None = [] if log_trajectory else None
        self.last_truth: dict = {}

    # inventory

    def core_class(self, server: int, core: int) -> CoreClass:
        return self.platform.core_classes[self.cores[(server, core)].core_class]

    def freq_levels(self, server: int, core: int) -> tuple:
        return self.platform.freq_levels(self.cores[(server, core)].core_class)

    def allowed_levels(self, server: int, core: int) -> tuple:
        c = self.cores[(server, core)]
        if c.pinned_level is not None:
            return (c.pinned_level,)
        return tuple(range(len(self.freq_levels(server, core))))

    def occupancy(self, assignments=None) -> dict:
        occ: dict = {}
        for slot in (self.assignments if assignments is None else assignments).values():
            occ[(slot.server, slot.core)] = occ.get((slot.server, slot.core), 0) + 1
        return occ

    def free_threads(self, server: int, core: int, assignments=None) -> int:
        used = self.occupancy(assignments).get((server, core), 0)
        return self.core_class(server, core).smt_threads - used

    def free_slots(self, assignments=None, server: int | None = None) -> list:
        """One Slot per free hardware thread, each core's level set expanded."""
        occ = self.occupancy(assignments)
        out = []
        for (s, c), core in self.cores.items():
            if server is not None and s != server:
                continue
            free = self.platform.core_classes[core.core_class].smt_threads - occ.get((s, c), 0)
            if free > 0:
                for lvl in self.allowed_levels(s, c):
                    out.append(Slot(s, c, lvl))
        return out

    def apps_on(self, server: int, assignments=None) -> list:
        a = self.assignments if assignments is None else assignments
        return sorted(k for k, v in a.items() if v.server == server)

    def used_servers(self, assignments=None) -> list:
        a = self.assignments if assignments is None else assignments
        return sorted({v.server for v in a.values()})

    def check_feasible(self, assignments: dict) -> None:
        occ = {}
        for app, slot in assignments.items():
            key = (slot.server, slot.core)
            if key not in self.cores:
                raise InvalidArgument(f"{app}: no core {key}")
            if slot.freq_level not in self.allowed_levels(*key):
                raise InvalidArgument(f"{app}: frequency level {slot.freq_level} not allowed on {key}")
            occ[key] = occ.get(key, 0) + 1
            if occ[key] > self.core_class(*key).smt_threads:
                raise InvalidArgument(f"core {key} over its thread capacity")

    # membership

    def add_app(self, app: AppSpec) -> None:
        self.apps[app.app_id] = app

    def place(self, app_id: str, slot: Slot) -> None:
        trial = dict(self.assignments)
        trial[app_id] = Slot(*slot)
        self.check_feasible(trial)
        self.assignments = trial

    def apply(self, assignments: dict) -> None:
        """Overlay a (partial) assignment onto the current one."""
        trial = dict(self.assignments)
        trial.update({k: Slot(*v) for k, v in assignments.items()})
        self.check_feasible(trial)
        self.assignments = trial

    def remove(self, app_id: str) -> None:
        self.assignments.pop(app_id, None)

    # ground truth

    def effective_pressure(self, app_id: str, t: float | None = None) -> np.ndarray:
        app = self.apps[app_id]
        t = self.clock if t is None else t
        p = np.asarray(app.phase_at(t).pressure, dtype=float)
        scale = self.throttle.get(app_id, 1.0)
        if app.kind == LATENCY_CRITICAL:
            scale *= app.load_trace.factor(t)
        return np.clip(p * scale, 0.0, 1.0)

    def true_perf(self, app_id: str, slot: Slot | None = None, co_runners: dict | None = None,
                  t: float | None = None) -> float:
        t = self.clock if t is None else t
        slot = self.assignments[app_id] if slot is None else Slot(*slot)
        if co_runners is None:
            co_runners = {k: v for k, v in self.assignments.items() if k != app_id}
        return _perf(self, self.apps[app_id], slot, co_runners, t)

    def perf_table(self, assignments: dict | None = None, t: float | None = None) -> dict:
        """True throughput of every app in ``assignments`` given those co-locations."""
        a = self.assignments if assignments is None else assignments
        return {k: self.true_perf(k, v, {o: w for o, w in a.items() if o != k}, t) for k, v in a.items()}

    def gmean(self, assignments: dict | None = None, apps=None) -> float:
        table = self.perf_table(assignments)
        vals = [table[a] for a in (apps if apps is not None else table)]
        return float(np.exp(np.mean(np.log(np.maximum(vals, 1e-12))))) if vals else 0.0

    def noise(self) -> float:
        if self.noise_sigma == 0:
            return 1.0
        return float(np.exp(self.rng.normal(0.0, self.noise_sigma)))

    def run_interval(self, dt: float) -> dict:
        """Advance the clock by ``dt`` and return one noisy throughput sample per resident app."""
        if not dt > 0:
            raise InvalidArgument("dt must be > 0")
        self.clock += dt
        t = self.clock
        out = {}
        self.last_truth = {}
        for app_id in sorted(self.assignments):
            truth = self.true_perf(app_id, t=t)
            if self.paused_until.get(app_id, -1.0) > t - dt:
                lost = min(dt, self.paused_until[app_id] - (t - dt)) / dt
                truth *= max(0.0, 1.0 - lost)
            measured = truth * self.noise()
            out[app_id] = measured
            self.last_truth[app_id] = truth
            if self.trajectory is not None:
                s = self.assignments[app_id]
                self.trajectory.append((t, app_id, s.server, s.core, s.freq_level, truth, measured))
        return out

    # profiling sandbox

    def profile_run(self, app: AppSpec, kernel: AppSpec | None = None) -> float:
        """Noisy throughput of ``app`` on the reference sandbox, optionally sharing a core with ``kernel``."""
        if self.profiling_busy >= self.profiling_slots:
            raise BusyError("no free profiling slot")
        return self.reference_perf(app, kernel) * self.noise()

    def reference_perf(self, app: AppSpec, kernel: AppSpec | None = None) -> float:
        """Noise-free sandbox throughput: the oracle for reference-block cells."""
        ph = app.phase_at(self.clock)
        perf = ph.base_throughput.get(REFERENCE_CLASS, app.intrinsic)
        if kernel is not None:
            s = np.asarray(ph.sensitivity)
            p = np.asarray(kernel.pressure)
            perf *= float(np.prod(np.maximum(DELTA_FLOOR, 1.0 - s * np.minimum(1.0, p))))
        return perf

    def write_trajectory(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "app", "server", "core", "freq", "true_perf", "measured_perf"])
            for row in self.trajectory or ():
                w.writerow(row)


def _perf(world: World, app: AppSpec, slot: Slot, co_runners: dict, t: float) -> float:
    key = (slot.server, slot.core)
    if key not in world.cores:
        raise InvalidArgument(f"no core {key}")
    core = world.cores[key]
    levels = world.platform.freq_levels(core.core_class)
    if not 0 <= slot.freq_level < len(levels):
        raise InvalidArgument(f"frequency level {slot.freq_level} outside {len(levels)} levels")
    cc = world.platform.core_classes[core.core_class]
    ph = app.phase_at(t)
    perf = ph.base_throughput.get(core.core_class, app.intrinsic) * (levels[slot.freq_level] / cc.nominal_freq) ** ph.freq_sensitivity
    load = np.zeros(N_RESOURCES)
    for other, oslot in co_runners.items():
        if oslot.server != slot.server:
            continue
        ocore = world.cores[(oslot.server, oslot.core)]
        p = world.effective_pressure(other, t)
        for r in range(N_RESOURCES):
            if r in CORE_SCOPED and oslot.core != slot.core:
                continue
            if r in DOMAIN_SCOPED and ocore.domain != core.domain:
                continue
            load[r] += p[r]
    s = np.asarray(ph.sensitivity)
    perf *= float(np.prod(np.maximum(DELTA_FLOOR, 1.0 - s * np.minimum(1.0, load))))
    if app.kind != LATENCY_CRITICAL:
        # batch and best-effort work slows down in proportion to its throttle
        perf *= world.throttle.get(app.app_id, 1.0)
    return float(perf)


def true_perf(app: AppSpec, slot: Slot, co_runners: dict, world: World) -> float:
    """Ground-truth throughput of ``app`` on ``slot`` next to ``co_runners`` (app_id -> Slot)."""
    if app.app_id not in world.apps:
        world.add_app(app)
    return _perf(world, app, Slot(*slot), co_runners, world.clock)
