"""The master loop: admission, monitoring, QoS-violation detection and correction.

A scheduler is bound to one :class:`~magesched.simworld.World`. ``run_episode``
admits a mix, then advances simulated time in monitoring periods; agents
report measured throughput as protocol messages and the scheduler reacts to
QoS events. Only :class:`Mage` corrects; static schedulers ignore events.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .errors import InfeasibleError, InvalidArgument
from .factorization import SgdConfig
from .inference import (AppCurves, SlotPredictor, profile_partial_placements, profile_reference, record,
                        run_sgd1, run_sgd2, run_sgd3)
from .matrix import ColumnKind, UtilityMatrix
from .placement import (AMORTIZATION_HORIZON_S, DEFAULT_CAP, PlacementMapping, enumerate_candidates,
                        evaluate_tradeoff, rank_servers, score_column, select_best, stage_two_candidates)
from .simworld import (BEST_EFFORT, CONTEXT_SWITCH_S, LATENCY_CRITICAL, N_RESOURCES, PROFILE_SECONDS, AppSpec, MixConfig,
                       Slot, World, generate_mix, make_kernel_app, migration_cost)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.10
MONITOR_PERIOD_S = 1.0
THROTTLE_STEPS = (0.75, 0.5)
N_LEVELS = 10


@dataclass(frozen=True)
class QoSEvent:
    app_id: str
    expected: float
    measured: float
    ratio: float
    detected_at: float


# -- correction actions -----------------------------------------------------------------------

@dataclass(frozen=True)
class ContextSwitch:
    mapping: PlacementMapping
    gain: float = 0.0
    kind = "context_switch"


@dataclass(frozen=True)
class MigrateToUsedServer:
    app_id: str
    dst: Slot
    gain: float = 0.0
    stateless: bool = True
    kind = "migrate_used"


@dataclass(frozen=True)
class MigrateToIdleServer:
    app_id: str
    dst: Slot
    gain: float = 0.0
    kind = "migrate_idle"


@dataclass(frozen=True)
class ThrottleBestEffort:
    app_id: str
    factor: float
    kind = "throttle"


@dataclass(frozen=True)
class Terminate:
    app_id: str
    kind = "terminate"


@dataclass(frozen=True)
class NoAction:
    reason: str = ""
    kind = "none"


@dataclass
class EpisodeResult:
    scheduler: str
    gmean: float
    per_app: dict
    traces: dict = field(default_factory=dict)
    decision_time: float = 0.0
    profiling_time: float = 0.0
    migration_time: float = 0.0
    admissions: int = 0
    corrections: int = 0
    migrations: int = 0
    events: int = 0
    actions: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    terminated: list = field(default_factory=list)


# -- monitoring -------------------------------------------------------------------------------

def detect(expected: dict, reports, threshold: float = DEFAULT_THRESHOLD) -> list[QoSEvent]:
    """One QoSEvent per report whose measured/expected ratio is below ``1 - threshold``."""
    if not 0 < threshold < 1:
        raise InvalidArgument("threshold must be within (0, 1)")
    events = []
    for msg in reports:
        protocol.validate(msg)
        if msg["type"] != "report":
            continue
        app = msg["app"]
        exp = expected.get(app)
        if exp is None:
            continue
        if exp <= 0:
            log.warning("skipping %s: expected throughput is %s", app, exp)
            continue
        ratio = msg["perf"] / exp
        if ratio < 1.0 - threshold:
            events.append(QoSEvent(app, exp, msg["perf"], ratio, msg["t"]))
    return events


def monitor_tick(world: World, scheduler: "Scheduler", reports=None) -> list[QoSEvent]:
    """Compare reported throughput against the scheduler's expectations.

    Without ``reports`` the world is advanced by one monitoring period and its
    agents' samples are used.
    """
    if reports is None:
        samples = world.run_interval(scheduler.period)
        reports = [protocol.report(a, v, world.clock) for a, v in samples.items()]
    return detect(scheduler.expected, reports, scheduler.threshold)


# -- schedulers -------------------------------------------------------------------------------

class Scheduler:
    """Common bookkeeping; subclasses implement ``admit`` (and optionally ``correct``)."""

    name = "base"
    static = True

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, period: float = MONITOR_PERIOD_S):
        if not 0 < threshold < 1 or not period > 0:
            raise InvalidArgument("threshold must be in (0, 1) and period > 0")
        self.threshold = threshold
        self.period = period
        self.world: World | None = None

    def bind(self, world: World, seed: int | None = None) -> None:
        self.world = world
        self.seed = world.seed if seed is None else seed
        self.expected: dict = {}
        self.decision_time = 0.0
        self.profiling_time = 0.0
        self.migration_time = 0.0
        self.corrections = 0
        self.migrations = 0
        self.actions: list = []
        self.audit: list = []
        self.terminated: list = []

    def admit(self, app: AppSpec) -> PlacementMapping:
        raise NotImplementedError

    def correct(self, event: QoSEvent):
        return NoAction("static scheduler")

    def on_reports(self, reports) -> None:
        """Hook for agent reports; static policies ignore them."""

    def place_slot(self, app: AppSpec, slot: Slot, expected: float | None = None) -> PlacementMapping:
        self.world.add_app(app)
        self.world.place(app.app_id, slot)
        if expected is not None:
            self.expected[app.app_id] = expected
        return PlacementMapping.from_dict({app.app_id: slot})


@dataclass
class MageConfig:
    profiling_runs: int = 3
    history_apps: int = 16
    rank_policy: object = 4
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(lam=0.01))
    cap: int = DEFAULT_CAP
    horizon: float = AMORTIZATION_HORIZON_S
    init_mode: str = "composed"
    rerun: str = "both"
    pressure_ratio: float = 0.22
    migration_targets: int = 3
    allow_terminate: bool = True
    min_gain: float = 0.02  # relative gmean gain a correction must promise
    # rank local moves on prior-only columns rescaled to the measured current column
    relative_gain: bool = True

    def __post_init__(self):
        if not 1 <= self.profiling_runs <= 5:
            raise InvalidArgument("profiling_runs must be within 1..5")
        if self.init_mode not in ("composed", "uniform"):
            raise InvalidArgument("init_mode must be 'composed' or 'uniform'")
        if self.rerun not in ("both", "sgd3"):
            raise InvalidArgument("rerun must be 'both' or 'sgd3'")
        if self.history_apps < 0 or self.cap < 1:
            raise InvalidArgument("history_apps must be >= 0 and cap >= 1")


def profile_dense(app: AppSpec, world: World, n_kernels: int = N_RESOURCES, n_levels: int = N_LEVELS):
    """Every reference cell for ``app`` (used for the offline training set)."""
    out = [(ColumnKind.isolation(), world.profile_run(app))]
    for k in range(n_kernels):
        for lvl in range(1, n_levels + 1):
            out.append((ColumnKind.kernel(k, lvl), world.profile_run(app, make_kernel_app(k, lvl, n_kernels))))
    return out


class Mage(Scheduler):
    """Matrix-factorization scheduler with optional runtime corrections."""

    name = "mage"

    def __init__(self, config: MageConfig | None = None, static: bool = False, **kw):
        super().__init__(**kw)
        self.config = config or MageConfig()
        self.static = static
        if static:
            self.name = "mage_static"

    def bind(self, world: World, seed: int | None = None) -> None:
        super().bind(world, seed)
        self.matrix = UtilityMatrix.with_reference(N_RESOURCES, N_LEVELS)
        self.row_of: dict = {}
        self.placement_obs: dict = {}
        self.calibration: dict = {}
        self.predictor = SlotPredictor(world, {}, self.config.pressure_ratio)
        self.reports: list = []
        self.changed_at: dict = {}
        history = generate_mix(self.config.history_apps, self.seed + 1_000_003, world.platform,
                               MixConfig(), prefix="hist") if self.config.history_apps else []
        for h in history:
            r = self.matrix.add_row()
            for col, v in profile_dense(h, world):
                self.matrix.insert(r, self.matrix.column_index(col), v)
        self.ref_model = None

    # inference

    def refresh_reference(self):
        completed, report, model = run_sgd1(self.matrix, self.config.sgd, self.config.rank_policy)
        self.ref_model = model
        self.completed = completed
        for app, row in self.row_of.items():
            self.predictor.curves[app] = AppCurves.from_row(completed[row], N_RESOURCES, N_LEVELS)
        self.reports.append(report)
        return report

    def observe(self, mapping: PlacementMapping, values: dict) -> None:
        """Store a measured placement column and how far the composed prior was from it."""
        self.placement_obs[mapping.mapping_id] = dict(values)
        known = {a: s for a, s in mapping.assignments if a in self.predictor.curves}
        prior = self.predictor.mapping_estimates(known)
        for a, v in values.items():
            if a in prior and prior[a] > 0 and v > 0:
                cls = self.world.cores[(known[a].server, known[a].core)].core_class
                samples = self.calibration.setdefault(a, {})
                samples[mapping.mapping_id] = (cls, math.log(v / prior[a]))

    def bias(self, app_id: str, slot: Slot) -> float:
        """Measured/composed ratio for ``app_id`` on ``slot``'s core class (app-wide if unseen there)."""
        samples = self.calibration.get(app_id)
        if not samples:
            return 1.0
        cls = self.world.cores[(slot.server, slot.core)].core_class
        same = [x for c, x in samples.values() if c == cls]
        logs = same if same else [x for _, x in samples.values()]
        return float(np.clip(math.exp(np.mean(logs)), 0.5, 2.0))

    def estimate_columns(self, mappings, observed: dict | None = None, rerun: str | None = None) -> dict:
        """``{mapping_id: {app: estimate}}`` from SGD2 (if anything is observed) then SGD3."""
        rerun = rerun or self.config.rerun
        by_id = {}
        for m in mappings:
            by_id.setdefault(m.mapping_id, m)
        if observed is None:
            observed = {k: v for k, v in self.placement_obs.items() if k in by_id}
        a3 = self.matrix.reference_view()
        a3.concat_placement_columns(sorted(by_id))
        for mid, vals in observed.items():
            if mid not in by_id:
                continue
            col = a3.placement_index(mid)
            for app, v in vals.items():
                if app in self.row_of and app in by_id[mid].apps:
                    a3.insert(self.row_of[app], col, v)
        rows_for = {a3.placement_index(mid): [self.row_of[a] for a in m.apps] for mid, m in by_id.items()}
        priors = None
        if self.config.init_mode == "composed":
            priors = {}
            for mid, m in by_id.items():
                col = a3.placement_index(mid)
                for a, v in self.predictor.mapping_estimates(m.as_dict()).items():
                    priors[(self.row_of[a], col)] = v * self.bias(a, m.slot(a))
        model = self.ref_model
        if rerun == "both" and any(c >= a3.q for (_, c) in a3.entries):
            model, rep2 = run_sgd2(a3, model, self.config.sgd)
            self.reports.append(rep2)
        _, rep3, est = run_sgd3(a3, model, self.seed, self.config.sgd, rows_for, priors)
        self.reports.append(rep3)
        return {mid: {a: float(est[self.row_of[a], a3.placement_index(mid)]) for a in m.apps}
                for mid, m in by_id.items()}

    # admission

    def admit(self, app: AppSpec) -> PlacementMapping:
        t0 = time.perf_counter()
        w = self.world
        w.add_app(app)
        row = self.matrix.add_row()
        self.row_of[app.app_id] = row
        obs = profile_reference(app, w, self.seed, self.config.profiling_runs)
        record(self.matrix, row, obs)
        self.profiling_time += sum(o.sim_duration for o in obs)
        self.refresh_reference()
        servers = rank_servers(app.app_id, w, self.predictor.server_score)
        if not servers:
            raise InfeasibleError(f"{app.app_id}: no server with a free thread")
        server = servers[0]
        realized, values = profile_partial_placements(app, w, server, self.seed)
        self.profiling_time += PROFILE_SECONDS
        realized = PlacementMapping.from_dict(realized)
        self.observe(realized, values)
        cands = stage_two_candidates(app.app_id, w, server, self.config.cap, self.seed)
        if realized.mapping_id not in {m.mapping_id for m in cands}:
            cands.append(realized)
        est = self.estimate_columns(cands)
        best = select_best([score_column(est[m.mapping_id], mapping=m) for m in cands])
        self.apply_mapping(best.mapping, est[best.mapping_id])
        self.decision_time += time.perf_counter() - t0
        return best.mapping

    def apply_mapping(self, mapping: PlacementMapping, estimates: dict) -> float:
        """Move apps to ``mapping``; returns the total pause time charged."""
        w = self.world
        paused = 0.0
        for a, slot in mapping.assignments:
            old = w.assignments.get(a)
            if old is not None and old != slot:
                cost = migration_cost(w.apps[a], old.server, slot.server)
                w.paused_until[a] = w.clock + cost
                paused += cost
                if old.server != slot.server:
                    self.migrations += 1
        w.apply(mapping.as_dict())
        self.migration_time += paused
        for a in mapping.apps:
            self.expected[a] = estimates[a]
        return paused

    # correction

    def on_reports(self, reports) -> None:
        """Record each server's current mapping as an observed placement column."""
        w = self.world
        by_server: dict = {}
        for msg in reports:
            a = msg["app"]
            if a not in w.assignments or w.paused_until.get(a, -1.0) > msg["t"] - self.period:
                continue
            by_server.setdefault(w.assignments[a].server, {})[a] = msg["perf"]
        for server, vals in by_server.items():
            m = self._server_mapping(server)
            if set(vals) == set(m.apps) and vals != self.placement_obs.get(m.mapping_id):
                self.observe(m, vals)

    def reclassify(self, app_id: str) -> None:
        """Start a fresh reference row for an app whose behavior changed."""
        w = self.world
        row = self.matrix.add_row()
        self.row_of[app_id] = row
        obs = profile_reference(w.apps[app_id], w, self.seed + int(w.clock * 1000), self.config.profiling_runs)
        record(self.matrix, row, obs)
        self.profiling_time += sum(o.sim_duration for o in obs)
        for vals in self.placement_obs.values():
            vals.pop(app_id, None)
        self.calibration.pop(app_id, None)
        self.refresh_reference()

    def correct(self, event: QoSEvent):
        if self.static:
            return NoAction("static scheduler")
        w = self.world
        if event.app_id not in w.assignments:
            return NoAction("app no longer placed")
        server = w.assignments[event.app_id].server
        if self.changed_at.get(server) == w.clock:
            # the report predates this tick's correction on the same server
            return NoAction("measurement predates a correction on this server")
        t0 = time.perf_counter()
        before = dict(w.assignments)
        try:
            action = self._correct(event)
        finally:
            self.decision_time += time.perf_counter() - t0
        self.actions.append((w.clock, event.app_id, action))
        if not isinstance(action, NoAction):
            self.corrections += 1
            self.changed_at[server] = w.clock
            for a in set(before) | set(w.assignments):
                if before.get(a) != w.assignments.get(a):
                    for slot in (before.get(a), w.assignments.get(a)):
                        if slot is not None:
                            self.changed_at[slot.server] = w.clock
        return action

    def _server_mapping(self, server: int, assignments: dict | None = None) -> PlacementMapping:
        a = self.world.assignments if assignments is None else assignments
        return PlacementMapping.from_dict({k: v for k, v in a.items() if v.server == server})

    def _correct(self, event: QoSEvent):
        w = self.world
        cfg = self.config
        server = w.assignments[event.app_id].server
        current = self._server_mapping(server)
        # reprofile under the current placement and overwrite its column
        values = {a: w.true_perf(a) * w.noise() for a in current.apps}
        self.profiling_time += PROFILE_SECONDS
        # a drop against an earlier measurement of this same mapping means the app itself changed
        before = self.placement_obs.get(current.mapping_id, {}).get(event.app_id)
        if before is not None and values[event.app_id] < (1.0 - self.threshold) * before:
            self.reclassify(event.app_id)
        self.observe(current, values)
        for a, v in values.items():
            self.expected[a] = v

        # outcome 1: move the flagged app to a free slot or swap it with a co-runner
        same = physical_signature(current, w)
        cands = [m for m in local_moves(current, event.app_id, w)
                 if m.mapping_id == current.mapping_id or physical_signature(m, w) != same]
        est = self.estimate_columns(cands)
        if cfg.relative_gain:
            # compare like with like: every column estimated without measurements, then
            # rescaled so the current column reproduces what was just measured
            blind = self.estimate_columns(cands, observed={})
            ref = blind[current.mapping_id]
            est = {mid: {a: v * values[a] / ref[a] if ref[a] > 0 else v for a, v in col.items()}
                   for mid, col in blind.items()}
        cur = score_column(est[current.mapping_id], mapping=current)
        best = select_best([score_column(est[m.mapping_id], mapping=m) for m in cands])
        gain_ok = best.gmean > cur.gmean * (1.0 + cfg.min_gain)
        if best.mapping_id != current.mapping_id and gain_ok:
            moved = [a for a in current.apps if best.mapping.slot(a) != current.slot(a)]
            cost = sum(CONTEXT_SWITCH_S * max(est[current.mapping_id][a], 0.0) for a in moved)
            if evaluate_tradeoff(cur, best, cost, cfg.horizon) is not None:
                self.apply_mapping(best.mapping, est[best.mapping_id])
                return ContextSwitch(best.mapping, best.gmean - cur.gmean)

        # outcome 2: migrate one app from this server to another used server
        used = [s for s in w.used_servers() if s != server]
        move = self._best_migration(current, used, est[current.mapping_id], event)
        if move is not None:
            return move

        # outcome 3: idle server for a stateless app, else throttle / terminate best-effort work
        idle = [s.server_id for s in w.servers if not w.apps_on(s.server_id)]
        if idle:
            move = self._best_migration(current, idle, est[current.mapping_id], event,
                                        stateless_only=True, idle=True)
            if move is not None:
                return move
        return self._throttle(event, current)

    def _best_migration(self, current: PlacementMapping, targets, cur_est: dict, event: QoSEvent,
                        stateless_only: bool = False, idle: bool = False):
        w = self.world
        cfg = self.config
        if not targets:
            return None
        src = current.as_dict()
        movers = [a for a in current.apps if w.apps[a].stateless or not stateless_only]
        if not movers:
            return None
        ranked = {}
        for a in movers:
            scores = sorted(((-self.predictor.server_score(a, s), s) for s in targets
                             if w.free_slots(server=s)))
            ranked[a] = [s for _, s in scores[: cfg.migration_targets]]
        # collect every column needed for a single estimation pass
        options = []
        columns = {current.mapping_id: current}
        for a in movers:
            after_src = PlacementMapping.from_dict({k: v for k, v in src.items() if k != a})
            if len(after_src):
                columns.setdefault(after_src.mapping_id, after_src)
            for dst in ranked[a]:
                before_dst = self._server_mapping(dst)
                if len(before_dst):
                    columns.setdefault(before_dst.mapping_id, before_dst)
                for slot in self._distinct_slots(dst):
                    after_dst = PlacementMapping.from_dict({**before_dst.as_dict(), a: slot})
                    columns.setdefault(after_dst.mapping_id, after_dst)
                    options.append((a, slot, after_src, before_dst, after_dst))
        if not options:
            return None
        est = self.estimate_columns(list(columns.values()))

        def logsum(m):
            return sum(math.log(max(v, 1e-6)) for v in est[m.mapping_id].values()) if len(m) else 0.0

        evaluated = []
        for a, slot, after_src, before_dst, after_dst in options:
            n = len(current) + len(before_dst)
            before = math.exp((logsum(current) + logsum(before_dst)) / n)
            after = math.exp((logsum(after_src) + logsum(after_dst)) / n)
            cost = migration_cost(w.apps[a], current.slot(a).server, slot.server) * max(cur_est[a], 0.0)
            net = (after - before) * cfg.horizon - cost
            evaluated.append((net, a, slot, after - before))
        evaluated.sort(key=lambda e: (-e[0], e[1], e[2]))
        stateless = [e for e in evaluated if w.apps[e[1]].stateless and e[0] > 0]
        stateful = [e for e in evaluated if not w.apps[e[1]].stateless and e[0] > 0]
        if stateless:
            net, a, slot, gain = stateless[0]
        elif stateful:
            net, a, slot, gain = stateful[0]
            alternatives = [(e[1], round(e[0], 6)) for e in evaluated if w.apps[e[1]].stateless]
            self.audit.append({"t": w.clock, "stateful_migration": a, "net_gain": net,
                               "stateless_alternatives": alternatives, "no_stateless_met_bar": True})
        else:
            return None
        cost = migration_cost(w.apps[a], current.slot(a).server, slot.server)
        w.paused_until[a] = w.clock + cost
        self.migration_time += cost
        self.migrations += 1
        w.apply({a: slot})
        after_dst = self._server_mapping(slot.server)
        after_src = self._server_mapping(current.slot(a).server)
        for m in (after_dst, after_src):
            if len(m) and m.mapping_id in est:
                for k, v in est[m.mapping_id].items():
                    self.expected[k] = v
        if idle:
            return MigrateToIdleServer(a, slot, gain)
        return MigrateToUsedServer(a, slot, gain, w.apps[a].stateless)

    def _distinct_slots(self, server: int) -> list:
        """One free slot per (core class, level) on ``server``: identical slots score identically."""
        w = self.world
        seen = set()
        out = []
        for s in w.free_slots(server=server):
            key = (w.cores[(s.server, s.core)].core_class, w.cores[(s.server, s.core)].domain, s.freq_level)
            if key not in seen:
                seen.add(key)
                out.append(s)
        return out

    def _throttle(self, event: QoSEvent, current: PlacementMapping):
        w = self.world
        victim = w.apps[event.app_id]
        if victim.kind != LATENCY_CRITICAL:
            return NoAction("no placement improves the estimate")
        if event.measured >= victim.qos_target:
            return NoAction("latency-critical app still meets its QoS target")
        others = [a for a in current.apps if w.apps[a].kind == BEST_EFFORT]
        if not others:
            return NoAction("no best-effort co-runner to throttle")
        # the heaviest co-runner by estimated pressure
        pressure = {a: float(np.sum(self.predictor.pressure(a))) for a in others if a in self.predictor.curves}
        target = max(sorted(others), key=lambda a: pressure.get(a, 0.0))
        level = w.throttle.get(target, 1.0)
        for step in THROTTLE_STEPS:
            if step < level:
                w.throttle[target] = step
                return ThrottleBestEffort(target, step)
        if self.config.allow_terminate:
            w.remove(target)
            self.expected.pop(target, None)
            self.terminated.append(target)
            return Terminate(target)
        return NoAction("co-runner already at the lowest throttle level")


def local_moves(current: PlacementMapping, app_id: str, world: World) -> list[PlacementMapping]:
    """``current`` plus every single move of ``app_id`` to a free slot or swap with a co-runner."""
    base = current.as_dict()
    server = base[app_id].server
    out = {current.mapping_id: current}
    held = {k: v for k, v in world.assignments.items() if k not in base}
    held.update(base)
    for slot in world.free_slots(held, server=server):
        m = PlacementMapping.from_dict({**base, app_id: slot})
        out.setdefault(m.mapping_id, m)
    for other in current.apps:
        if other == app_id:
            continue
        m = PlacementMapping.from_dict({**base, app_id: base[other], other: base[app_id]})
        out.setdefault(m.mapping_id, m)
    return [out[k] for k in sorted(out)]


def physical_signature(mapping: PlacementMapping, world: World) -> tuple:
    """What each app experiences under ``mapping``: core class, clock, and who shares its core and domain.

    Two mappings with the same signature perform identically, e.g. a swap of
    two apps between identical cores.
    """
    a = mapping.as_dict()
    out = []
    for app, slot in sorted(a.items()):
        core = world.cores[(slot.server, slot.core)]
        clock = world.freq_levels(slot.server, slot.core)[slot.freq_level]
        same_core = tuple(sorted(o for o, s in a.items() if o != app and (s.server, s.core) == (slot.server, slot.core)))
        same_domain = tuple(sorted(o for o, s in a.items() if o != app and s.server == slot.server
                                   and world.cores[(s.server, s.core)].domain == core.domain))
        out.append((app, slot.server, core.core_class, clock, same_core, same_domain))
    return tuple(out)


# -- episodes ---------------------------------------------------------------------------------

def run_episode(mix, world: World, scheduler: Scheduler, duration: float,
                period: float | None = None) -> EpisodeResult:
    """Admit ``mix`` in order, then run the monitor/correct loop for ``duration`` simulated seconds.

    The episode score is the geometric mean over admitted apps of their
    time-averaged true throughput; paused (migrating) time counts as zero
    throughput and terminated apps contribute zero after termination.
    """
    if duration < 0:
        raise InvalidArgument("duration must be >= 0")
    scheduler.bind(world)
    period = period or scheduler.period
    admitted, rejected = [], []
    for app in mix:
        try:
            scheduler.admit(app)
            admitted.append(app.app_id)
        except InfeasibleError as exc:
            log.info("admission rejected: %s", exc)
            rejected.append(app.app_id)
    traces = {a: [] for a in admitted}
    ticks = int(round(duration / period))
    events = 0
    if ticks == 0:
        per_app = {a: world.true_perf(a) for a in admitted}
    else:
        sums = dict.fromkeys(admitted, 0.0)
        for _ in range(ticks):
            samples = world.run_interval(period)
            for a in admitted:
                sums[a] += world.last_truth.get(a, 0.0)
                if a in samples:
                    traces[a].append((world.clock, samples[a]))
            reports = [protocol.report(a, v, world.clock) for a, v in samples.items()]
            scheduler.on_reports(reports)
            found = detect(scheduler.expected, reports, scheduler.threshold)
            events += len(found)
            if scheduler.static:
                continue
            for ev in found:
                scheduler.correct(ev)
        per_app = {a: sums[a] / ticks for a in admitted}
    vals = np.array([per_app[a] for a in admitted]) if admitted else np.array([])
    g = float(np.exp(np.mean(np.log(np.maximum(vals, 1e-12))))) if len(vals) else 0.0
    return EpisodeResult(
        scheduler=scheduler.name, gmean=g, per_app=per_app, traces=traces,
        decision_time=scheduler.decision_time, profiling_time=scheduler.profiling_time,
        migration_time=scheduler.migration_time, admissions=len(admitted),
        corrections=scheduler.corrections, migrations=scheduler.migrations, events=events,
        actions=list(scheduler.actions), audit=list(scheduler.audit), rejected=rejected,
        terminated=list(scheduler.terminated))
