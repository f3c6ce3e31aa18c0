"""Candidate placements, geometric-mean scoring and tiered server/core selection."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InfeasibleError, InvalidArgument
from .simworld import Slot, World

EPS_PERF = 1e-6
DEFAULT_CAP = 500
AMORTIZATION_HORIZON_S = 60.0


@dataclass(frozen=True)
class PlacementMapping:
    """Assignment of applications to (server, core, frequency level), kept in canonical order."""

    assignments: tuple  # ((app_id, Slot), ...) sorted by app_id

    @classmethod
    def from_dict(cls, assignments: dict) -> "PlacementMapping":
        return cls(tuple(sorted((a, Slot(*s)) for a, s in assignments.items())))

    @property
    def mapping_id(self) -> str:
        return "|".join(f"{a}@{s.server}.{s.core}.{s.freq_level}" for a, s in self.assignments)

    def as_dict(self) -> dict:
        return dict(self.assignments)

    @property
    def apps(self) -> list:
        return [a for a, _ in self.assignments]

    def slot(self, app_id: str) -> Slot:
        for a, s in self.assignments:
            if a == app_id:
                return s
        raise KeyError(app_id)

    def __len__(self):
        return len(self.assignments)


@dataclass
class PlacementScore:
    mapping_id: str
    gmean: float
    per_app: dict = field(default_factory=dict)
    mapping: PlacementMapping | None = None


# -- slot ordering used by the heterogeneity-agnostic seeds -----------------------------------

def slot_speed(world: World, slot: Slot) -> float:
    """Speed of a slot for a reference app: clock times the class's architectural factor."""
    cc = world.core_class(slot.server, slot.core)
    freq = world.freq_levels(slot.server, slot.core)[slot.freq_level]
    arch = 1.0 - float(np.mean(cc.deficit))
    return freq * arch


def fastest_first(world: World, slots: Iterable[Slot]) -> list:
    return sorted(slots, key=lambda s: (-slot_speed(world, s), s.server, s.core, -s.freq_level))


def slowest_first(world: World, slots: Iterable[Slot]) -> list:
    return sorted(slots, key=lambda s: (slot_speed(world, s), s.server, s.core, s.freq_level))


# -- enumeration ------------------------------------------------------------------------------

def _options(world: World, occupied: dict, server):
    """(server, core) -> (free threads, allowed levels) excluding ``occupied`` threads."""
    out = {}
    for (s, c), core in world.cores.items():
        if server is not None and s != server:
            continue
        free = world.platform.core_classes[core.core_class].smt_threads - occupied.get((s, c), 0)
        if free > 0:
            out[(s, c)] = (free, world.allowed_levels(s, c))
    return out


def _sequential(world: World, apps, occupied, server, order_fn, fixed) -> dict | None:
    assign = dict(fixed)
    used = dict(occupied)
    for a in apps:
        slots = [Slot(s, c, lvl) for (s, c), (free, lv) in _options(world, used, server).items() for lvl in lv]
        if not slots:
            return None
        pick = order_fn(world, slots)[0]
        assign[a] = pick
        used[(pick.server, pick.core)] = used.get((pick.server, pick.core), 0) + 1
    return assign


def enumerate_candidates(apps: Sequence[str], world: World, cap: int = DEFAULT_CAP, seed: int = 0,
                         server: int | None = None, fixed: dict | None = None,
                         seeds: Iterable[dict] = ()) -> list[PlacementMapping]:
    """Mappings placing every app in ``apps`` (plus the untouched ``fixed`` ones).

    Exhaustive when the space has at most ``cap`` members; otherwise a
    seed-deterministic random sample of ``cap`` mappings plus the greedy and
    smallest-first assignments and any caller-supplied ``seeds``.
    """
    if cap < 1:
        raise InvalidArgument("cap must be >= 1")
    apps = sorted(apps)
    fixed = {k: Slot(*v) for k, v in (fixed or {}).items()}
    # threads held by apps outside this decision stay taken
    held = {k: v for k, v in world.assignments.items() if k not in fixed and k not in apps}
    held.update(fixed)
    occupied = world.occupancy(held)
    base = _options(world, occupied, server)
    capacity = sum(free for free, _ in base.values())
    if len(apps) > capacity:
        raise InfeasibleError(f"{len(apps)} apps but only {capacity} free threads")

    seen: dict = {}

    def add(assign):
        pm = PlacementMapping.from_dict(assign)
        seen.setdefault(pm.mapping_id, pm)

    for s in seeds:
        add(s)
    # exhaustive DFS, abandoned as soon as it would exceed the cap
    exhaustive = []
    overflow = False

    def dfs(i, used, assign):
        nonlocal overflow
        if overflow:
            return
        if i == len(apps):
            exhaustive.append(dict(assign))
            if len(exhaustive) > cap:
                overflow = True
            return
        for (s, c), (free, levels) in base.items():
            if used.get((s, c), 0) >= free:
                continue
            for lvl in levels:
                assign[apps[i]] = Slot(s, c, lvl)
                used[(s, c)] = used.get((s, c), 0) + 1
                dfs(i + 1, used, assign)
                used[(s, c)] -= 1
                if overflow:
                    return
        assign.pop(apps[i], None)

    dfs(0, {}, dict(fixed))
    if not overflow:
        for a in exhaustive:
            add(a)
        return sorted(seen.values(), key=lambda m: m.mapping_id)

    for fn in (fastest_first, slowest_first):
        g = _sequential(world, apps, occupied, server, fn, fixed)
        if g is not None:
            add(g)
    rng = np.random.default_rng([seed, 31337])
    threads = [(key, lvls) for key, (free, lvls) in base.items() for _ in range(free)]
    target = len(seen) + cap
    attempts = 0
    sampled = 0
    while sampled < cap and attempts < 50 * cap:
        attempts += 1
        pick = rng.choice(len(threads), size=len(apps), replace=False)
        assign = dict(fixed)
        for a, t in zip(apps, pick):
            (s, c), lvls = threads[int(t)]
            assign[a] = Slot(s, c, lvls[int(rng.integers(len(lvls)))])
        before = len(seen)
        add(assign)
        if len(seen) > before:
            sampled += 1
        if len(seen) >= target:
            break
    return sorted(seen.values(), key=lambda m: m.mapping_id)


def search_space_size(n_apps: int, n_slots: int) -> int:
    """Injective assignments of n apps to n single-thread, single-level slots."""
    if n_apps > n_slots:
        return 0
    return math.perm(n_slots, n_apps)


# -- scoring ----------------------------------------------------------------------------------

def score_column(estimates: dict, apps: Iterable[str] | None = None, mapping: PlacementMapping | None = None,
                 floor: float = EPS_PERF) -> PlacementScore:
    """Geometric mean of per-app estimates, computed in log space with a positive floor."""
    if apps is None:
        apps = mapping.apps if mapping is not None else list(estimates)
    apps = list(apps)
    if not apps:
        raise InvalidArgument("cannot score an empty placement")
    missing = [a for a in apps if a not in estimates]
    if missing:
        raise InvalidArgument(f"missing estimates for {missing}")
    per_app = {a: max(float(estimates[a]), floor) for a in apps}
    if any(not math.isfinite(v) for v in per_app.values()):
        raise InvalidArgument("non-finite estimate")
    g = math.exp(sum(math.log(v) for v in per_app.values()) / len(per_app))
    return PlacementScore(mapping.mapping_id if mapping is not None else "", g, per_app, mapping)


def select_best(scores: Sequence[PlacementScore]) -> PlacementScore:
    """Highest gmean; ties go to the lexicographically smallest mapping id."""
    if not scores:
        raise InvalidArgument("no candidate scores")
    return min(scores, key=lambda s: (-s.gmean, s.mapping_id))


# -- tiered selection -------------------------------------------------------------------------

def rank_servers(app_id: str, world: World, server_score: Callable[[str, int], float],
                 need: int = 1) -> list:
    """Servers with at least ``need`` free threads, best estimated fit first."""
    occ = world.occupancy()
    ranked = []
    for srv in world.servers:
        free = sum(world.platform.core_classes[c.core_class].smt_threads - occ.get((c.server_id, c.core_id), 0)
                   for c in srv.cores)
        if free >= need:
            ranked.append((-server_score(app_id, srv.server_id), srv.server_id))
    ranked.sort()
    return [sid for _, sid in ranked]


def stage_two_candidates(app_id: str, world: World, server: int, cap: int = DEFAULT_CAP, seed: int = 0,
                         movable_residents: bool | None = None) -> list[PlacementMapping]:
    """Core/frequency candidates inside one server.

    Residents may be context-switched between cores only when frequencies are
    not pinned per core; their frequency level is never changed at admission.
    """
    residents = world.apps_on(server)
    if movable_residents is None:
        movable_residents = not world.platform.dvfs
    incumbent = {a: world.assignments[a] for a in residents}
    seeds = []
    for slot in world.free_slots(incumbent, server=server):
        seeds.append({**incumbent, app_id: slot})
    if movable_residents and residents:
        cands = enumerate_candidates([app_id, *residents], world, cap, seed, server=server,
                                     fixed={}, seeds=seeds)
        # resident frequencies stay as they are
        out = []
        for m in cands:
            d = m.as_dict()
            if all(d[a].freq_level == incumbent[a].freq_level for a in residents):
                out.append(m)
        return out
    return enumerate_candidates([app_id], world, cap, seed, server=server, fixed=incumbent, seeds=seeds)


def tiered_select(app_id: str, world: World, server_score: Callable[[str, int], float],
                  estimate_columns: Callable[[list], dict], cap: int = DEFAULT_CAP, seed: int = 0):
    """Pick a server by estimated fit, then the best in-server mapping by gmean.

    ``estimate_columns(mappings)`` must return ``{mapping_id: {app: estimate}}``.
    Returns ``(PlacementScore, server)``.
    """
    servers = rank_servers(app_id, world, server_score)
    if not servers:
        raise InfeasibleError("no server with a free thread")
    server = servers[0]
    cands = stage_two_candidates(app_id, world, server, cap, seed)
    est = estimate_columns(cands)
    scores = [score_column(est[m.mapping_id], mapping=m) for m in cands]
    return select_best(scores), server


def amortized_gain(gain_per_s: float, horizon: float = AMORTIZATION_HORIZON_S) -> float:
    return gain_per_s * horizon


def evaluate_tradeoff(current: PlacementScore, candidate: PlacementScore, migration_cost: float,
                      horizon: float = AMORTIZATION_HORIZON_S) -> PlacementMapping | None:
    """Accept ``candidate`` only if its gmean gain over ``horizon`` beats the migration cost.

    ``migration_cost`` is lost work (throughput-units x seconds).
    """
    gain = candidate.gmean - current.gmean
    if gain > 0 and amortized_gain(gain, horizon) > migration_cost:
        return candidate.mapping
    return None
