"""Comparison schedulers.

Greedy and Smallest-first are heterogeneity- and interference-agnostic and
never touch a utility matrix. Mage-Static is Mage without corrections.
HierIndependent picks a server with Mage's interference-aware server tier but
then chooses the core and frequency from isolation estimates alone, with no
information flowing back between the two tiers.
"""

from __future__ import annotations

import time

from .errors import InfeasibleError, InvalidArgument
from .placement import rank_servers, slot_speed
from .runtime import Mage, MageConfig, Scheduler
from .simworld import AppSpec, Slot, World
from .inference import profile_reference, record


def _slot_key(world: World, slot: Slot):
    return (slot.server, slot.core, slot.freq_level)


def _top_level_slots(world: World, highest: bool) -> list:
    """Free slots restricted to each core's highest (or lowest) allowed level.

    An idle core counts as available before a spare SMT thread of a busy one.
    """
    occ = world.occupancy()
    out = []
    for s in world.free_slots():
        levels = world.allowed_levels(s.server, s.core)
        if s.freq_level == (max(levels) if highest else min(levels)):
            out.append(s)
    idle = [s for s in out if not occ.get((s.server, s.core), 0)]
    return idle or out


def greedy_place(app: AppSpec, world: World) -> Slot:
    """Fastest free slot at its core's highest frequency level; ties go to the lowest slot id."""
    slots = _top_level_slots(world, highest=True)
    if not slots:
        raise InfeasibleError(f"{app.app_id}: no free core")
    return min(slots, key=lambda s: (-slot_speed(world, s), _slot_key(world, s)))


def smallest_first_place(app: AppSpec, world: World) -> Slot:
    """Slowest (most energy-efficient) free slot at its lowest frequency level."""
    slots = _top_level_slots(world, highest=False)
    if not slots:
        raise InfeasibleError(f"{app.app_id}: no free core")
    return min(slots, key=lambda s: (slot_speed(world, s), _slot_key(world, s)))


class Greedy(Scheduler):
    name = "greedy"

    def admit(self, app: AppSpec):
        t0 = time.perf_counter()
        slot = greedy_place(app, self.world)
        out = self.place_slot(app, slot)
        self.decision_time += time.perf_counter() - t0
        return out


class SmallestFirst(Scheduler):
    name = "smallest_first"

    def admit(self, app: AppSpec):
        t0 = time.perf_counter()
        slot = smallest_first_place(app, self.world)
        out = self.place_slot(app, slot)
        self.decision_time += time.perf_counter() - t0
        return out


def MageStatic(config: MageConfig | None = None, **kw) -> Mage:
    """Mage whose placements are never revisited after admission."""
    return Mage(config, static=True, **kw)


class HierIndependent(Mage):
    """Interference-aware server tier, isolation-only core tier, no cross-tier exchange."""

    name = "hier_independent"

    def __init__(self, config: MageConfig | None = None, **kw):
        super().__init__(config, static=True, **kw)
        self.name = "hier_independent"

    def admit(self, app: AppSpec):
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
        slot = hier_independent_place(app, w, self.predictor, servers[0])
        out = self.place_slot(app, slot, self.predictor.curves[app.app_id].isolation
                              * self.predictor.slot_factor(app.app_id, slot))
        self.decision_time += time.perf_counter() - t0
        return out


def hier_independent_place(app: AppSpec, world: World, predictor, server: int) -> Slot:
    """Core tier: argmax of the isolation estimate over the chosen server's free slots."""
    free = world.free_slots(server=server)
    if not free:
        raise InfeasibleError(f"{app.app_id}: server {server} is full")
    return min(free, key=lambda s: (-predictor.slot_factor(app.app_id, s), _slot_key(world, s)))


SCHEDULERS = {
    "mage": lambda cfg=None: Mage(cfg),
    "mage_static": lambda cfg=None: MageStatic(cfg),
    "greedy": lambda cfg=None: Greedy(),
    "smallest_first": lambda cfg=None: SmallestFirst(),
    "hier_independent": lambda cfg=None: HierIndependent(cfg),
}


def make_scheduler(name: str, config: MageConfig | None = None) -> Scheduler:
    try:
        return SCHEDULERS[name](config)
    except KeyError:
        raise InvalidArgument(f"unknown scheduler {name!r}; choose from {sorted(SCHEDULERS)}") from None
