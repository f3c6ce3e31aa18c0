import pytest

from conftest import make_app
from magesched.baselines import (Greedy, HierIndependent, MageStatic, greedy_place, make_scheduler,
                                 smallest_first_place)
from magesched.errors import InfeasibleError, InvalidArgument
from magesched.matrix import UtilityMatrix
from magesched.runtime import Mage, MageConfig, run_episode
from magesched.simworld import World, base_table, generate_mix, load_platform

FAST = MageConfig(history_apps=6)


def core_class(w, slot):
    return w.cores[(slot.server, slot.core)].core_class


def test_greedy_fills_fastest_class_first(cmp_platform):
    w = World(cmp_platform)
    n_fast = sum(1 for c in w.cores.values() if c.core_class == "ooo1")
    seq = []
    for i in range(n_fast + 1):
        app = make_app(f"a{i}", classes=tuple(cmp_platform.core_classes))
        slot = greedy_place(app, w)
        w.add_app(app)
        w.place(app.app_id, slot)
        seq.append(core_class(w, slot))
    assert seq == ["ooo1"] * n_fast + ["ooo2"]


def test_smallest_first_picks_slowest(cmp_platform):
    w = World(cmp_platform)
    slot = smallest_first_place(make_app("a", classes=tuple(cmp_platform.core_classes)), w)
    assert core_class(w, slot) == "inorder1"


def test_smallest_first_uses_lowest_level():
    plat = load_platform("cluster_dvfs")
    w = World(plat)
    slot = smallest_first_place(make_app("a"), w)
    assert slot.freq_level == min(w.allowed_levels(slot.server, slot.core))
    slot = greedy_place(make_app("b"), w)
    assert slot.freq_level == max(w.allowed_levels(slot.server, slot.core))


def test_agnostic_to_app_characteristics(cmp_platform):
    w = World(cmp_platform)
    quiet = make_app("q", classes=tuple(cmp_platform.core_classes))
    loud = make_app("l", s=(0.9,) * 8, p=(0.9,) * 8, phi=1.0, classes=tuple(cmp_platform.core_classes))
    assert greedy_place(quiet, w) == greedy_place(loud, w)
    assert smallest_first_place(quiet, w) == smallest_first_place(loud, w)


def test_full_world_rejects():
    from conftest import small_platform
    w = World(small_platform(cores=(("big", 1),)))
    w.add_app(make_app("x"))
    w.place("x", w.free_slots()[0])
    with pytest.raises(InfeasibleError):
        greedy_place(make_app("y"), w)
    with pytest.raises(InfeasibleError):
        smallest_first_place(make_app("y"), w)


@pytest.mark.parametrize("name", ["greedy", "smallest_first"])
def test_agnostic_baselines_never_touch_matrix(cmp_platform, name):
    mix = generate_mix(6, 3, cmp_platform)
    before = UtilityMatrix.accesses
    res = run_episode(mix, World(cmp_platform, 3), make_scheduler(name), 5)
    assert UtilityMatrix.accesses == before
    assert res.admissions == 6


def test_static_admissions_identical_to_mage(cmp_platform):
    mix = generate_mix(5, 7, cmp_platform)
    maps = []
    for sched in (Mage(FAST), MageStatic(FAST)):
        w = World(cmp_platform, 7)
        sched.bind(w)
        for a in mix:
            sched.admit(a)
        maps.append(dict(w.assignments))
    assert maps[0] == maps[1]


def test_hier_independent_places_feasibly():
    plat = load_platform("cluster_dvfs")
    mix = generate_mix(10, 1, plat)
    w = World(plat, 1)
    res = run_episode(mix, w, HierIndependent(FAST), 3)
    assert res.admissions == 10 and res.corrections == 0
    w.check_feasible(w.assignments)


def test_insensitive_app_matches_mage_on_single_server(cmp_platform):
    # frequency-sensitive but untouched by co-runners
    app = make_app("q", s=(0.5,) + (0.0,) * 7, phi=0.5, base=100.0)
    app.base_throughput = base_table(100.0, 0.5, app.sensitivity, cmp_platform)
    picks = []
    for sched in (Mage(), HierIndependent()):
        w = World(cmp_platform, 0)
        sched.bind(w)
        sched.admit(app)
        picks.append(core_class(w, w.assignments["q"]))
    assert picks[0] == picks[1]


def test_registry():
    assert isinstance(make_scheduler("greedy"), Greedy)
    assert make_scheduler("mage_static").static
    with pytest.raises(InvalidArgument):
        make_scheduler("paragon")
