import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_app, small_platform
from magesched.errors import ConfigError, InvalidArgument
from magesched.simworld import (BATCH, LATENCY_CRITICAL, MixConfig, Slot, World, generate_mix,
                                heterogeneous_platform, load_platform, make_kernel_app, migration_cost,
                                true_perf)


def test_presets_mirror_tables(cmp_platform):
    cl = load_platform("cluster")
    assert cl.n_servers == 40
    assert [n for _, n in cl.servers] == [10, 10, 8, 12]
    assert sum(sc.core_count for sc in cmp_platform.server_classes.values()) == 16
    dv = load_platform("cluster_dvfs")
    assert dv.dvfs and len(dv.freq_levels("s1core")) == 20
    levels = dv.freq_levels("s1core")
    assert levels[0] == 1.0 and levels[-1] == 2.0
    assert np.allclose(np.diff(levels), np.diff(levels)[0])


def test_unknown_preset_and_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        load_platform("nope")
    bad = tmp_path / "x.json"
    bad.write_text('{"name": "x",\n "core_classes": [}')
    with pytest.raises(ConfigError, match="line 2"):
        load_platform(bad)


def test_isolation_at_nominal_is_base():
    w = World(small_platform())
    app = make_app("a", s=[0.5] * 8, phi=0.7)
    w.add_app(app)
    assert true_perf(app, Slot(0, 0, 0), {}, w) == 100.0


def test_hand_evaluated_interference():
    plat = small_platform(smt=2, dvfs=True, levels=2)
    w = World(plat)
    app = make_app("a", s=[0.5] + [0.0] * 7, phi=1.0)
    other = make_app("b", p=[1.0] + [0.0] * 7)
    w.add_app(app)
    w.add_app(other)
    # level 0 is 1.0 GHz, half of the 2.0 GHz nominal; the co-runner shares the SMT core
    assert true_perf(app, Slot(0, 0, 0), {"b": Slot(0, 0, 1)}, w) == pytest.approx(25.0, abs=1e-12)
    # on the other core only server- and domain-scoped resources are shared
    assert true_perf(app, Slot(0, 0, 0), {"b": Slot(0, 1, 1)}, w) == pytest.approx(50.0, abs=1e-12)


def test_insensitive_app_ignores_co_runners():
    w = World(small_platform(smt=2))
    app = make_app("a")
    w.add_app(app)
    w.add_app(make_app("b", p=[1.0] * 8))
    assert true_perf(app, Slot(0, 0, 0), {"b": Slot(0, 0, 0)}, w) == 100.0


def test_delta_floor():
    w = World(small_platform(smt=2))
    app = make_app("a", s=[1.0] * 8)
    w.add_app(app)
    w.add_app(make_app("b", p=[1.0] * 8))
    assert true_perf(app, Slot(0, 0, 0), {"b": Slot(0, 0, 0)}, w) == pytest.approx(100 * 0.05 ** 8)


vec = st.lists(st.floats(0, 1), min_size=8, max_size=8)


@settings(max_examples=60)
@given(vec, vec, vec, st.floats(0, 1))
def test_adding_a_co_runner_never_helps(s, p1, p2, phi):
    w = World(small_platform(cores=(("big", 3),), smt=2))
    app = make_app("a", s=s, phi=phi)
    for x in (app, make_app("b", p=p1), make_app("c", p=p2)):
        w.add_app(x)
    one = true_perf(app, Slot(0, 0, 0), {"b": Slot(0, 0, 0)}, w)
    two = true_perf(app, Slot(0, 0, 0), {"b": Slot(0, 0, 0), "c": Slot(0, 1, 0)}, w)
    assert two <= one + 1e-12


@settings(max_examples=40)
@given(st.floats(0, 1), vec)
def test_frequency_monotone(phi, s):
    w = World(small_platform(dvfs=True))
    app = make_app("a", s=s, phi=phi)
    w.add_app(app)
    perf = [true_perf(app, Slot(0, 0, lvl), {}, w) for lvl in range(20)]
    assert all(a <= b + 1e-12 for a, b in zip(perf, perf[1:]))


def test_kernel_apps():
    k = make_kernel_app(2, 10)
    assert k.pressure[2] == 1.0 and sum(k.pressure) == 1.0
    assert make_kernel_app(0, 1).pressure[0] == pytest.approx(0.1)
    assert sum(k.sensitivity) == 0 and k.kind == "best_effort"
    with pytest.raises(InvalidArgument):
        make_kernel_app(8, 1)


def test_migration_costs():
    a = make_app("a", stateless=True, state=200e6)
    assert migration_cost(a, 1, 1) == 0.01
    assert migration_cost(a, 1, 2) == pytest.approx(0.66)
    assert migration_cost(make_app("b", state=8e9), 0, 3) == pytest.approx(6.9)


def test_noiseless_measurements_equal_truth():
    w = World(small_platform(), noise_sigma=0.0)
    w.add_app(make_app("a", s=[0.3] * 8))
    w.place("a", Slot(0, 0, 0))
    assert w.run_interval(1.0)["a"] == w.true_perf("a")


def test_noise_mean_and_determinism():
    def samples(seed):
        w = World(small_platform(), seed=seed)
        w.add_app(make_app("a"))
        w.place("a", Slot(0, 0, 0))
        return [w.run_interval(1.0)["a"] for _ in range(1000)]

    a = samples(3)
    assert a == samples(3)
    assert abs(np.mean(a) / 100.0 - 1.0) < 0.005


def test_mix_ratio_and_support(cmp_platform):
    mix = generate_mix(10, 4, cmp_platform)
    kinds = [a.kind for a in mix]
    assert kinds.count(LATENCY_CRITICAL) == 4 and kinds.count(BATCH) == 6
    for a in mix:
        assert all(0 <= x <= 1 for x in a.sensitivity + a.pressure)
    again = generate_mix(10, 4, cmp_platform)
    assert [(a.sensitivity, a.pressure, a.intrinsic) for a in mix] == \
           [(a.sensitivity, a.pressure, a.intrinsic) for a in again]


def test_best_effort_share(cmp_platform):
    mix = generate_mix(10, 0, cmp_platform, MixConfig(best_effort_fraction=0.2))
    assert sum(a.kind == "best_effort" for a in mix) == 2


def test_feasibility_checks():
    w = World(small_platform())
    w.add_app(make_app("a"))
    w.add_app(make_app("b"))
    w.place("a", Slot(0, 0, 0))
    with pytest.raises(InvalidArgument):
        w.place("b", Slot(0, 0, 0))
    with pytest.raises(InvalidArgument):
        w.place("b", Slot(0, 5, 0))


def test_dvfs_cores_are_pinned():
    w = World(load_platform("cluster_dvfs"), seed=1)
    for (s, c), core in w.cores.items():
        assert w.allowed_levels(s, c) == (core.pinned_level,)


def test_phase_change_switches_profile():
    w = World(small_platform(smt=2))
    app = make_app("a")
    from magesched.simworld import Phase
    app.phases.append(Phase(5.0, (1.0,) * 8, (0.0,) * 8, 0.0, {"big": 50.0, "reference": 50.0}))
    w.add_app(app)
    w.place("a", Slot(0, 0, 0))
    assert w.true_perf("a", t=4.0) == 100.0
    assert w.true_perf("a", t=6.0) == 50.0


def test_trajectory_and_world_determinism(tmp_path, cmp_platform):
    def run(seed):
        w = World(cmp_platform, seed, log_trajectory=True)
        for i, a in enumerate(generate_mix(4, seed, cmp_platform)):
            w.add_app(a)
            w.place(a.app_id, w.free_slots()[0])
        for _ in range(5):
            w.run_interval(1.0)
        return w

    a, b = run(2), run(2)
    assert a.trajectory == b.trajectory
    a.write_trajectory(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("time,app,server,core,freq,true_perf,measured_perf")


@pytest.mark.parametrize("degree", [2, 4, 8, 10])
def test_heterogeneous_platforms_keep_size(degree):
    p = heterogeneous_platform(degree)
    assert p.n_servers == 40 and len(p.server_classes) == degree
    with pytest.raises(ConfigError):
        heterogeneous_platform(11)
