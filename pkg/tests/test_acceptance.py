"""Acceptance criteria, one test per criterion.

Every test records a PASS/FAIL line that is printed in the terminal summary.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, make_app, small_platform
from magesched import protocol
from magesched.baselines import HierIndependent, make_scheduler
from magesched.factorization import (FactorModel, SgdConfig, impute_and_init, jacobi_svd, learning_rate,
                                     parallel_sgd_refine, reconstruct, sgd_refine, sgd_step)
from magesched.harness import ExperimentConfig, run_density_sweep, run_experiment, run_heterogeneity_sweep
from magesched.inference import profile_reference, record, run_sgd1, run_sgd2, run_sgd3, single_stage_random_init
from magesched.matrix import ColumnKind, UtilityMatrix
from magesched.placement import enumerate_candidates
from magesched.runtime import (ContextSwitch, Mage, MageConfig, MigrateToIdleServer, MigrateToUsedServer,
                               QoSEvent, Terminate, ThrottleBestEffort, monitor_tick, profile_dense, run_episode)
from magesched.simworld import (BEST_EFFORT, LATENCY_CRITICAL, ClusterConfig, MixConfig, Phase, Slot, World,
                                generate_mix, load_platform)


def verdict(n, ok, detail, elapsed=None, budget=None):
    in_time = budget is None or elapsed is None or elapsed < budget
    timing = f" [{elapsed:.1f}s" if elapsed is not None else ""
    if timing:
        timing += f" / budget {budget:.0f}s]" if budget is not None else "]"
    line = f"{'PASS' if ok and in_time else 'FAIL'} criterion {n}: {detail}{timing}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert in_time, line


def dense_matrix(values):
    m, d = values.shape
    a = UtilityMatrix([ColumnKind.isolation()] + [ColumnKind.placement(str(j)) for j in range(1, d)], m)
    for u in range(m):
        for i in range(d):
            a.insert(u, i, float(values[u, i]))
    return a


def completion_instance(seed=0):
    """Rank-5 200x120 matrix scaled to [10, 100] with 25% of its cells observed."""
    rng = np.random.default_rng(seed)
    truth = rng.uniform(0, 1, (200, 5)) @ rng.uniform(0, 1, (5, 120))
    truth = 10 + 90 * (truth - truth.min()) / (truth.max() - truth.min())
    seen = rng.random(truth.shape) < 0.25
    a = UtilityMatrix([ColumnKind.isolation()] + [ColumnKind.placement(str(j)) for j in range(1, 120)], 200)
    for u, i in zip(*np.nonzero(seen)):
        a.insert(int(u), int(i), float(truth[u, i]))
    return a, truth, seen


def test_criterion_01_sgd_correctness():
    t0 = time.perf_counter()
    q, p = np.array([1.0, 0.0]), np.array([0.5, 0.5])
    q2, p2 = sgd_step(q, p, 1.0, 0.1, 0.05)
    hand = max(np.abs(q2 - [1.045, 0.05]).max(), np.abs(p2 - [0.5975, 0.4975]).max())
    q3, p3 = sgd_step(q, p, 0.5, 0.3, 0.0)
    fixed = max(np.abs(q3 - q).max(), np.abs(p3 - p).max())
    q4, p4 = sgd_step(q, p, 0.5, 0.1, 0.05)
    shrink = max(np.abs(q4 - q * (1 - 0.1 * 0.05)).max(), np.abs(p4 - p * (1 - 0.1 * 0.05)).max())
    rates = max(abs(learning_rate(0.05, 1) - 0.05), abs(learning_rate(0.05, 10) - 0.005))
    worst = max(hand, fixed, shrink, rates)
    verdict(1, worst <= 1e-12, f"max deviation {worst:.2e} (<= 1e-12)", time.perf_counter() - t0, 1)


def test_criterion_02_svd_recovery():
    jacobi_svd(np.eye(2))  # load the compiled kernel before timing
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    a = np.outer(rng.uniform(1, 2, 5), rng.uniform(1, 2, 4)) + np.outer(rng.uniform(0, 1, 5), rng.uniform(0, 1, 4))
    rank2_err = np.abs(reconstruct(impute_and_init(dense_matrix(a), 2)) - a).max()
    _, s, _ = jacobi_svd(np.diag([3.0, 2.0, 1.0]))
    diag_err = np.abs(s - [3, 2, 1]).max()
    verdict(2, rank2_err < 1e-8 and diag_err <= 1e-10,
            f"rank-2 error {rank2_err:.1e} (< 1e-8), singular values error {diag_err:.1e} (<= 1e-10)",
            time.perf_counter() - t0, 1)


def holdout_rmse(model, truth, seen):
    err = reconstruct(model)[~seen] - truth[~seen]
    return float(np.sqrt(np.mean(err ** 2)) / np.sqrt(np.mean(truth[~seen] ** 2)))


def test_criterion_03_completion_accuracy():
    t0 = time.perf_counter()
    a, truth, seen = completion_instance()
    res = sgd_refine(a, impute_and_init(a, 5, refill_sweeps=60), SgdConfig())
    err = holdout_rmse(res.model, truth, seen)
    verdict(3, err <= 0.10, f"holdout relative RMSE {err:.4f} (<= 0.10)", time.perf_counter() - t0, 30)


def test_criterion_04_density_trend(tmp_path):
    t0 = time.perf_counter()
    res = run_density_sweep(ExperimentConfig(mix_count=20, density_runs=[1, 2, 3]), tmp_path)
    e = {s["runs"]: s["mean_error"] for s in res["summary"]}
    ok = e[1] > e[2] > e[3] and e[3] < 0.5 * e[1]
    verdict(4, ok, f"mean error 1/2/3 runs = {e[1]:.4f}/{e[2]:.4f}/{e[3]:.4f}, ratio {e[3] / e[1]:.2f} (< 0.5)",
            time.perf_counter() - t0, 300)


def staged_vs_single(seed, platform, cfg):
    w = World(platform, seed)
    hist = generate_mix(16, seed + 1_000_003, platform, prefix="hist")
    apps = generate_mix(4, seed, platform)
    for a in apps:
        w.add_app(a)
    m = UtilityMatrix.with_reference(8, 10)
    for h in hist:
        r = m.add_row()
        for col, v in profile_dense(h, w):
            m.insert(r, m.column_index(col), v)
    rows = {}
    for a in apps:
        rows[a.app_id] = m.add_row()
        record(m, rows[a.app_id], profile_reference(a, w, seed))
    _, _, model = run_sgd1(m, cfg)
    cands = enumerate_candidates([a.app_id for a in apps], w, cap=50, seed=seed)
    m.concat_placement_columns([c.mapping_id for c in cands])
    seen = cands[seed % len(cands)]
    for a, v in w.perf_table(seen.as_dict()).items():
        m.insert(rows[a], m.placement_index(seen.mapping_id), v * w.noise())
    rows_for = {m.placement_index(c.mapping_id): [rows[a] for a in c.apps] for c in cands}
    m2, rep2 = run_sgd2(m, model, cfg)
    _, rep3, _ = run_sgd3(m, m2, seed, cfg, rows_for)
    single = single_stage_random_init(m, seed, cfg, rows_for_column=rows_for)
    return rep2.iterations + rep3.iterations, single.iterations_used


def test_criterion_05_staged_savings(cmp_platform):
    t0 = time.perf_counter()
    pairs = [staged_vs_single(seed, cmp_platform, SgdConfig()) for seed in range(20)]
    staged = float(np.median([p[0] for p in pairs]))
    single = float(np.median([p[1] for p in pairs]))
    verdict(5, staged <= single, f"median iterations staged {staged:.0f} vs single-stage {single:.0f}",
            time.perf_counter() - t0, 300)


def test_criterion_06_placement_optimality(cmp_platform):
    t0 = time.perf_counter()
    d = cmp_platform.to_dict()
    d["server_classes"][0]["core_groups"] = [["ooo1", 1], ["ooo2", 1], ["atom", 1], ["inorder1", 1]]
    plat = ClusterConfig.from_dict(d)
    hits = 0
    for trial in range(100):
        apps = generate_mix(4, trial, plat)
        w = World(plat, trial)
        run_episode(apps, w, Mage(static=True), 0)
        got = w.gmean(dict(w.assignments))
        slots = [Slot(0, c, 0) for c in range(4)]
        best = max(w.gmean({a.app_id: s for a, s in zip(apps, perm)}) for perm in itertools.permutations(slots))
        hits += got >= 0.9 * best
    verdict(6, hits >= 90, f"{hits}/100 trials within 10% of the brute-force optimum (>= 90)",
            time.perf_counter() - t0, 300)


def bootstrap_low(diffs, seed=0, n=10_000):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diffs), (n, len(diffs)))
    return float(np.percentile(np.asarray(diffs)[idx].mean(axis=1), 2.5))


def test_criterion_07_scheduler_ordering(tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(scenario="cmp", mix_count=50,
                           schedulers=["mage", "mage_static", "greedy", "smallest_first"])
    res = run_experiment(cfg, tmp_path)
    mean = {s["scheduler"]: s["gmean"] for s in res["summary"]}
    by = {}
    for r in res["rows"]:
        by.setdefault(r["mix_id"], {})[r["scheduler"]] = r["gmean"]
    low = bootstrap_low([v["mage"] - v["greedy"] for v in by.values()])
    ordered = mean["mage"] >= mean["mage_static"] >= mean["greedy"] >= mean["smallest_first"]
    verdict(7, ordered and low > 0,
            "mean gmean mage {mage:.2f} >= static {mage_static:.2f} >= greedy {greedy:.2f} >= "
            "smallest-first {smallest_first:.2f}; ".format(**mean) + f"95% CI low of mage-greedy {low:.3f} (> 0)",
            time.perf_counter() - t0, 900)


C8_APPS, C8_DURATION = 20, 10


def test_criterion_08_hierarchical_gap():
    t0 = time.perf_counter()
    plat = load_platform("cluster_dvfs")
    heavy = MixConfig(pressure_scale=(0.4, 0.8))
    mage, hier = [], []
    for seed in range(50):
        mix = generate_mix(C8_APPS, seed, plat, heavy)
        mage.append(run_episode(mix, World(plat, seed), make_scheduler("mage"), C8_DURATION).gmean)
        hier.append(run_episode(mix, World(plat, seed), HierIndependent(), C8_DURATION).gmean)
    verdict(8, np.mean(mage) >= np.mean(hier),
            f"mean gmean mage {np.mean(mage):.2f} >= hier-independent {np.mean(hier):.2f} over 50 seeds",
            time.perf_counter() - t0, 900)


C9_MIXES, C9_APPS, C9_DURATION = 8, 30, 20


def test_criterion_09_heterogeneity(tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(degrees=[2, 8], mix_count=C9_MIXES, apps_per_mix=C9_APPS, duration=C9_DURATION)
    res = run_heterogeneity_sweep(cfg, tmp_path)
    imp = {s["degree"]: s["improvement"] for s in res["summary"]}
    verdict(9, imp[8] > imp[2], f"mean improvement over greedy degree 8 {imp[8]:.3f} > degree 2 {imp[2]:.3f}",
            time.perf_counter() - t0, 900)


def _scripted(plat, apps, slots):
    w = World(plat, 0)
    m = Mage(MageConfig(history_apps=6))
    m.bind(w)
    for a in apps:
        m.admit(a)
    w.apply(slots)
    return w, m


def _violation(m, app_id):
    return QoSEvent(app_id, 100.0, m.world.true_perf(app_id), 0.5, m.world.clock)


def test_criterion_10_runtime_behavior():
    t0 = time.perf_counter()
    checks = {}

    # a 30% drop at t = 5 s must be flagged on the first tick at or after it
    app = make_app("x")
    app.phases.append(Phase(5.0, app.sensitivity, app.pressure, 0.0, {"big": 70.0, "reference": 70.0}))
    w = World(small_platform(cores=(("big", 2),)), 0)
    g = make_scheduler("greedy")
    g.bind(w)
    g.admit(app)
    g.expected["x"] = 100.0
    first = None
    for _ in range(8):
        if monitor_tick(w, g) and first is None:
            first = w.clock
    checks["detection"] = first is not None and first - 5.0 <= g.period

    # outcome 1: a faster free core on the same server
    x = make_app("x", classes=("big", "small"))
    x.base_throughput["small"] = 30.0
    w, m = _scripted(small_platform(cores=(("big", 1), ("small", 1))), [x], {"x": Slot(0, 1, 0)})
    checks["context switch first"] = isinstance(m.correct(_violation(m, "x")), ContextSwitch)

    # outcome 2, then 3: two heavy apps crowd one server
    busy = (0.6,) * 8
    two = small_platform(cores=(("big", 2),), servers=2)
    a, b, z = make_app("a", s=busy, p=busy), make_app("b", s=busy, p=busy, stateless=True), make_app("z")
    w, m = _scripted(two, [a, b, z], {"a": Slot(0, 0, 0), "b": Slot(0, 1, 0), "z": Slot(1, 0, 0)})
    act = m.correct(_violation(m, "a"))
    checks["migration to used server, stateless first"] = isinstance(act, MigrateToUsedServer) and act.app_id == "b"
    a, b = make_app("a", s=busy, p=busy), make_app("b", s=busy, p=busy, stateless=True)
    w, m = _scripted(two, [a, b], {"a": Slot(0, 0, 0), "b": Slot(0, 1, 0)})
    act = m.correct(_violation(m, "a"))
    checks["idle server for a stateless app"] = isinstance(act, MigrateToIdleServer) and act.app_id == "b"
    lc = make_app("lc", s=busy, p=busy, kind=LATENCY_CRITICAL, qos_target=1000.0)
    be = make_app("be", s=busy, p=busy, kind=BEST_EFFORT)
    w, m = _scripted(small_platform(cores=(("big", 2),)), [lc, be], {"lc": Slot(0, 0, 0), "be": Slot(0, 1, 0)})
    seq = []
    for _ in range(3):
        w.clock += m.period  # one monitoring report per tick
        seq.append(m.correct(_violation(m, "lc")))
    checks["throttle before terminate"] = seq == [ThrottleBestEffort("be", 0.75), ThrottleBestEffort("be", 0.5),
                                                  Terminate("be")]

    # every stateful cross-server migration carries an audit entry
    plat = load_platform("cluster_dvfs")
    audited_ok = True
    for seed in range(3):
        mix = generate_mix(12, seed, plat, MixConfig(phase_prob=1.0, pressure_scale=(0.4, 0.8)))
        res = run_episode(mix, World(plat, seed), make_scheduler("mage", MageConfig(history_apps=6)), 10)
        stateless = {a.app_id for a in mix if a.stateless}
        audited = {e["stateful_migration"] for e in res.audit}
        for _, _, act in res.actions:
            if isinstance(act, MigrateToUsedServer) and not act.stateless:
                audited_ok &= act.app_id in audited
            if isinstance(act, MigrateToIdleServer):
                audited_ok &= act.app_id in stateless
    checks["stateless-preference audit"] = audited_ok

    failed = [k for k, v in checks.items() if not v]
    verdict(10, not failed, f"{len(checks) - len(failed)}/{len(checks)} runtime checks"
            + (f", failed: {failed}" if failed else ""), time.perf_counter() - t0, 120)


def test_criterion_11_parallel_sgd():
    t0 = time.perf_counter()
    a, _, _ = completion_instance()
    start = impute_and_init(a, 5)
    cfg = SgdConfig()
    t_serial = time.perf_counter()
    serial = sgd_refine(a, start, cfg)
    t_serial = time.perf_counter() - t_serial
    one = parallel_sgd_refine(a, start, cfg, workers=1)
    t_par = time.perf_counter()
    four = parallel_sgd_refine(a, start, cfg, workers=4)
    t_par = time.perf_counter() - t_par
    identical = one.rmse_trace == serial.rmse_trace and np.array_equal(one.model.row_factors,
                                                                      serial.model.row_factors)
    rel = abs(four.final_rmse - serial.final_rmse) / serial.final_rmse
    verdict(11, identical and rel <= 0.05,
            f"workers=1 bit-identical {identical}; workers=4 final RMSE within {rel:.2%} (<= 5%); "
            f"speedup {t_serial / t_par:.2f}x (informational)", time.perf_counter() - t0, 120)


def test_criterion_12_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(mix_count=2, apps_per_mix=5, duration=5, history_apps=8,
                           schedulers=["mage", "mage_static", "greedy", "smallest_first", "hier_independent"],
                           degrees=[2], n_servers=6, density_runs=[1, 3])
    same = True
    for run in (run_experiment, run_density_sweep, run_heterogeneity_sweep):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run(cfg, out_a)
        run(cfg, out_b)
        for path in sorted(out_a.glob("*.csv")):
            if path.name == "timing.csv":
                continue  # wall-clock measurements
            same &= path.read_bytes() == (out_b / path.name).read_bytes()
    names = sorted(p.name for p in out_a.glob("*.csv") if p.name != "timing.csv")
    verdict(12, same, f"byte-identical reruns of {', '.join(names)}", time.perf_counter() - t0)
