import pytest

from magesched.simworld import AppSpec, ClusterConfig, load_platform


def make_app(app_id, s=None, p=None, phi=0.0, base=100.0, kind="batch", stateless=False, state=1e9,
             classes=("big",), **kw):
    s = tuple(s or (0.0,) * 8)
    p = tuple(p or (0.0,) * 8)
    table = {c: base for c in classes}
    table["reference"] = base
    return AppSpec(app_id, kind, stateless, state, base, phi, s, p, table, **kw)


def small_platform(cores=(("big", 2),), smt=1, dvfs=False, levels=20, nominal=2.0, servers=1, deficit=None):
    """Single-class toy platform: ``cores`` lists (core class, count) groups of one server class."""
    classes = sorted({c for c, _ in cores})
    return ClusterConfig.from_dict({
        "name": "toy",
        "reference_clock": nominal,
        "dvfs": dvfs,
        "dvfs_levels": levels,
        "core_classes": [{"class_id": c, "nominal_freq": nominal, "smt_threads": smt,
                          "deficit": (deficit or {}).get(c, [0.0] * 8)} for c in classes],
        "server_classes": [{"class_id": "S", "core_groups": [list(g) for g in cores]}],
        "servers": [["S", servers]],
    })


@pytest.fixture(scope="session")
def cmp_platform():
    return load_platform("cmp")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
