import numpy as np
import pytest

from fairvolt.grid_model import Device, Line, NetworkSpec, TimeSeriesSet


def make_spec(buses, lines, base_power=400e3, base_voltage=400.0, loads=None, pvs=None, ratings=None):
    """Spec from plain tuples; lines are (from, to, r_ohm, x_ohm)."""
    loads = loads if loads is not None else []
    pvs = pvs if pvs is not None else []
    return NetworkSpec(
        buses=tuple(buses),
        lines=tuple(Line(*ln) for ln in lines),
        slack_bus=buses[0],
        transformer_rating=base_power,
        base_voltage=base_voltage,
        base_power=base_power,
        loads=tuple(Device(i, b) for b, i in loads),
        pvs=tuple(Device(i, b) for b, i in pvs),
        pv_ratings=tuple(ratings if ratings is not None else [5e3] * len(pvs)),
    )


@pytest.fixture
def two_bus():
    """Slack + one customer bus with a 5 kVA inverter."""
    return make_spec(
        ["b0", "b1"],
        [("b0", "b1", 0.0097, 0.0032)],
        loads=[("b1", "L1")],
        pvs=[("b1", "PV1")],
    )


@pytest.fixture
def two_bus_series():
    return TimeSeriesSet(
        load_p=np.array([[1000.0, 1500.0, 800.0, 600.0]]),
        load_q=np.array([[300.0, 450.0, 250.0, 200.0]]),
        pv_p_avail=np.array([[0.0, 2000.0, 4500.0, 0.0]]),
    )


# one (criterion, passed, detail) entry per acceptance criterion, filled by test_acceptance
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
