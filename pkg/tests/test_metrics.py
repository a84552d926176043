import itertools

import numpy as np
import pytest

from fairvolt.ddpg import EvalTrace
from fairvolt.errors import DomainError
from fairvolt.grid_model import generate_default_feeder
from fairvolt.metrics import ScenarioSummary, format_table, gini, summarize


def gini_brute(x):
    x = np.asarray(x, dtype=float)
    n = len(x)
    if x.sum() == 0:
        return 0.0
    return sum(abs(a - b) for a, b in itertools.product(x, x)) / (2 * n * n * x.mean())


def test_gini_examples():
    assert gini([3.0] * 7) == 0.0
    assert gini([1.0, 0.0]) == 0.5
    assert gini([0.0, 0.0, 0.0]) == 0.0
    assert gini([0.0] * 19 + [2.5]) == pytest.approx(0.95, abs=1e-15)


def test_gini_rejects_negative_and_empty():
    with pytest.raises(DomainError):
        gini([1.0, -0.1])
    with pytest.raises(DomainError):
        gini([])


def test_gini_matches_double_sum():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.exponential(size=int(rng.integers(1, 15))) * (rng.random(1) < 0.9)
        assert gini(x) == pytest.approx(gini_brute(x), abs=1e-12)


@pytest.mark.parametrize("n", range(2, 51))
def test_gini_single_nonzero(n):
    x = np.zeros(n)
    x[n // 3] = 1.7
    assert gini(x) == pytest.approx((n - 1) / n, abs=1e-15)


def test_gini_permutation_is_bit_exact():
    rng = np.random.default_rng(5)
    for _ in range(500):
        x = rng.exponential(size=int(rng.integers(2, 40)))
        assert gini(rng.permutation(x)) == gini(x)


def test_gini_range():
    rng = np.random.default_rng(1)
    for _ in range(200):
        g = gini(rng.exponential(size=int(rng.integers(1, 30))))
        assert 0.0 <= g < 1.0


def _trace(curtail, v, p_avail, step_hours=0.25):
    n, m = curtail.shape
    z = np.zeros((n, m))
    return EvalTrace(
        t=np.arange(100, 100 + n),
        v_mag=v,
        converged=np.ones(n, dtype=bool),
        actions=z,
        p_avail=p_avail,
        q_cmd=z,
        p_out=p_avail - curtail,
        curtail=curtail,
        r_v=np.zeros(n),
        r_a=np.zeros(n),
        r_f=np.zeros(n),
        total=np.zeros(n),
        weights=(1000.0, 5.0, 25.0),
        step_hours=step_hours,
    )


def test_summary_energy_integration():
    spec, _, _ = generate_default_feeder(2, seed=0, n_days=1)
    curtail = np.zeros((4, 2))
    curtail[:, 1] = 1000.0
    s = summarize(_trace(curtail, np.ones((4, 3)), np.full((4, 2), 2000.0)), spec)
    assert s.curtailed_mwh == pytest.approx(0.001, abs=1e-15)
    assert s.total_pv_mwh == pytest.approx(0.004, abs=1e-15)
    assert [g for _, g in s.gini_series] == [0.5] * 4
    assert s.t_start == 100 and s.t_end == 104


def test_summary_zero_curtailment_and_violation_units():
    spec, _, _ = generate_default_feeder(2, seed=0, n_days=1)
    v = np.ones((3, 3))
    v[0, 1:] = [0.94, 0.93]  # one step, two under-voltage buses
    v[2, 2] = 1.06
    tr = _trace(np.zeros((3, 2)), v, np.ones((3, 2)))
    s = summarize(tr, spec)
    assert (s.n_under, s.n_over) == (1, 1)
    assert s.curtailed_mwh == 0.0 and s.gini_series == []
    assert np.isnan(s.median_gini)
    assert (s.v_min_seen, s.v_max_seen) == (0.93, 1.06)
    s2 = summarize(tr, spec, count_unit="bus_steps")
    assert (s2.n_under, s2.n_over) == (2, 1)


def test_total_pv_matches_series_integration():
    spec, series, _ = generate_default_feeder(3, seed=4, n_days=2)
    sl = slice(40, 150)
    p = series.pv_p_avail[:, sl].T
    tr = _trace(np.zeros_like(p), np.ones((p.shape[0], 4)), p)
    expected = sum(series.pv_p_avail[i, t] * 0.25 for i in range(3) for t in range(40, 150)) / 1e6
    assert summarize(tr, spec).total_pv_mwh == pytest.approx(expected, rel=1e-12)


def test_summary_json_round_trip():
    s = ScenarioSummary("d", 0, 10, 5.0, 1.0, 0, 0, 0.96, 1.04, [(3, 0.2), (4, 0.4)])
    back = ScenarioSummary.from_json(s.to_json())
    assert back == s
    assert back.median_gini == pytest.approx(0.3)


def test_format_table_columns():
    s = ScenarioSummary("a", 0, 10, 5.0, 0.0, 3, 4, 0.93, 1.08, [])
    text = format_table([s, s])
    lines = text.splitlines()
    assert "Curtailed (MWh)" in lines[0] and "Median Gini" in lines[0]
    assert len(lines) == 4
    assert lines[2] == lines[3]
