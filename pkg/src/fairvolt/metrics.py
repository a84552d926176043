"""Curtailment fairness and per-scenario summary statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .grid_model import NetworkSpec

COUNT_UNITS = ("steps", "bus_steps")


def gini(values) -> float:
    """Gini index of non-negative values; 0 for an all-zero vector.

    Uses the sorted form sum((2i - n - 1) x_(i)) / (n sum(x)), which equals
    the mean-absolute-difference definition.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("gini of an empty vector")
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("gini needs non-negative values")
    x = np.sort(x)  # sum after sorting so the result is independent of input order
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    rank_weight = 2.0 * np.arange(1, n + 1) - n - 1
    return float(np.dot(rank_weight, x) / total / n)


@dataclass
class ScenarioSummary:
    scenario: str
    t_start: int
    t_end: int
    total_pv_mwh: float
    curtailed_mwh: float
    n_under: int
    n_over: int
    v_min_seen: float
    v_max_seen: float
    gini_series: list[tuple[int, float]] = field(default_factory=list)

    @property
    def median_gini(self) -> float:
        if not self.gini_series:
            return float("nan")
        return float(np.median([g for _, g in self.gini_series]))

    def to_json(self) -> str:
        d = asdict(self)
        d["gini_series"] = [[int(t), float(g)] for t, g in self.gini_series]
        d["median_gini"] = None if not self.gini_series else self.median_gini
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSummary":
        d = json.loads(text)
        d.pop("median_gini", None)
        d["gini_series"] = [(int(t), float(g)) for t, g in d["gini_series"]]
        return cls(**d)


def summarize(trace, spec: NetworkSpec, scenario: str = "", count_unit: str = "steps") -> ScenarioSummary:
    """Table-style statistics of an evaluation trace.

    Energies integrate power over the step length. Violations count time
    steps with at least one bus outside the band (``count_unit="steps"``)
    or every violating bus-step (``"bus_steps"``). The Gini series only
    covers steps where some inverter was curtailed.
    """
    if len(trace) == 0:
        raise DomainError("empty trace")
    if count_unit not in COUNT_UNITS:
        raise ValueError(f"count_unit must be one of {COUNT_UNITS}")
    hours = trace.step_hours
    under = trace.v_mag < spec.v_min
    over = trace.v_mag > spec.v_max
    if count_unit == "steps":
        n_under, n_over = int(under.any(axis=1).sum()), int(over.any(axis=1).sum())
    else:
        n_under, n_over = int(under.sum()), int(over.sum())
    curtailed_steps = np.flatnonzero((trace.curtail > 0).any(axis=1))
    return ScenarioSummary(
        scenario=scenario,
        t_start=int(trace.t[0]),
        t_end=int(trace.t[-1]) + 1,
        total_pv_mwh=float(trace.p_avail.sum() * hours / 1e6),
        curtailed_mwh=float(trace.curtail.sum() * hours / 1e6),
        n_under=n_under,
        n_over=n_over,
        v_min_seen=float(trace.v_mag.min()),
        v_max_seen=float(trace.v_mag.max()),
        gini_series=[(int(trace.t[i]), gini(trace.curtail[i])) for i in curtailed_steps],
    )


TABLE_COLUMNS = (
    "Scenario",
    "Total PV (MWh)",
    "Curtailed (MWh)",
    "# Under",
    "# Over",
    "Min V (pu)",
    "Max V (pu)",
    "Median Gini",
)


def format_table(summaries: list[ScenarioSummary]) -> str:
    rows = []
    for s in summaries:
        med = s.median_gini
        rows.append(
            (
                s.scenario or "-",
                f"{s.total_pv_mwh:.3f}",
                f"{s.curtailed_mwh:.3f}",
                str(s.n_under),
                str(s.n_over),
                f"{s.v_min_seen:.4f}",
                f"{s.v_max_seen:.4f}",
                "-" if np.isnan(med) else f"{med:.3f}",
            )
        )
    widths = [max(len(h), *(len(r[j]) for r in rows)) for j, h in enumerate(TABLE_COLUMNS)]
    fmt = " | ".join(f"{{:>{w}}}" for w in widths)
    lines = [fmt.format(*TABLE_COLUMNS), "-+-".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines) + "\n"
