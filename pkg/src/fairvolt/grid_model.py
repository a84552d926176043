"""Feeder topology, device sets and load/PV time series.

Network files use a small sectioned text format::

    [buses]
    b0
    b1
    [lines]          # from,to,r_ohm,x_ohm
    b0,b1,0.0097,0.0032
    [slack]
    b0
    [transformer_va]
    400000
    [base_v]
    400
    [vmin]
    0.95
    [vmax]
    1.05
    [loads]          # bus,id
    b1,L1
    [pvs]            # bus,id,s_rated_va
    b1,PV1,5500

An optional ``[base_va]`` section overrides the per-unit power base, which
otherwise equals the transformer rating.

Profile CSVs carry a header ``t,load_p:<id>...,load_q:<id>...,pv_p:<id>...``
with one row per time step in W / var.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError, TopologyError

DEFAULT_SPAN_R_OHM = 0.0097  # 30 m of 0.32 ohm/km
DEFAULT_SPAN_X_OHM = 0.0032  # 30 m of 0.105 ohm/km
DEFAULT_TRANSFORMER_VA = 400e3
DEFAULT_BASE_V = 400.0
S_RATED_HEADROOM = 1.1
LOAD_POWER_FACTOR = 0.95


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    r_ohm: float
    x_ohm: float


@dataclass(frozen=True)
class Device:
    id: str
    bus: str


@dataclass(frozen=True)
class InverterSpec:
    gen_id: str
    s_rated: float

    def __post_init__(self):
        if not self.s_rated > 0:
            raise ValueError(f"inverter {self.gen_id}: s_rated must be > 0")


@dataclass(frozen=True)
class NetworkSpec:
    """Radial feeder: buses, lines, slack and device attachments.

    ``pv_ratings`` holds the inverter apparent-power rating (VA) of each
    entry in ``pvs``, in the same order.
    """

    buses: tuple[str, ...]
    lines: tuple[Line, ...]
    slack_bus: str
    transformer_rating: float
    base_voltage: float
    base_power: float
    loads: tuple[Device, ...]
    pvs: tuple[Device, ...]
    pv_ratings: tuple[float, ...]
    v_min: float = 0.95
    v_max: float = 1.05

    def __post_init__(self):
        for name in ("buses", "lines", "loads", "pvs", "pv_ratings"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (self.base_power > 0 and self.base_voltage > 0):
            raise ValueError("base_power and base_voltage must be positive")
        if not self.transformer_rating > 0:
            raise ValueError("transformer_rating must be positive")
        if not (0 < self.v_min < 1 < self.v_max):
            raise ValueError(f"need 0 < v_min < 1 < v_max, got {self.v_min}, {self.v_max}")
        for ln in self.lines:
            if ln.r_ohm < 0 or ln.x_ohm < 0:
                raise ValueError(f"negative impedance on line {ln.from_bus}-{ln.to_bus}")
        if len(self.pv_ratings) != len(self.pvs):
            raise ShapeError("pv_ratings must match pvs")
        for s in self.pv_ratings:
            if not s > 0:
                raise ValueError("pv ratings must be positive")
        self._check_topology()
        self._check_devices()

    def _check_topology(self):
        if len(set(self.buses)) != len(self.buses):
            raise TopologyError("duplicate bus id")
        if self.slack_bus not in self.buses:
            raise TopologyError(f"slack bus {self.slack_bus!r} not in buses")
        if len(self.lines) != len(self.buses) - 1:
            raise TopologyError(
                f"radial feeder needs |lines| = |buses| - 1 ({len(self.buses) - 1}), got {len(self.lines)}"
            )
        known = set(self.buses)
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise TopologyError(f"line {ln.from_bus}-{ln.to_bus} references unknown bus")
            if ln.from_bus == ln.to_bus:
                raise TopologyError(f"self-loop at {ln.from_bus}")
        # n-1 edges + everything reachable => tree
        if len(self._bfs()[0]) != len(self.buses):
            raise TopologyError("feeder is disconnected or contains a loop")

    def _check_devices(self):
        known = set(self.buses)
        for kind, devs in (("load", self.loads), ("pv", self.pvs)):
            ids = [d.id for d in devs]
            if len(set(ids)) != len(ids):
                raise TopologyError(f"duplicate {kind} id")
            for d in devs:
                if d.bus not in known:
                    raise TopologyError(f"{kind} {d.id} attached to unknown bus {d.bus!r}")

    def _bfs(self):
        adj: dict[str, list[tuple[str, int]]] = {b: [] for b in self.buses}
        for k, ln in enumerate(self.lines):
            adj[ln.from_bus].append((ln.to_bus, k))
            adj[ln.to_bus].append((ln.from_bus, k))
        order = [self.slack_bus]
        parent = {self.slack_bus: (None, None)}
        queue = deque([self.slack_bus])
        while queue:
            b = queue.popleft()
            for nb, k in adj[b]:
                if nb not in parent:
                    parent[nb] = (b, k)
                    order.append(nb)
                    queue.append(nb)
        return order, parent

    # -- derived views -------------------------------------------------

    @property
    def z_base(self) -> float:
        return self.base_voltage**2 / self.base_power

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.buses)}

    @cached_property
    def load_bus_index(self) -> np.ndarray:
        return np.array([self.bus_index[d.bus] for d in self.loads], dtype=int)

    @cached_property
    def pv_bus_index(self) -> np.ndarray:
        return np.array([self.bus_index[d.bus] for d in self.pvs], dtype=int)

    @property
    def slack_index(self) -> int:
        return self.bus_index[self.slack_bus]

    def inverters(self) -> list[InverterSpec]:
        return [InverterSpec(d.id, s) for d, s in zip(self.pvs, self.pv_ratings)]


@dataclass(frozen=True, eq=False)
class TimeSeriesSet:
    """Per-device profiles, rows ordered like the network's loads / pvs.

    Matrices are (devices, n_steps) in W / var and are stored read-only.
    """

    load_p: np.ndarray
    load_q: np.ndarray
    pv_p_avail: np.ndarray
    step_minutes: float = 15.0
    n_steps: int = field(init=False)

    def __post_init__(self):
        arrs = {}
        for name in ("load_p", "load_q", "pv_p_avail"):
            a = np.array(getattr(self, name), dtype=float, copy=True)
            if a.ndim != 2:
                raise ShapeError(f"{name} must be 2-D (devices, steps)")
            a.setflags(write=False)
            arrs[name] = a
            object.__setattr__(self, name, a)
        widths = {a.shape[1] for a in arrs.values()}
        if len(widths) != 1:
            raise ShapeError("all profile matrices must share n_steps")
        if not np.all(np.isfinite(self.load_p)) or not np.all(np.isfinite(self.load_q)):
            raise ValueError("non-finite load values")
        if not np.all(np.isfinite(self.pv_p_avail)):
            raise ValueError("non-finite PV values")
        if np.any(self.pv_p_avail < 0):
            raise ValueError("pv_p_avail must be >= 0")
        if np.any(self.load_p < 0):
            raise ValueError("load_p must be >= 0 (withdrawal convention)")
        if not self.step_minutes > 0:
            raise ValueError("step_minutes must be positive")
        object.__setattr__(self, "n_steps", widths.pop())

    @property
    def step_hours(self) -> float:
        return self.step_minutes / 60.0

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesSet):
            return NotImplemented
        return (
            self.step_minutes == other.step_minutes
            and np.array_equal(self.load_p, other.load_p)
            and np.array_equal(self.load_q, other.load_q)
            and np.array_equal(self.pv_p_avail, other.pv_p_avail)
        )

    def slice(self, start: int, stop: int) -> "TimeSeriesSet":
        return TimeSeriesSet(
            self.load_p[:, start:stop],
            self.load_q[:, start:stop],
            self.pv_p_avail[:, start:stop],
            self.step_minutes,
        )


# -- network file io ---------------------------------------------------

_SECTIONS = ("buses", "lines", "slack", "transformer_va", "base_v", "base_va", "vmin", "vmax", "loads", "pvs")


def _split_sections(text: str) -> dict[str, list[list[str]]]:
    sections: dict[str, list[list[str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"line {lineno}: malformed section header {raw!r}")
            current = line[1:-1].strip().lower()
            if current not in _SECTIONS:
                raise ParseError(f"line {lineno}: unknown section [{current}]")
            if current in sections:
                raise ParseError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise ParseError(f"line {lineno}: content before first section")
        sections[current].append([f.strip() for f in line.split(",")])
    return sections


def _scalar(sections, name, required=True):
    rows = sections.get(name)
    if rows is None:
        if required:
            raise ParseError(f"missing section [{name}]")
        return None
    if len(rows) != 1 or len(rows[0]) != 1:
        raise ParseError(f"section [{name}] must hold exactly one value")
    return rows[0][0]


def _float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{where}: not a number: {text!r}") from None


def parse_network(text: str) -> NetworkSpec:
    sec = _split_sections(text)
    for name in ("buses", "lines", "loads", "pvs"):
        if name not in sec:
            raise ParseError(f"missing section [{name}]")

    buses = []
    for row in sec["buses"]:
        if len(row) != 1:
            raise ParseError(f"[buses] rows hold one id, got {row}")
        buses.append(row[0])

    lines = []
    for row in sec["lines"]:
        if len(row) != 4:
            raise ParseError(f"[lines] rows are from,to,r_ohm,x_ohm; got {row}")
        lines.append(Line(row[0], row[1], _float(row[2], "lines"), _float(row[3], "lines")))

    loads = []
    for row in sec["loads"]:
        if len(row) != 2:
            raise ParseError(f"[loads] rows are bus,id; got {row}")
        loads.append(Device(id=row[1], bus=row[0]))

    pvs, ratings = [], []
    for row in sec["pvs"]:
        if len(row) != 3:
            raise ParseError(f"[pvs] rows are bus,id,s_rated_va; got {row}")
        pvs.append(Device(id=row[1], bus=row[0]))
        ratings.append(_float(row[2], "pvs"))

    transformer = _float(_scalar(sec, "transformer_va"), "transformer_va")
    base_va = _scalar(sec, "base_va", required=False)
    return NetworkSpec(
        buses=tuple(buses),
        lines=tuple(lines),
        slack_bus=_scalar(sec, "slack"),
        transformer_rating=transformer,
        base_voltage=_float(_scalar(sec, "base_v"), "base_v"),
        base_power=transformer if base_va is None else _float(base_va, "base_va"),
        loads=tuple(loads),
        pvs=tuple(pvs),
        pv_ratings=tuple(ratings),
        v_min=_float(_scalar(sec, "vmin"), "vmin"),
        v_max=_float(_scalar(sec, "vmax"), "vmax"),
    )


def serialize_network(spec: NetworkSpec) -> str:
    out = ["[buses]", *spec.buses, "[lines]"]
    out += [f"{ln.from_bus},{ln.to_bus},{ln.r_ohm!r},{ln.x_ohm!r}" for ln in spec.lines]
    out += ["[slack]", spec.slack_bus]
    out += ["[transformer_va]", repr(spec.transformer_rating)]
    if spec.base_power != spec.transformer_rating:
        out += ["[base_va]", repr(spec.base_power)]
    out += ["[base_v]", repr(spec.base_voltage)]
    out += ["[vmin]", repr(spec.v_min), "[vmax]", repr(spec.v_max)]
    out += ["[loads]"] + [f"{d.bus},{d.id}" for d in spec.loads]
    out += ["[pvs]"] + [f"{d.bus},{d.id},{s!r}" for d, s in zip(spec.pvs, spec.pv_ratings)]
    return "\n".join(out) + "\n"


def load_network(path) -> NetworkSpec:
    return parse_network(Path(path).read_text())


def save_network(spec: NetworkSpec, path) -> None:
    Path(path).write_text(serialize_network(spec))


# -- profile csv io ----------------------------------------------------


def load_timeseries(path, spec: NetworkSpec, step_minutes: float = 15.0) -> TimeSeriesSet:
    """Read a profile CSV and align its columns with ``spec``'s device order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty profile file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    if not header or header[0] != "t":
        raise ParseError(f"{path}: first column must be 't'")
    if len(set(header)) != len(header):
        raise ShapeError(f"{path}: duplicate column names")
    expected = (
        [f"load_p:{d.id}" for d in spec.loads]
        + [f"load_q:{d.id}" for d in spec.loads]
        + [f"pv_p:{d.id}" for d in spec.pvs]
    )
    missing = [c for c in expected if c not in header]
    extra = [c for c in header[1:] if c not in expected]
    if missing or extra:
        raise ShapeError(f"{path}: column mismatch; missing={missing} unexpected={extra}")
    if not rows:
        raise ParseError(f"{path}: no data rows")

    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if data.shape[1] != len(header):
        raise ParseError(f"{path}: ragged rows")
    if not np.array_equal(data[:, 0], np.arange(len(rows))):
        raise ShapeError(f"{path}: 't' must count rows 0..{len(rows) - 1}")

    col = {name: j for j, name in enumerate(header)}

    def block(prefix, devs):
        return data[:, [col[f"{prefix}:{d.id}"] for d in devs]].T.reshape(len(devs), len(rows))

    return TimeSeriesSet(
        load_p=block("load_p", spec.loads),
        load_q=block("load_q", spec.loads),
        pv_p_avail=block("pv_p", spec.pvs),
        step_minutes=step_minutes,
    )


def save_timeseries(series: TimeSeriesSet, spec: NetworkSpec, path) -> None:
    header = (
        ["t"]
        + [f"load_p:{d.id}" for d in spec.loads]
        + [f"load_q:{d.id}" for d in spec.loads]
        + [f"pv_p:{d.id}" for d in spec.pvs]
    )
    body = np.vstack([series.load_p, series.load_q, series.pv_p_avail]).T
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t, row in enumerate(body):
        w.writerow([t, *(repr(float(v)) for v in row)])
    Path(path).write_text(buf.getvalue())


# -- synthetic default feeder --------------------------------------------

# End-of-feeder voltage sensitivity scales with n(n+1)/2 spans for a chain,
# so per-customer magnitudes are divided by it to keep the violation depth
# comparable for any customer count.
_PV_PEAK_SENS = 0.105  # clear-sky summer PV peak x sensitivity (pu of voltage)
_LOAD_PEAK_SENS = 0.05  # winter-evening mean load peak x sensitivity


def _daylight_fraction(doy: np.ndarray) -> np.ndarray:
    return np.sin(2 * np.pi * (doy - 80) / 365.0)


def _solar_shape(doy: np.ndarray, hours: np.ndarray, clearness: np.ndarray) -> np.ndarray:
    """Normalized PV availability, (days, steps_per_day) in [0, 1]."""
    season = _daylight_fraction(doy)[:, None]
    day_len = 12.0 + 4.0 * season
    sunrise = 12.5 - day_len / 2
    phase = (hours[None, :] - sunrise) / day_len
    shape = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0) ** 1.3
    amplitude = 0.88 + 0.12 * season
    return shape * amplitude * clearness[:, None]


def _load_shape(doy, hours, rng, n_customers):
    """Per-customer active load, (customers, days, steps_per_day) normalized."""
    season = _daylight_fraction(doy)  # +1 summer, -1 winter
    winter = (1 - season) / 2  # 1 in deep winter
    out = np.empty((n_customers, doy.size, hours.size))
    for i in range(n_customers):
        morning = 7.0 + rng.normal(0, 0.6)
        evening = 18.5 + rng.normal(0, 0.7)
        w_m = rng.uniform(0.3, 0.6)
        w_e = rng.uniform(0.8, 1.0)
        base = rng.uniform(0.18, 0.3)
        daily = (
            base
            + w_m * np.exp(-0.5 * ((hours - morning) / 1.1) ** 2)
            + w_e * np.exp(-0.5 * ((hours - evening) / 1.6) ** 2)
        )
        scale = 0.4 + 0.6 * winter[:, None] ** 1.5
        noise = 1.0 + 0.08 * rng.standard_normal((doy.size, hours.size))
        day_factor = rng.uniform(0.85, 1.15, size=(doy.size, 1))
        out[i] = np.clip(daily[None, :] * scale * noise * day_factor, 0.02, None)
    return out


def generate_default_feeder(
    n_customers: int = 20,
    seed: int | np.random.SeedSequence = 0,
    n_days: int = 365,
    step_minutes: float = 15.0,
    rating_factor: float = S_RATED_HEADROOM,
) -> tuple[NetworkSpec, TimeSeriesSet, list[InverterSpec]]:
    """Synthetic chain feeder with one load and one PV per customer.

    ``n_days`` days are spread evenly across one calendar year, so a short
    run still sees winter under-voltage and summer over-voltage in
    chronological order. Each customer's inverter is rated at
    ``rating_factor`` times its peak PV availability.
    """
    if n_customers < 1:
        raise ValueError("n_customers must be >= 1")
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    if rating_factor < 1.0:
        raise ValueError("rating_factor below 1 would clip PV output without any control action")
    steps_per_day = round(24 * 60 / step_minutes)
    if not math.isclose(steps_per_day * step_minutes, 24 * 60):
        raise ValueError("step_minutes must divide a day")

    rng = np.random.default_rng(seed)
    buses = tuple(f"b{i}" for i in range(n_customers + 1))
    lines = tuple(Line(buses[i], buses[i + 1], DEFAULT_SPAN_R_OHM, DEFAULT_SPAN_X_OHM) for i in range(n_customers))
    z_base = DEFAULT_BASE_V**2 / DEFAULT_TRANSFORMER_VA
    sens = n_customers * (n_customers + 1) / 2 * DEFAULT_SPAN_R_OHM / z_base

    doy = (np.arange(n_days) * 365) // n_days
    hours = (np.arange(steps_per_day) + 0.5) * step_minutes / 60.0

    clearness = np.clip(rng.beta(4.0, 1.4, size=n_days) * 1.08, 0.05, 1.0)
    sun = _solar_shape(doy, hours, clearness).reshape(-1)
    pv_peak = _PV_PEAK_SENS / sens * DEFAULT_TRANSFORMER_VA
    pv_scale = pv_peak * rng.uniform(0.9, 1.1, size=n_customers)
    pv = pv_scale[:, None] * sun[None, :]

    load_peak = _LOAD_PEAK_SENS / sens * DEFAULT_TRANSFORMER_VA
    load_scale = load_peak * rng.uniform(0.85, 1.15, size=n_customers)
    load_p = load_scale[:, None] * _load_shape(doy, hours, rng, n_customers).reshape(n_customers, -1)
    load_q = load_p * math.tan(math.acos(LOAD_POWER_FACTOR))

    series = TimeSeriesSet(load_p, load_q, pv, step_minutes)
    ratings = tuple(float(rating_factor * max(series.pv_p_avail[i].max(), 1e-3 * pv_scale[i])) for i in range(n_customers))
    spec = NetworkSpec(
        buses=buses,
        lines=lines,
        slack_bus=buses[0],
        transformer_rating=DEFAULT_TRANSFORMER_VA,
        base_voltage=DEFAULT_BASE_V,
        base_power=DEFAULT_TRANSFORMER_VA,
        loads=tuple(Device(f"L{i + 1}", buses[i + 1]) for i in range(n_customers)),
        pvs=tuple(Device(f"PV{i + 1}", buses[i + 1]) for i in range(n_customers)),
        pv_ratings=ratings,
    )
    return spec, series, spec.inverters()
