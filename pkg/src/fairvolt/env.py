"""Voltage-control environment over a feeder and its profiles.

Transitions follow the exogenous profiles: the voltage part of the state at
step t comes from a power flow with all inverters at zero reactive power
(``state_voltage="uncontrolled"``, the default). The alternative
``"held"`` mode instead solves step t+1 with the previous actions still
applied, which makes the next state depend on the action.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotConverged, ShapeError
from .grid_model import InverterSpec, NetworkSpec, TimeSeriesSet
from .inverter import InverterDispatch, dispatch_arrays
from .power_flow import Injections, PfSolution, solve_pf

log = logging.getLogger(__name__)

STATE_VOLTAGE_MODES = ("uncontrolled", "held")
FAIRNESS_NORMS = ("rating", "base")  # divide curtailment by inverter rating, or keep pu of base power
DIVERGED_R_V = -10.0
VOLTAGE_OBS_SCALE = 10.0


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1000.0
    beta: float = 5.0
    omega: float = 25.0


@dataclass(frozen=True)
class EnvState:
    """Observation at one step; powers in pu of the feeder base."""

    load_p: np.ndarray
    load_q: np.ndarray
    pv_p: np.ndarray
    v_mag: np.ndarray
    t_index: int

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.load_p, self.load_q, self.pv_p, self.v_mag])

    def observation(self) -> np.ndarray:
        """Network input: same layout, voltages recentred as (V - 1) * 10."""
        return np.concatenate([self.load_p, self.load_q, self.pv_p, (self.v_mag - 1.0) * VOLTAGE_OBS_SCALE])


@dataclass(frozen=True)
class RewardBreakdown:
    r_v: float
    r_a: float
    r_f: float
    total: float
    alpha: float
    beta: float
    omega: float


@dataclass(frozen=True)
class EnvStepResult:
    next_state: EnvState
    reward: RewardBreakdown
    dispatches: list[InverterDispatch]
    pf: PfSolution
    q_cmd: np.ndarray
    p_out: np.ndarray
    curtail: np.ndarray


def voltage_penalty(v_mag, v_min: float, v_max: float, slope: float = 1.0) -> np.ndarray:
    """Bowl-shaped per-bus penalty: (V-1)^2, plus ``slope`` per pu beyond a bound."""
    v = np.asarray(v_mag, dtype=float)
    beyond = np.maximum(v - v_max, 0.0) + np.maximum(v_min - v, 0.0)
    return (v - 1.0) ** 2 + slope * beyond


def reward_voltage(v_mag, spec: NetworkSpec, slope: float = 1.0, margin: float = 0.0) -> float:
    v = np.asarray(v_mag, dtype=float)
    if np.any(np.isnan(v)):
        raise DomainError("NaN voltage")
    return -float(np.sum(voltage_penalty(v, spec.v_min + margin, spec.v_max - margin, slope)))


def reward_action(actions) -> float:
    a = np.asarray(actions, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(np.abs(a) > 1.0):
        raise DomainError("actions must lie in [-1, 1]")
    return -float(np.sum(np.abs(a)))


def reward_fairness(curtailments) -> float:
    """Negative total absolute deviation from the mean curtailment."""
    c = np.asarray(curtailments, dtype=float)
    if c.size == 0:
        raise DomainError("fairness reward needs at least one curtailment")
    return -float(np.sum(np.abs(c.mean() - c)))


class FeederEnv:
    """Step-indexed environment; ``step`` is a pure function of its inputs."""

    def __init__(
        self,
        spec: NetworkSpec,
        series: TimeSeriesSet,
        weights: RewardWeights = RewardWeights(),
        vf_slope: float = 1.0,
        band_margin: float = 0.0,
        fairness_norm: str = "rating",
        state_voltage: str = "uncontrolled",
        inverters: list[InverterSpec] | None = None,
    ):
        if state_voltage not in STATE_VOLTAGE_MODES:
            raise ValueError(f"state_voltage must be one of {STATE_VOLTAGE_MODES}")
        if series.load_p.shape[0] != len(spec.loads) or series.pv_p_avail.shape[0] != len(spec.pvs):
            raise ShapeError("profile rows do not match the network's devices")
        self.spec = spec
        self.series = series
        self.weights = weights
        if not 0.0 <= band_margin < (spec.v_max - spec.v_min) / 2:
            raise ValueError("band_margin must leave a nonempty band")
        if fairness_norm not in FAIRNESS_NORMS:
            raise ValueError(f"fairness_norm must be one of {FAIRNESS_NORMS}")
        self.vf_slope = vf_slope
        self.fairness_norm = fairness_norm
        self.band_margin = band_margin
        self.state_voltage = state_voltage
        self.inverters = list(inverters) if inverters is not None else spec.inverters()
        if len(self.inverters) != len(spec.pvs):
            raise ShapeError("one inverter per PV required")
        base = spec.base_power
        self._load_p = series.load_p / base
        self._load_q = series.load_q / base
        self._pv = series.pv_p_avail / base
        self._s_rated = np.array([inv.s_rated for inv in self.inverters]) / base
        self._uncontrolled: dict[int, np.ndarray] = {}

    @property
    def n_steps(self) -> int:
        return self.series.n_steps

    @property
    def n_obs(self) -> int:
        return 2 * len(self.spec.loads) + len(self.spec.pvs) + len(self.spec.buses)

    @property
    def n_act(self) -> int:
        return len(self.spec.pvs)

    def _injections(self, t: int, q_cmd: np.ndarray, p_out: np.ndarray) -> Injections:
        nb = len(self.spec.buses)
        p = np.zeros(nb)
        q = np.zeros(nb)
        np.add.at(p, self.spec.load_bus_index, -self._load_p[:, t])
        np.add.at(q, self.spec.load_bus_index, -self._load_q[:, t])
        np.add.at(p, self.spec.pv_bus_index, p_out)
        np.add.at(q, self.spec.pv_bus_index, q_cmd)
        return Injections(p, q)

    def _solve(self, t: int, actions: np.ndarray):
        q, p_out, curtail = dispatch_arrays(self._s_rated, self._pv[:, t], actions)
        sol = solve_pf(self.spec, self._injections(t, q, p_out))
        return sol, q, p_out, curtail

    def _state_voltage(self, t: int, held_actions) -> np.ndarray:
        if self.state_voltage == "held" and held_actions is not None:
            sol = self._solve(t, np.asarray(held_actions, dtype=float))[0]
            if not sol.converged:
                raise NotConverged(f"power flow did not converge at t={t}")
            return sol.v_mag
        v = self._uncontrolled.get(t)
        if v is None:
            sol = self._solve(t, np.zeros(self.n_act))[0]
            if not sol.converged:
                raise NotConverged(f"uncontrolled power flow did not converge at t={t}")
            v = sol.v_mag
            v.setflags(write=False)
            self._uncontrolled[t] = v
        return v

    def build_state(self, t: int, held_actions=None) -> EnvState:
        if not 0 <= t < self.n_steps:
            raise IndexError(f"t={t} outside 0..{self.n_steps - 1}")
        return EnvState(
            load_p=self._load_p[:, t],
            load_q=self._load_q[:, t],
            pv_p=self._pv[:, t],
            v_mag=self._state_voltage(t, held_actions),
            t_index=t,
        )

    def step(self, t: int, actions) -> EnvStepResult:
        if not 0 <= t < self.n_steps - 1:
            raise IndexError(f"step needs t < n_steps - 1, got {t}")
        a = np.asarray(actions, dtype=float)
        if a.shape != (self.n_act,):
            raise ShapeError(f"expected {self.n_act} actions, got shape {a.shape}")
        sol, q, p_out, curtail = self._solve(t, a)
        if sol.converged:
            r_v = reward_voltage(sol.v_mag, self.spec, self.vf_slope, self.band_margin)
        else:
            log.warning("power flow diverged at t=%d; applying r_v floor", t)
            r_v = DIVERGED_R_V
        r_a = reward_action(a)
        # "rating": each curtailment as a fraction of its own inverter rating
        r_f = reward_fairness(curtail / self._s_rated if self.fairness_norm == "rating" else curtail)
        w = self.weights
        total = w.alpha * r_v + w.beta * r_a + w.omega * r_f
        reward = RewardBreakdown(r_v, r_a, r_f, total, w.alpha, w.beta, w.omega)
        base = self.spec.base_power
        dispatches = [
            InverterDispatch(inv.gen_id, self._pv[i, t] * base, q[i] * base, p_out[i] * base, curtail[i] * base)
            for i, inv in enumerate(self.inverters)
        ]
        return EnvStepResult(
            next_state=self.build_state(t + 1, held_actions=a),
            reward=reward,
            dispatches=dispatches,
            pf=sol,
            q_cmd=q,
            p_out=p_out,
            curtail=curtail,
        )
