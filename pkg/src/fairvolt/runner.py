"""Experiment orchestration: config parsing, scenario masks, seeding, artifacts.

One master seed is split with ``numpy.random.SeedSequence(seed).spawn(4)``
into independent streams, in this order:

    0. synthetic profile generation (only when no files are given)
    1. network initialisation
    2. exploration noise
    3. replay sampling
"""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ddpg
from .env import FAIRNESS_NORMS, FeederEnv, RewardWeights
from .errors import ConfigError, RangeMismatch
from .grid_model import generate_default_feeder, load_network, load_timeseries
from .metrics import COUNT_UNITS, ScenarioSummary, format_table, gini, summarize

log = logging.getLogger(__name__)

SCENARIOS = ("a", "b", "c", "d")
STREAMS = ("profiles", "init", "explore", "replay")


@dataclass
class RunConfig:
    scenario: str = "d"
    alpha: float = 1000.0
    beta: float = 5.0
    omega: float = 25.0
    vf_slope: float = 10.0
    band_margin: float = 0.005
    fairness_norm: str = "rating"
    state_voltage: str = "uncontrolled"
    episodes: int = 50
    seed: int = 0
    train_fraction: float = 0.30
    network: str = ""  # empty: generate the default feeder
    profiles: str = ""
    customers: int = 5
    n_days: int = 30
    rating_factor: float = 1.0  # synthetic feeder only: inverter rating / peak PV
    out: str = "runs/out"
    count_unit: str = "steps"
    parallel_eval: int = 1
    hidden: tuple[int, ...] = (256, 256)
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    capacity: int = 200_000
    noise_start: float = 0.2
    noise_end: float = 0.05

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.scenario != "a" and self.episodes == 0:
            raise ConfigError(f"scenario {self.scenario} needs at least one training episode")
        if min(self.alpha, self.beta, self.omega) < 0:
            raise ConfigError("reward weights must be non-negative")
        if bool(self.network) != bool(self.profiles):
            raise ConfigError("network and profiles must be given together")
        if self.fairness_norm not in FAIRNESS_NORMS:
            raise ConfigError(f"fairness_norm must be one of {FAIRNESS_NORMS}")
        if not 0.0 <= self.band_margin < 0.05 or self.vf_slope < 0:
            raise ConfigError("need 0 <= band_margin < 0.05 and vf_slope >= 0")
        if self.count_unit not in COUNT_UNITS:
            raise ConfigError(f"count_unit must be one of {COUNT_UNITS}")
        if self.parallel_eval < 1:
            raise ConfigError("parallel_eval must be >= 1")
        if self.parallel_eval > 1 and self.state_voltage != "uncontrolled":
            raise ConfigError("parallel evaluation needs state_voltage=uncontrolled")
        if self.customers < 1 or self.n_days < 1:
            raise ConfigError("customers and n_days must be >= 1")
        if self.rating_factor < 1.0:
            raise ConfigError("rating_factor must be >= 1")

    @property
    def weights(self) -> RewardWeights:
        """Reward weights after the scenario mask is applied."""
        if self.scenario == "b":
            return RewardWeights(self.alpha, 0.0, 0.0)
        if self.scenario == "c":
            return RewardWeights(self.alpha, self.beta, 0.0)
        return RewardWeights(self.alpha, self.beta, self.omega)

    @property
    def ddpg_config(self) -> ddpg.DdpgConfig:
        return ddpg.DdpgConfig(
            hidden=self.hidden,
            lr_actor=self.lr_actor,
            lr_critic=self.lr_critic,
            gamma=self.gamma,
            tau=self.tau,
            batch_size=self.batch_size,
            capacity=self.capacity,
            noise_start=self.noise_start,
            noise_end=self.noise_end,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    """Flat ``key = value`` text; ``#`` starts a comment. Overrides win when not None."""
    defaults = RunConfig()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not hasattr(defaults, key) or key.startswith("_"):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, getattr(defaults, key))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, **overrides)


def seed_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    return dict(zip(STREAMS, np.random.SeedSequence(seed).spawn(len(STREAMS))))


def build_inputs(cfg: RunConfig):
    """Network and profiles from files, or the synthetic default feeder."""
    if cfg.network:
        spec = load_network(cfg.network)
        return spec, load_timeseries(cfg.profiles, spec)
    spec, series, _ = generate_default_feeder(
        cfg.customers, seed_streams(cfg.seed)["profiles"], n_days=cfg.n_days, rating_factor=cfg.rating_factor
    )
    return spec, series


def split_ranges(cfg: RunConfig, n_steps: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Training and evaluation step ranges; the last step has no successor."""
    split = int(cfg.train_fraction * n_steps)
    if split < 1 or split >= n_steps - 1:
        raise ConfigError(f"train_fraction {cfg.train_fraction} leaves an empty split")
    return (0, split), (split, n_steps - 1)


def _eval_chunk(args):
    agent, env, eval_range = args
    return ddpg.evaluate(agent, env, eval_range)


def merge_traces(traces: list[ddpg.EvalTrace]) -> ddpg.EvalTrace:
    first = traces[0]
    arrays = {
        f.name: np.concatenate([getattr(t, f.name) for t in traces])
        for f in dataclasses.fields(first)
        if isinstance(getattr(first, f.name), np.ndarray)
    }
    return ddpg.EvalTrace(**arrays, weights=first.weights, step_hours=first.step_hours)


def evaluate_range(agent, env: FeederEnv, eval_range: tuple[int, int], workers: int = 1) -> ddpg.EvalTrace:
    """Deterministic evaluation, optionally split into contiguous chunks.

    With uncontrolled state voltages each step depends only on ``t``, so the
    merged chunks equal a single sequential pass.
    """
    if workers <= 1:
        return ddpg.evaluate(agent, env, eval_range)
    edges = np.linspace(eval_range[0], eval_range[1], workers + 1).round().astype(int)
    jobs = [(agent, env, (int(a), int(b))) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return merge_traces(list(pool.map(_eval_chunk, jobs)))


def steps_csv(trace: ddpg.EvalTrace, spec) -> str:
    """Per-step table: voltage extrema, band flag, curtailments (W), Gini, rewards."""
    pv_ids = [d.id for d in spec.pvs]
    header = ["t", "v_min", "v_max", "in_range", *(f"curtail:{g}" for g in pv_ids), "gini", "r_v", "r_a", "r_f", "total"]
    rows = [",".join(header)]
    for i, t in enumerate(trace.t):
        v = trace.v_mag[i]
        lo, hi = float(v.min()), float(v.max())
        in_range = int(lo >= spec.v_min and hi <= spec.v_max)
        c = trace.curtail[i]
        g = repr(gini(c)) if np.any(c > 0) else ""
        cells = [str(int(t)), repr(lo), repr(hi), str(in_range), *(repr(float(x)) for x in c), g]
        cells += [repr(float(x[i])) for x in (trace.r_v, trace.r_a, trace.r_f, trace.total)]
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


@dataclass
class RunResult:
    summary: ScenarioSummary
    trace: ddpg.EvalTrace
    train_log: ddpg.TrainingLog | None = None
    files: dict[str, Path] = field(default_factory=dict)


def run_scenario(cfg: RunConfig, out_dir=None) -> RunResult:
    """Train (unless scenario a) and evaluate; write artifacts when ``out_dir`` is set."""
    spec, series = build_inputs(cfg)
    env = FeederEnv(
        spec,
        series,
        cfg.weights,
        vf_slope=cfg.vf_slope,
        band_margin=cfg.band_margin,
        fairness_norm=cfg.fairness_norm,
        state_voltage=cfg.state_voltage,
    )
    train_range, eval_range = split_ranges(cfg, series.n_steps)
    streams = seed_streams(cfg.seed)
    agent, train_log = None, None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if cfg.scenario != "a":
        dcfg = cfg.ddpg_config
        agent = ddpg.make_agent(env.n_obs, env.n_act, np.random.default_rng(streams["init"]), dcfg)
        train_log = ddpg.train(
            agent,
            env,
            cfg.episodes,
            np.random.default_rng(streams["explore"]),
            train_range,
            cfg=dcfg,
            replay_rng=np.random.default_rng(streams["replay"]),
            checkpoint_on_error=None if out is None else out / "checkpoint_error.npz",
        )
    trace = evaluate_range(agent, env, eval_range, cfg.parallel_eval)
    summary = summarize(trace, spec, scenario=cfg.scenario, count_unit=cfg.count_unit)
    result = RunResult(summary, trace, train_log)
    if out is not None:
        files = {
            "config": out / "config.txt",
            "summary_json": out / "summary.json",
            "summary_txt": out / "summary.txt",
            "steps": out / "steps.csv",
        }
        files["config"].write_text(cfg.to_text())
        files["summary_json"].write_text(summary.to_json())
        files["summary_txt"].write_text(format_table([summary]))
        files["steps"].write_text(steps_csv(trace, spec))
        if agent is not None:
            files["train_log"] = out / "train_log.csv"
            files["checkpoint"] = out / "checkpoint.npz"
            files["train_log"].write_text(train_log.to_csv())
            ddpg.save_agent(agent, files["checkpoint"])
        result.files = files
    log.info("scenario %s seed %d: %s", cfg.scenario, cfg.seed, json.dumps(dataclasses.asdict(summary) | {"gini_series": len(summary.gini_series)}))
    return result


def compare_scenarios(summaries: list[ScenarioSummary]) -> str:
    if len(summaries) < 2:
        raise RangeMismatch("comparison needs at least two summaries")
    ranges = {(s.t_start, s.t_end) for s in summaries}
    if len(ranges) > 1:
        raise RangeMismatch(f"evaluation ranges differ: {sorted(ranges)}")
    return format_table(summaries)


def load_summary(run_dir) -> ScenarioSummary:
    return ScenarioSummary.from_json(Path(run_dir, "summary.json").read_text())
