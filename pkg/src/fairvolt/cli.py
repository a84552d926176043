"""Command-line entry point: ``fairvolt run | compare | gen-feeder``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, FairVoltError, NotConverged, NumericalError
from .grid_model import generate_default_feeder, save_network, save_timeseries
from .runner import RunConfig, compare_scenarios, load_config, load_summary, run_scenario, seed_streams

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairvolt", description="Fairness-aware PV inverter control on LV feeders.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one scenario")
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--scenario", choices=["a", "b", "c", "d"])
    run.add_argument("--seed", type=int)
    run.add_argument("--episodes", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--parallel-eval", type=int, dest="parallel_eval")

    cmp_ = sub.add_parser("compare", help="tabulate finished runs")
    cmp_.add_argument("--in", nargs="+", required=True, dest="dirs")

    gen = sub.add_parser("gen-feeder", help="write the synthetic feeder and its profiles")
    gen.add_argument("--customers", type=int, default=5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--days", type=int, default=30)
    gen.add_argument("--rating-factor", type=float, default=1.0, dest="rating_factor")
    gen.add_argument("--out", required=True)
    return p


def cmd_run(args) -> int:
    overrides = dict(scenario=args.scenario, seed=args.seed, episodes=args.episodes, out=args.out, parallel_eval=args.parallel_eval)
    cfg = load_config(args.config, **overrides) if args.config else RunConfig().replace(**overrides)
    result = run_scenario(cfg, cfg.out)
    print(Path(cfg.out, "summary.txt").read_text(), end="")
    for name, path in result.files.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    summaries = []
    for d in args.dirs:
        try:
            summaries.append(load_summary(d))
        except OSError as exc:
            raise ConfigError(f"no summary in {d}: {exc}") from exc
    print(compare_scenarios(summaries), end="")
    return EXIT_OK


def cmd_gen_feeder(args) -> int:
    if args.customers < 1 or args.days < 1 or args.rating_factor < 1.0:
        raise ConfigError("--customers and --days must be >= 1, --rating-factor >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec, series, _ = generate_default_feeder(
        args.customers, seed_streams(args.seed)["profiles"], n_days=args.days, rating_factor=args.rating_factor
    )
    save_network(spec, out / "network.txt")
    save_timeseries(series, spec, out / "profiles.csv")
    print(f"wrote {out / 'network.txt'} and {out / 'profiles.csv'} ({series.n_steps} steps)")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "gen-feeder": cmd_gen_feeder}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NotConverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FairVoltError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
