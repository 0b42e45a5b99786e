"""Command-line entry point.

Exit status: 0 on success, 1 for invalid configuration or input, 2 for a
numerical failure (divergence, degenerate product, step size, grid range).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import MODES, example_config_path, load_config
from .errors import ConfigurationError, MemoryBudgetError, NumericalError, NumericalInputError

log = logging.getLogger("withprofit")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="withprofit",
        description="Market values of bonus payments in multi-state with-profit life insurance.",
    )
    p.add_argument("--config", type=Path, default=None,
                   help="TOML run configuration (default: the shipped example)")
    p.add_argument("--mode", choices=MODES, help="projection procedure(s) to run")
    p.add_argument("--scenarios", type=int, help="number of financial scenarios N")
    p.add_argument("--step", type=float, help="time step h in years")
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--workers", type=int, help="worker processes for the scenario loop")
    p.add_argument("--chunk", type=int, help="scenarios per work unit")
    p.add_argument("--output-dir", type=Path, help="directory for summaries and CSV files")
    p.add_argument("--export-paths", action="store_true",
                   help="write per-scenario CSVs (first scenarios only)")
    p.add_argument("--oracle", action="store_true",
                   help="run the path-simulation oracle on scenario 0")
    p.add_argument("--oracle-paths", type=int, help="number of simulated insurance paths")
    p.add_argument("--validate-only", action="store_true",
                   help="check the configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _validate(cfg) -> dict:
    model = cfg.model
    return {
        "valid": True,
        "states": model.n_states,
        "labels": model.state_labels(),
        "horizon": model.horizon,
        "step": cfg.run.step,
        "market_rates": sorted(f"{j}-{k}" for j, k in cfg.market.support),
        "technical_rates": sorted(f"{j}-{k}" for j, k in cfg.technical.rates.support),
        "premium": "equivalence" if cfg.equivalence_premium else (
            cfg.payments.premium.rate if cfg.payments.premium else None),
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config or example_config_path())
        cfg = cfg.with_run(mode=args.mode, scenarios=args.scenarios, step=args.step,
                           seed=args.seed, workers=args.workers, chunk=args.chunk,
                           oracle_paths=args.oracle_paths,
                           output_dir=str(args.output_dir) if args.output_dir else None)
        cfg.grid()
        if args.validate_only:
            print(json.dumps(_validate(cfg), indent=2))
            return EXIT_OK
        from . import runner

        out = Path(cfg.run.output_dir)
        pre = runner.build(cfg)
        res = runner.run_valuation(cfg, pre)
        runner.write_summary(res, out)
        print(runner.summary_text(res))
        if args.export_paths:
            files = runner.export_paths(cfg, pre, out)
            print(f"wrote {len(files)} CSV files to {out}")
        if args.oracle:
            _, report = runner.run_oracle(cfg, pre, out)
            print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK
    except (ConfigurationError, NumericalInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, MemoryBudgetError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
