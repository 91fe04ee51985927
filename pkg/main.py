"""
GDFusion Temporal Fusion Engine - Main Orchestrator

Runs the fusion ablation grid on a seeded synthetic world, the gradient
parity suites, and the memory/runtime benchmarks.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from phase1_parsing import ConfigError, GDFTFormatError, PipelineConfig, parse_config
from phase2_tensors import ShapeError
from phase4_pipeline import SequenceError
from phase6_evaluation import (
    FAULTS,
    comparison_rows,
    memory_curves,
    run_ablation,
    run_gradchecks,
    runtime_rows,
    write_checks,
    write_rows,
)


EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIMS = 3

DEFAULT_OUT = Path('artifacts')


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """
    Parse --config and apply flag overrides.

    A seed from GDFUSION_SEED is used only when neither --seed nor the
    config file sets one.
    """
    run, bench = {}, {}
    if args.seed is not None:
        run['seed'] = args.seed
    if args.frames is not None:
        run['frames'] = args.frames
    if args.fusion is not None:
        run['fusion'] = args.fusion
    if args.baseline_n is not None:
        bench['baseline_n'] = args.baseline_n

    overrides = {name: values for name, values in (('run', run), ('bench', bench)) if values}
    cfg = parse_config(args.config, overrides)

    env_seed = os.getenv('GDFUSION_SEED')
    if env_seed and 'seed' not in cfg.run.model_fields_set:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"GDFUSION_SEED must be an integer, got '{env_seed}'")
        cfg = cfg.model_copy(update={'run': cfg.run.model_copy(update={'seed': seed})})
    return cfg


def output_dir(args: argparse.Namespace) -> Path:
    out = args.out or Path(os.getenv('GDFUSION_OUT', DEFAULT_OUT))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = output_dir(args)

    print("=" * 80)
    print("GDFUSION - ABLATION RUN")
    print("=" * 80)
    print(f"\n[RUN] Grid {tuple(cfg.grid.extents)}, c={cfg.grid.channels}, "
          f"{cfg.run.frames} frames, seed {cfg.run.seed}")

    results = run_ablation(cfg, dump_dir=args.dump_states)
    for r in results:
        dynamic = "n/a" if r.miou_dynamic is None else f"{r.miou_dynamic:.4f}"
        print(f"  ✓ {r.label:<8} mIoU {r.miou:.4f}  mIoU_D {dynamic}  IoU {r.iou:.4f}")

    write_rows(out / 'metrics.csv', [row for r in results for row in r.rows])
    write_rows(out / 'comparison.csv', comparison_rows(results))
    print(f"\n  ✓ Wrote {out / 'metrics.csv'}")
    print(f"  ✓ Wrote {out / 'comparison.csv'}")
    if args.dump_states:
        print(f"  ✓ State bundles under {args.dump_states}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = output_dir(args)

    print("=" * 80)
    print("GDFUSION - GRADIENT CHECKS")
    print("=" * 80)

    results = run_gradchecks(cfg.run.seed, fault=args.inject_fault)
    for r in results:
        mark = "✓" if r.passed else "✗"
        print(f"  {mark} {r.check:<20} max rel err {r.max_rel_err:.3e}  max abs err {r.max_abs_err:.3e}")

    write_checks(out / 'gradcheck.csv', results)
    print(f"\n  ✓ Wrote {out / 'gradcheck.csv'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECKS_FAILED


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    out = output_dir(args)

    print("=" * 80)
    print("GDFUSION - BENCHMARKS")
    print("=" * 80)

    print("\n[BENCH] Memory curves...")
    memory = memory_curves(cfg)
    write_rows(out / 'memory.csv', memory)
    print(f"  ✓ gdfusion vs stacking at N_h in {cfg.bench.horizons}")

    print("\n[BENCH] Runtime profile...")
    runtime = runtime_rows(cfg, cfg.run.seed)
    write_rows(out / 'runtime.csv', runtime)
    for row in runtime:
        if row.metric == 'median_ms':
            print(f"  ✓ {row.run_id:<36} {row.value:.3f} ms")

    print(f"\n  ✓ Wrote {out / 'memory.csv'}")
    print(f"  ✓ Wrote {out / 'runtime.csv'}")
    return EXIT_OK


COMMANDS = {
    'run': cmd_run,
    'gradcheck': cmd_gradcheck,
    'bench': cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='GDFusion temporal fusion engine'
    )

    parser.add_argument(
        'command',
        choices=sorted(COMMANDS),
        help='Subcommand to run'
    )

    parser.add_argument(
        '--config',
        type=Path,
        help='Sectioned key=value or YAML config (defaults when omitted)'
    )

    parser.add_argument(
        '--out',
        type=Path,
        help='Output directory (or set GDFUSION_OUT env var)'
    )

    parser.add_argument('--seed', type=int, help='Override run.seed')
    parser.add_argument('--frames', type=int, help='Override run.frames')
    parser.add_argument('--fusion', type=str, help='Comma-separated ablation labels, e.g. B,BV,Full')
    parser.add_argument('--baseline-n', type=int, help='Stacking baseline queue length N_h (0 disables)')

    parser.add_argument(
        '--dump-states',
        type=Path,
        help='Write the state bundle after every frame below this directory'
    )

    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    parser.add_argument('--inject-fault', choices=FAULTS, help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s',
    )

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e.render()}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, GDFTFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShapeError, SequenceError, ValidationError) as e:
        print(f"error: inconsistent dimensions: {e}", file=sys.stderr)
        return EXIT_DIMS


if __name__ == "__main__":
    sys.exit(main())
