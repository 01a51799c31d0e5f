"""
Command line interface.

Exit codes are 0 on success, 2 for an invalid run config, and 3 for any other
failure.
"""

import argparse
import logging
import sys
from dataclasses import replace

from .bench import (
    emit_heatmap,
    load_config,
    run_compare,
    run_kernel_check,
    run_simulate,
    run_sparsity,
)
from .cache_manager import EvictionTrace
from .errors import ConfigError, KvevictError
from .memory_model import ModelShape, kv_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _list_of(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"Expected a comma-separated list, got '{text}'")
    return parse


def _write(df, out):
    if out is None:
        df.to_csv(sys.stdout, index=False)
    else:
        df.to_csv(out, index=False)
        logger.info("Wrote %s", out)


def _summary(results):
    return results.groupby(["policy", "metric"], sort=False)["value"].mean().reset_index()


def cmd_simulate(args):
    cfg = load_config(args.config)
    _write(_summary(run_simulate(cfg)), None)


def cmd_compare(args):
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    _write(_summary(run_compare(cfg)), None)


def cmd_memory(args):
    shape = ModelShape(args.layers, args.heads, args.head_dim, args.bytes, args.batch)
    seq_lens = []
    n = args.min_seq
    while n < args.max_seq:
        seq_lens.append(n)
        n *= 2
    seq_lens.append(args.max_seq)
    _write(kv_table(shape, seq_lens, args.budgets), args.out)


def cmd_sparsity(args):
    cfg = load_config(args.config)
    _write(run_sparsity(cfg, args.threshold, args.lengths), args.out)


def cmd_kernel(args):
    df = run_kernel_check(args.sizes, args.tiles, args.precisions, causal=not args.no_causal)
    _write(df, args.out)


def cmd_heatmap(args):
    trace = EvictionTrace.read_csv(args.trace)
    _write(emit_heatmap(trace, args.layer, args.head, args.width), args.out)


def build_parser():
    """
    Argument parser with one subcommand per task.
    """
    parser = argparse.ArgumentParser(prog="kvevict", description="KV-cache eviction experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    parser.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the first policy of a config")
    p.add_argument("config", help="TOML run config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare-policies", help="run every policy of a config")
    p.add_argument("config", help="TOML run config")
    p.add_argument("--workers", type=int, help="override [run] workers")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("memory-model", help="KV-cache bytes vs sequence length")
    p.add_argument("--layers", type=int, default=32)
    p.add_argument("--heads", type=int, default=32)
    p.add_argument("--head-dim", type=int, default=128)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--bytes", type=int, default=2, help="bytes per cached number")
    p.add_argument("--budgets", type=_list_of(float), default=[1.0, 0.3, 0.2, 0.1])
    p.add_argument("--min-seq", type=int, default=1024)
    p.add_argument("--max-seq", type=int, default=32768)
    p.add_argument("--out", help="output CSV, default stdout")
    p.set_defaults(func=cmd_memory)

    p = sub.add_parser("sparsity", help="attention sparsity vs prompt length")
    p.add_argument("config", help="TOML run config")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--lengths", type=_list_of(int), help="prompt lengths, default doubling")
    p.add_argument("--out", help="output CSV, default stdout")
    p.set_defaults(func=cmd_sparsity)

    p = sub.add_parser("kernel-check", help="tiled kernel vs naive reduction")
    p.add_argument("--sizes", type=_list_of(int), default=[1, 7, 31, 32, 33, 64, 128])
    p.add_argument("--tiles", type=_list_of(int), default=[1, 7, 8, 32, 0],
                   help="square tile sizes, 0 for a single tile")
    p.add_argument("--precisions", type=_list_of(str), default=["float64", "float32"])
    p.add_argument("--no-causal", action="store_true", help="disable the causal mask")
    p.add_argument("--out", help="output CSV, default stdout")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("heatmap", help="retained-token grid of one head")
    p.add_argument("trace", help="trace CSV written by a run")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--head", type=int, required=True)
    p.add_argument("--width", type=int, help="number of token columns")
    p.add_argument("--out", help="output CSV, default stdout")
    p.set_defaults(func=cmd_heatmap)

    return parser


def main(argv=None):
    """
    Run the command line interface and return the exit code.
    """
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        args.func(args)
    except ConfigError as e:
        logger.error("Invalid config: %s", e)
        return EXIT_CONFIG
    except (KvevictError, OSError) as e:
        logger.error("%s", e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
