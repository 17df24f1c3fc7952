"""Command line: ``dmpnn {train,eval,baseline,trajectory,gradcheck}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checks
from .experiment import (CURVE_COLUMNS, SWEEP_COLUMNS, TRAJECTORY_COLUMNS, ConfigError,
                         ExperimentConfig, csv_comment, curve_rows, load_config, run_trajectory,
                         sweep_baselines, sweep_dmpnn, trajectory_rows, write_csv)
from .graphs import Permutation, read_graph
from .neural import load_checkpoint
from .trainer import TrainingDiverged, train

log = logging.getLogger("dmpnn")

CHECKPOINT_NAME = "checkpoint.dmpnn"


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _config(args) -> ExperimentConfig:
    config = load_config(args.config)
    return config.with_overrides(seed=args.seed, samples=getattr(args, "samples", None),
                                 out=args.out)


def _checkpoint(args, config: ExperimentConfig) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else Path(config.out) / CHECKPOINT_NAME
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return path


def cmd_train(args) -> int:
    config = _config(args)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT_NAME
    report, _ = train(config.train, log_path=out / "train_log.csv", checkpoint_path=checkpoint,
                      log_comment=csv_comment(config),
                      checkpoint_meta={"config_hash": config.hash(), "experiment": config.name})
    print(f"trained {config.name}: final objective {report.train_objective[-1]:.4f}, "
          f"validation {report.val_utility[-1]:.4f} -> {checkpoint}")
    return 0


def cmd_eval(args) -> int:
    config = _config(args)
    params = load_checkpoint(_checkpoint(args, config))
    rows = [cell.row() for cell in sweep_dmpnn(params, config, args.jobs)]
    path = write_csv(Path(config.out) / "eval.csv", config, SWEEP_COLUMNS, rows)
    print(f"wrote {path}")
    return 0


def cmd_baseline(args) -> int:
    config = _config(args)
    rows = [cell.row() for cell in sweep_baselines(config, args.jobs)]
    path = write_csv(Path(config.out) / "baseline.csv", config, SWEEP_COLUMNS, rows)
    print(f"wrote {path}")
    return 0


def cmd_trajectory(args) -> int:
    config = _config(args)
    graph_file = args.graph or config.eval.graph
    if graph_file is None:
        raise ConfigError("trajectory needs a graph file (--graph or eval.graph)")
    network = read_graph(graph_file)
    order = args.permute if args.permute is not None else config.eval.permute
    perm = Permutation.from_one_based(order) if order else None
    params = load_checkpoint(_checkpoint(args, config))
    result = run_trajectory(params, config, network, perm)
    out = Path(config.out)
    stem = args.name or Path(graph_file).stem
    write_csv(out / f"trajectory_{stem}.csv", config, TRAJECTORY_COLUMNS, trajectory_rows(result))
    path = write_csv(out / f"curve_{stem}.csv", config, CURVE_COLUMNS, curve_rows(result))
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    results = checks.run_suite(config.dims, seed=args.seed or 0, n_coords=args.coords)
    failed = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{r.name:28s} max_rel_error={r.max_error:.3e} coords={r.coords} {status}")
    print(f"{len(results) - failed}/{len(results)} composites within {checks.TOLERANCE:g}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmpnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="config file or preset name (p1-desk, p2-desk, ...)")
        p.add_argument("--out", help="output directory (overrides experiment.out)")
        p.add_argument("--seed", type=_u64, help="master seed (overrides experiment.seed)")

    p = sub.add_parser("train", help="train a model and write checkpoint + training log")
    common(p)
    p.add_argument("--checkpoint", help="where to write the checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over the (N, p_test) grid")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.dmpnn)")
    p.add_argument("--samples", type=_positive, help="samples per cell")
    p.add_argument("--jobs", type=_positive, default=1,
                   help="worker processes for the sweep cells (output order is fixed)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate the reference methods on the same samples")
    common(p)
    p.add_argument("--samples", type=_positive, help="samples per cell")
    p.add_argument("--jobs", type=_positive, default=1,
                   help="worker processes for the sweep cells (output order is fixed)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("trajectory", help="per-iteration powers and rates on a fixed graph")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.dmpnn)")
    p.add_argument("--graph", help="graph file (default: eval.graph)")
    p.add_argument("--permute", type=lambda s: [int(v) for v in s.split(",")],
                   help="1-based relabelling applied to graph, gains and states, e.g. 1,3,5,2,4")
    p.add_argument("--name", help="stem for the output files (default: graph file stem)")
    p.add_argument("--samples", type=_positive, help="channel realisations")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("gradcheck", help="finite-difference check of every composite")
    common(p, config_required=False)
    p.add_argument("--coords", type=_positive, default=100, help="coordinates per composite")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, TrainingDiverged) as exc:
        print(f"dmpnn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
