"""Command-line interface.

Every subcommand is a pure function of the config file (plus its own flags)
to its output files. Logs go to stderr only, so stdout and the artifact
files stay pipe-safe. Exit codes: 0 success, 1 validation error (bad flags,
bad config, missing files, contract violations), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from recfuse import harness
from recfuse.data import write_fused, write_matrix, write_splits, write_weights
from recfuse.fusion import fuse_all
from recfuse.harness import ExperimentConfig

log = logging.getLogger("recfuse")


class _UsageError(Exception):
    """Argument or config problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="recfuse",
        description="Weighted rank fusion and ensemble selection for "
                    "top-N recommenders.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text, **kwargs):
        p = sub.add_parser(name, help=help_text, **kwargs)
        p.add_argument("--config", required=True,
                       help="experiment config JSON file")
        p.add_argument("--out", default=None,
                       help="override the config's output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: all cores); results "
                            "do not depend on this")
        p.add_argument("-v", "--verbose", action="store_true",
                       help="debug logging")
        return p

    add("split", "write the fold assignment CSV per dataset")
    add("fit", "fit the built-in models and print a summary")
    add("predict", "write the built-in models' prediction matrix per dataset")
    add("weights", "write validation-NDCG fusion weights per dataset and n")

    fuse = add("fuse", "write fused top-n lists for a member subset")
    fuse.add_argument("--dataset", required=True, help="dataset name")
    fuse.add_argument("--members", required=True,
                      help="model ids joined with '+'")
    fuse.add_argument("--k", type=int, required=True,
                      help="per-model truncation depth")
    fuse.add_argument("--n", type=int, required=True, help="output length")

    add("select", "run ensemble selection and write the trace CSV")
    add("sweep", "write the k-sweep aggregate CSV per dataset and n")
    add("report", "write the per-model score tables per dataset and n")
    add("run", "full pipeline: all artifacts plus manifest")
    return parser


def _load_config(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.exists():
        raise _UsageError(f"config file not found: {path}")
    try:
        config = ExperimentConfig.from_file(path)
    except ValueError as exc:
        raise _UsageError(f"invalid config {path}: {exc}") from exc
    if args.out is not None:
        config = dataclasses.replace(config, output_dir=args.out)
    return config


def _outdir(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bundles(config, threads):
    for ds in config.datasets:
        yield harness.prepare_dataset(config, ds, threads)


def _cmd_split(config, args):
    out = _outdir(config)
    for bundle in _bundles(config, args.threads):
        path = out / f"splits_{bundle.name}.csv"
        write_splits(bundle.splits, path)
        log.info("wrote %s", path)
    return 0


def _cmd_fit(config, args):
    from recfuse.baselines import binarized_pairs, fit
    from recfuse.data import SplitSpec, split_folds
    from recfuse.harness import _load_dataset

    for ds in config.datasets:
        dataset = _load_dataset(config, ds)
        splits = split_folds(dataset, SplitSpec(seed=config.seed,
                                                n_folds=config.n_folds))
        for split in splits:
            pairs = binarized_pairs(split.train)
            for model_cfg in config.models:
                if model_cfg.kind is None:
                    continue
                fitted = fit(model_cfg.kind, pairs, model_cfg.params,
                             model_id=model_cfg.model_id)
                print(f"{ds.name} fold={split.fold_index} "
                      f"model={fitted.model_id} users={len(fitted.users)} "
                      f"items={len(fitted.items)}")
    return 0


def _cmd_predict(config, args):
    out = _outdir(config)
    for bundle in _bundles(config, args.threads):
        path = out / f"matrix_{bundle.name}.csv"
        write_matrix(bundle.raw, path)
        log.info("wrote %s", path)
    return 0


def _cmd_weights(config, args):
    out = _outdir(config)
    for bundle in _bundles(config, args.threads):
        for n in config.n_values:
            path = out / f"weights_{bundle.name}_{n}.csv"
            write_weights(bundle.weights[n], path)
            log.info("wrote %s", path)
    return 0


def _cmd_fuse(config, args):
    if args.n < 1:
        raise _UsageError("n must be >= 1")
    if args.k < args.n:
        raise _UsageError("k must be ≥ N")
    members = sorted(set(args.members.split("+")))
    roster = {m.model_id for m in config.models}
    missing = [m for m in members if m not in roster]
    if missing:
        raise _UsageError(f"unknown member model(s): {', '.join(missing)}")
    ds = next((d for d in config.datasets if d.name == args.dataset), None)
    if ds is None:
        raise _UsageError(f"unknown dataset {args.dataset!r}")
    out = _outdir(config)
    bundle = harness.prepare_dataset(config, ds, args.threads)
    if args.n not in bundle.weights:
        raise _UsageError(f"n={args.n} is not in the configured n_values")
    fused = {
        split.fold_index: fuse_all(bundle.norm, bundle.weights[args.n],
                                   members, split.fold_index, args.k, args.n)
        for split in bundle.splits
    }
    path = out / f"fused_{ds.name}_{args.n}.csv"
    write_fused(fused, path)
    log.info("wrote %s", path)
    return 0


def _cmd_select(config, args):
    out = _outdir(config)
    for bundle in _bundles(config, args.threads):
        for n in config.n_values:
            path = out / f"trace_{bundle.name}_{n}.csv"
            harness._write_trace_csv(path, bundle, n)
            log.info("wrote %s", path)
    return 0


def _cmd_sweep(config, args):
    out = _outdir(config)
    for bundle in _bundles(config, args.threads):
        for n in config.n_values:
            rows = harness.sweep_rows(bundle, n)
            path = out / f"sweep_{bundle.name}_{n}.csv"
            harness._write_sweep_csv(path, rows)
            log.info("wrote %s", path)
    return 0


def _cmd_report(config, args):
    out = _outdir(config)
    for bundle in _bundles(config, args.threads):
        for n in config.n_values:
            rows = harness.model_table(bundle, n)
            path = out / f"tables_{bundle.name}_{n}.csv"
            harness._write_table_csv(path, rows, config.n_folds,
                                     harness.selection_label(config, n))
            log.info("wrote %s", path)
    return 0


def _cmd_run(config, args):
    result = harness.run_experiment(config, args.threads)
    for name in result.artifacts:
        log.info("wrote %s", result.output_dir / name)
    if result.failed_cells:
        for cell in result.failed_cells:
            log.error("failed cell: %s", cell)
        return 2
    return 0


_COMMANDS = {
    "split": _cmd_split,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "weights": _cmd_weights,
    "fuse": _cmd_fuse,
    "select": _cmd_select,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("recfuse: a command is required "
                              "(see recfuse --help)")
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s")
        config = _load_config(args)
        return _COMMANDS[args.command](config, args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ValueError as exc:
        # Contract violations surfaced by the pipeline are user-fixable.
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
