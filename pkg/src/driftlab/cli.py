"""Command-line entry point: ``driftlab <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Progress goes to stderr; results go to stdout or ``--out``.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from .analysis import layer_variance
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .data import has_labels, load_dataset, load_images, save_dataset
from .dira import adapt_supervised, finetune
from .dira_ss import YModel, adapt_self_supervised, main_accuracy
from .errors import (AdaptationError, CheckpointError, FormatError, GenerationError, NumericError,
                     UsageError)
from .network import accuracy
from . import pipeline

log = logging.getLogger("driftlab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} {path!r} does not exist")


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise UsageError(f"{what} {path!r} is not a directory")


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _data_files(data_dir):
    _require_dir(data_dir, "data directory")
    train = os.path.join(data_dir, "source_train.dlb")
    test = os.path.join(data_dir, "source_test.dlb")
    _require_file(train, "training set")
    _require_file(test, "test set")
    return train, test


# --- subcommands ------------------------------------------------------------

def cmd_gen_data(args):
    cfg = load_config(args.config)
    train, test = pipeline.load_source_data(cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(train, os.path.join(args.out, "source_train.dlb"))
    save_dataset(test, os.path.join(args.out, "source_test.dlb"))
    for i, domain in enumerate(cfg.domain_specs()):
        target, s_t = pipeline.make_target(test, domain, cfg.n_target_samples, args.seed, i,
                                          cfg.balanced_samples)
        save_dataset(target, os.path.join(args.out, f"target.{domain.name}.dlb"))
        save_dataset(s_t, os.path.join(args.out, f"samples.{domain.name}.dlb"))
        save_dataset(s_t, os.path.join(args.out, f"samples.{domain.name}.images.dlb"), include_labels=False)
    log.info("wrote %d train / %d test images and %d target domains to %s",
             len(train), len(test), len(cfg.domain_specs()), args.out)
    return EXIT_OK


def cmd_train_source(args):
    cfg = load_config(args.config)
    train_path, _ = _data_files(args.data)
    train = load_dataset(train_path, "source_train")
    if args.kind == "y":
        model = pipeline.train_y_model(cfg, train, args.seed, log.info)
    else:
        model = pipeline.train_source(cfg, train, args.seed, log.info)
    save_checkpoint(model, args.out)
    log.info("saved %s model to %s", args.kind, args.out)
    return EXIT_OK


def cmd_fisher(args):
    cfg = load_config(args.config)
    _require_file(args.model, "model checkpoint")
    train_path, _ = _data_files(args.data)
    model, _, _ = load_checkpoint(args.model)
    train = load_dataset(train_path, "source_train")
    if isinstance(model, YModel):
        fisher, anchor = pipeline.y_fisher(cfg, model, train, args.seed)
    else:
        fisher, anchor = pipeline.source_fisher(cfg, model, train, args.seed)
    save_checkpoint(model, args.out, fisher, anchor)
    log.info("saved model with Fisher (%d samples) and anchor to %s", fisher.n_samples, args.out)
    return EXIT_OK


def cmd_adapt(args):
    cfg = load_config(args.config)
    for path, what in ((args.model, "model checkpoint"), (args.target, "target sample file"),
                       (args.x0_test, "source test set")):
        _require_file(path, what)
    if args.target_test:
        _require_file(args.target_test, "target test set")
    if args.mode in ("dira", "finetune") and not has_labels(args.target):
        raise UsageError(f"--mode {args.mode} needs a labeled target sample file; "
                         f"{args.target!r} holds images only")
    model, fisher, anchor = load_checkpoint(args.model)
    if fisher is None or anchor is None:
        raise UsageError("model checkpoint has no Fisher/anchor blocks; run the fisher subcommand first")
    if (args.mode == "dira-ss") != isinstance(model, YModel):
        raise UsageError("--mode dira-ss needs a Y-model checkpoint; dira/finetune need a plain one")
    x0_test = load_dataset(args.x0_test, "source_test")
    target_test = load_dataset(args.target_test, "target") if args.target_test else None
    common = dict(cfas_cfg=cfg.cfas_config(), seed=args.seed, target_test=target_test,
                  domain=args.domain, workers=args.workers)
    grid = cfg.hyper_grid()
    if args.mode == "dira-ss":
        images = load_images(args.target)  # labels are never parsed on this path
        report = adapt_self_supervised(model, anchor, fisher, images, x0_test, grid, **common)
        adapted = model.with_trainable(report.best.params)
    else:
        s_t = load_dataset(args.target, "target_samples")
        run = finetune if args.mode == "finetune" else adapt_supervised
        report = run(model, anchor, fisher, s_t, x0_test, grid, **common)
        adapted = model.with_params(report.best.params)
    _emit(report.to_text() if args.format == "text" else report.to_json(), args.out)
    if args.save_model:
        save_checkpoint(adapted, args.save_model)
    return EXIT_OK


def cmd_eval(args):
    _require_file(args.model, "model checkpoint")
    _require_file(args.data, "dataset")
    model, _, _ = load_checkpoint(args.model)
    data = load_dataset(args.data, "target")
    acc = main_accuracy(model, data) if isinstance(model, YModel) else accuracy(model, data)
    _emit(json.dumps({"accuracy": acc, "n": len(data)}, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config)
    prepared = None
    if args.data or args.model or args.y_model:
        if not (args.data and args.model and args.y_model):
            raise UsageError("--data, --model and --y-model must be given together")
        train_path, test_path = _data_files(args.data)
        for path in (args.model, args.y_model):
            _require_file(path, "model checkpoint")
        net, fisher, anchor = load_checkpoint(args.model)
        y, y_fisher, y_anchor = load_checkpoint(args.y_model)
        if fisher is None or y_fisher is None:
            raise UsageError("sweep checkpoints must carry Fisher/anchor blocks")
        if not isinstance(y, YModel) or isinstance(net, YModel):
            raise UsageError("--model must be a plain network and --y-model a Y-model checkpoint")
        prepared = pipeline.Prepared(load_dataset(train_path, "source_train"),
                                     load_dataset(test_path, "source_test"),
                                     net, fisher, anchor, y, y_fisher, y_anchor)
    os.makedirs(args.out, exist_ok=True)
    result = pipeline.run_sweep(cfg, args.seed, prepared, args.workers, log.info)
    written = pipeline.write_sweep(result, args.out, cfg)
    sys.stdout.write(result.table.to_text())
    log.info("wrote %d files to %s", len(written), args.out)
    return EXIT_OK


def cmd_variance(args):
    for path in args.models:
        _require_file(path, "model checkpoint")
    models = [load_checkpoint(p)[0] for p in args.models]
    params = [m.main_network().params if isinstance(m, YModel) else m.params for m in models]
    profile = layer_variance(params)
    _emit(profile.to_text() if args.format == "text" else profile.to_json(), args.out)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="driftlab", description="Few-sample domain adaptation with EWC and CFAS.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=0)
        if config:
            sp.add_argument("--config", help="JSON config file (all fields optional)")

    sp = sub.add_parser("gen-data", help="generate the glyph source dataset")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-source", help="train the source model M0")
    common(sp)
    sp.add_argument("--data", required=True, help="directory written by gen-data")
    sp.add_argument("--kind", choices=("base", "y"), default="base")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_source)

    sp = sub.add_parser("fisher", help="attach a Fisher diagonal and anchor to a checkpoint")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fisher)

    sp = sub.add_parser("adapt", help="grid-search adaptation from target samples")
    common(sp)
    sp.add_argument("--mode", choices=("dira", "dira-ss", "finetune"), required=True)
    sp.add_argument("--model", required=True, help="checkpoint with Fisher and anchor")
    sp.add_argument("--target", required=True, help="target sample file (images-only allowed for dira-ss)")
    sp.add_argument("--x0-test", required=True, help="clean source test set")
    sp.add_argument("--target-test", help="optional corrupted test set (reporting only)")
    sp.add_argument("--domain", default="target")
    sp.add_argument("--format", choices=("json", "text"), default="json")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--save-model", help="write the selected model checkpoint here")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="all domains x methods -> corruption table")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--data")
    sp.add_argument("--model")
    sp.add_argument("--y-model")
    sp.add_argument("--workers", type=int, default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("variance", help="per-layer parameter variance across checkpoints")
    sp.add_argument("--models", nargs="+", required=True)
    sp.add_argument("--format", choices=("json", "text"), default="text")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_variance)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"driftlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (FormatError, CheckpointError, GenerationError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (NumericError, AdaptationError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
