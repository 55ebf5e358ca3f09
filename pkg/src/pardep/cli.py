"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .corpus import DepTree, TreebankError, evaluate_corpus, load_treebank, save_treebank, write_treebank
from .features import FeatureConfig
from .pasim import SimulationSpec, simulate
from .pipeline import ExperimentPlan, PipelineError, complete_treebank, emit_report, run_plan, split
from .trainers import PARSER_KINDS, TrainConfig, TrainingError, WeightModel, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _write(path, data: bytes) -> None:
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def _train_config(args) -> TrainConfig:
    data = {}
    if getattr(args, "config", None):
        data = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(data, dict):
            raise UsageError("training config file must hold a mapping")
    for key in ("beam_size", "patience", "per_iter_pa_subset", "max_iterations", "batch_size",
                "sgd_step", "l2_sigma2"):
        v = getattr(args, key, None)
        if v is not None:
            data[key] = v
    if getattr(args, "seed", None) is not None:
        data["rng_seed"] = args.seed
    feature = dict(data.get("feature") or {})
    if getattr(args, "dimension_log2", None) is not None:
        feature["dimension_log2"] = args.dimension_log2
    if feature:
        data["feature"] = FeatureConfig(**feature)
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_split(args):
    sizes = [int(x) for x in args.sizes.split(",")]
    outputs = args.outputs.split(",")
    if len(sizes) != len(outputs):
        raise UsageError("--sizes and --outputs need the same number of entries")
    tb = load_treebank(args.input)
    try:
        parts = split(tb, sizes)
    except ValueError as exc:
        raise TreebankError(str(exc)) from exc
    for part, path in zip(parts, outputs):
        save_treebank(part, path)


def cmd_simulate(args):
    spec = SimulationSpec(args.setting, args.alpha, args.seed)
    tb = load_treebank(args.input)
    models = {}
    paths = args.models or []
    if args.model:
        paths = [args.model] + paths
    for p in paths:
        m = WeightModel.load(p)
        models[m.parser_kind] = m
    try:
        out = simulate(spec, tb, models, args.beam_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write(args.output, write_treebank(out))


def cmd_train(args):
    config = _train_config(args)
    fa = load_treebank(args.fa) if args.fa else []
    pa = load_treebank(args.pa, mode="partial") if args.pa else []
    dev = load_treebank(args.dev) if args.dev else None
    model = train(args.kind, fa, pa, config, dev)
    model.save(args.model)
    print(f"best dev UAS {100.0 * model.metadata['best_dev_uas']:.2f} "
          f"at iteration {model.metadata['best_iteration']}")


def cmd_complete(args):
    model = WeightModel.load(args.model)
    partial = load_treebank(args.input, mode="partial")
    gold = load_treebank(args.gold) if args.gold else None
    if gold is not None and len(gold) != len(partial):
        raise TreebankError("gold and partial treebanks differ in size")
    done, score = complete_treebank(partial, model, None, gold, args.beam_size)
    _write(args.output, write_treebank(done))
    if gold is not None:
        print(f"completion UAS {100.0 * score.uas:.2f} ({score.correct_heads}/{score.scored_tokens})",
              file=sys.stderr)


def cmd_parse(args):
    model = WeightModel.load(args.model)
    tb = load_treebank(args.input, mode="partial")
    out = [(s, predict(model, None, s, None, args.beam_size)) for s, _ in tb]
    _write(args.output, write_treebank(out))


def cmd_evaluate(args):
    gold = load_treebank(args.gold)
    pred = load_treebank(args.pred)
    if len(gold) != len(pred):
        raise TreebankError(f"gold has {len(gold)} sentences, prediction {len(pred)}")
    for i, ((gs, _), (ps, _)) in enumerate(zip(gold, pred)):
        if gs.forms != ps.forms:
            raise TreebankError("token mismatch between gold and prediction", i)
    score = evaluate_corpus((p, g, s) for (s, g), (_, p) in zip(gold, pred))
    print(f"UAS {100.0 * score.uas:.2f} ({score.correct_heads}/{score.scored_tokens})")


def cmd_experiment(args):
    rows = []
    for path in args.plans:
        try:
            plan = ExperimentPlan.load(path)
        except (TypeError, ValueError, yaml.YAMLError) as exc:
            raise UsageError(f"{path}: {exc}") from exc
        rows.append(run_plan(plan))
    _write(args.output, emit_report(rows, args.format))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pardep", description="Dependency parsing with partial annotation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("split", help="carve a treebank into consecutive slices")
    s.add_argument("input")
    s.add_argument("--sizes", required=True, help="comma-separated sentence counts")
    s.add_argument("--outputs", required=True, help="comma-separated output paths")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("simulate", help="simulate partial annotation from a full treebank")
    s.add_argument("input")
    s.add_argument("--setting", required=True, choices=("random", "uncertain", "divergence"))
    s.add_argument("--alpha", type=float, default=100.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model", help="llgpar model for the uncertain setting")
    s.add_argument("--models", nargs="+", help="the three models for the divergence setting")
    s.add_argument("--beam-size", type=int, default=64)
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train a parser")
    s.add_argument("--kind", required=True, choices=PARSER_KINDS)
    s.add_argument("--fa", help="fully annotated treebank")
    s.add_argument("--pa", help="partially annotated treebank")
    s.add_argument("--dev", help="dev treebank for early stopping")
    s.add_argument("--model", required=True, help="output model path")
    s.add_argument("--config", help="YAML file of training options")
    s.add_argument("--seed", type=int)
    s.add_argument("--beam-size", dest="beam_size", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--per-iter-pa-subset", dest="per_iter_pa_subset", type=int)
    s.add_argument("--max-iterations", dest="max_iterations", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--sgd-step", dest="sgd_step", type=float)
    s.add_argument("--l2-sigma2", dest="l2_sigma2", type=float)
    s.add_argument("--dimension-log2", dest="dimension_log2", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("complete", help="complete partial trees by constrained decoding")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.add_argument("--gold", help="gold treebank to score the completion against")
    s.add_argument("--beam-size", type=int, default=64)
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_complete)

    s = sub.add_parser("parse", help="parse a treebank (existing heads are ignored)")
    s.add_argument("input")
    s.add_argument("--model", required=True)
    s.add_argument("--beam-size", type=int, default=64)
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("evaluate", help="unlabeled attachment score of a prediction")
    s.add_argument("--gold", required=True)
    s.add_argument("--pred", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="run plan files and print a report")
    s.add_argument("plans", nargs="+")
    s.add_argument("--format", choices=("tsv", "markdown"), default="tsv")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"pardep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as exc:
        print(f"pardep: {exc}", file=sys.stderr)
        return EXIT_TRAIN if exc.stage in ("train", "train-completer") else EXIT_DATA
    except TrainingError as exc:
        print(f"pardep: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (TreebankError, OSError, ValueError) as exc:
        print(f"pardep: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
