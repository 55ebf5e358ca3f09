"""Experiment driver: simulation, direct and complete-then-train regimes, reports.

A plan is a YAML mapping::

    name: llgpar-random-30
    fa_path: data/fa.conll
    pa_source_path: data/pool.conll     # fully annotated pool to simulate from
    dev_path: data/dev.conll
    test_path: data/test.conll
    simulation: {setting: random, alpha: 30, rng_seed: 1}
    regime: direct                       # or complete-then-train
    completer: null                      # coarse-self | fine-llgpar
    parser_kind: llgpar
    train_config: {beam_size: 64, patience: 30, per_iter_pa_subset: 10000}

Relative paths are resolved against the plan file's directory.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .corpus import DepTree, EvalResult, PartialTree, TreebankError, evaluate_uas, load_treebank
from .graph import UnsatisfiableError
from .pasim import SimulationSpec, simulate
from .trainers import PARSER_KINDS, TrainConfig, WeightModel, evaluate, predict, train

log = logging.getLogger(__name__)

REGIMES = ("direct", "complete-then-train")
COMPLETERS = ("coarse-self", "fine-llgpar")


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


@dataclass
class ExperimentPlan:
    fa_path: str
    pa_source_path: str
    dev_path: str
    test_path: str
    simulation: SimulationSpec
    parser_kind: str
    regime: str = "direct"
    completer: Optional[str] = None
    train_config: TrainConfig = field(default_factory=TrainConfig)
    name: str = ""

    def __post_init__(self):
        if isinstance(self.simulation, dict):
            self.simulation = SimulationSpec(**self.simulation)
        if isinstance(self.train_config, dict):
            self.train_config = TrainConfig.from_dict(self.train_config)
        if self.parser_kind not in PARSER_KINDS:
            raise ValueError(f"parser_kind must be one of {PARSER_KINDS}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.regime == "direct" and self.completer is not None:
            raise ValueError("the direct regime takes no completer")
        if self.regime == "complete-then-train" and self.completer not in COMPLETERS:
            raise ValueError(f"complete-then-train needs a completer from {COMPLETERS}")

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentPlan":
        data = dict(data)
        base = Path(base_dir) if base_dir is not None else None
        for key in ("fa_path", "pa_source_path", "dev_path", "test_path"):
            if key not in data:
                raise ValueError(f"plan is missing {key}")
            if base is not None and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        path = Path(path)
        data = yaml.safe_load(path.read_text())
        if not isinstance(data, dict):
            raise ValueError("a plan file must hold a mapping")
        return cls.from_dict(data, path.parent)

    def check_paths(self) -> None:
        for key in ("fa_path", "pa_source_path", "dev_path", "test_path"):
            p = Path(getattr(self, key))
            if not p.is_file():
                raise FileNotFoundError(f"{key}: {p} is not a readable file")


@dataclass(frozen=True)
class ReportRow:
    parser_kind: str
    regime: str
    setting: str
    alpha: Optional[float]
    dev_uas: float
    test_uas: float
    completed_treebank_uas: Optional[float] = None
    completer: Optional[str] = None
    closed_test: bool = False

    def __post_init__(self):
        for name in ("dev_uas", "test_uas", "completed_treebank_uas"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


# ---------------------------------------------------------------------------
# stages


def split(treebank: list, counts) -> list[list]:
    """Consecutive slices of the given sizes."""
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    if sum(counts) > len(treebank):
        raise ValueError(f"asked for {sum(counts)} sentences, treebank has {len(treebank)}")
    out, start = [], 0
    for c in counts:
        out.append(treebank[start:start + c])
        start += c
    return out


def _seed_models(kinds, fa, config: TrainConfig, dev) -> dict:
    return {k: train(k, fa, [], config, dev) for k in kinds}


def simulate_pool(plan: ExperimentPlan, fa, pool, dev, seed_models: Optional[dict] = None) -> list:
    """Partial annotation of the pool; model-based settings train seed models on FA."""
    spec = plan.simulation
    models = dict(seed_models or {})
    needed = {"random": (), "uncertain": ("llgpar",), "divergence": PARSER_KINDS}[spec.setting]
    missing = [k for k in needed if k not in models]
    models.update(_seed_models(missing, fa, plan.train_config, dev))
    return simulate(spec, pool, models, plan.train_config.beam_size)


def _evaluate_row(model, plan, dev, test, **extra) -> ReportRow:
    beam = plan.train_config.beam_size
    return ReportRow(plan.parser_kind, plan.regime, plan.simulation.setting,
                     None if plan.simulation.setting == "divergence" else plan.simulation.alpha,
                     evaluate(model, dev, beam).uas, evaluate(model, test, beam).uas, **extra)


def _load(plan: ExperimentPlan):
    with _stage("load"):
        plan.check_paths()
        fa = load_treebank(plan.fa_path)
        pool = load_treebank(plan.pa_source_path)
        dev = load_treebank(plan.dev_path)
        test = load_treebank(plan.test_path)
    return fa, pool, dev, test


def run_direct(plan: ExperimentPlan, seed_models: Optional[dict] = None) -> ReportRow:
    if plan.regime != "direct":
        raise ValueError("run_direct needs a direct plan")
    fa, pool, dev, test = _load(plan)
    with _stage("simulate"):
        pa = simulate_pool(plan, fa, pool, dev, seed_models)
    with _stage("train"):
        model = train(plan.parser_kind, fa, pa, plan.train_config, dev)
    with _stage("evaluate"):
        return _evaluate_row(model, plan, dev, test)


def complete_treebank(partial_treebank, completer: WeightModel, parser_kind: Optional[str] = None,
                      gold=None, beam_size: int = 64) -> tuple[list, EvalResult]:
    """Constrained completion of every partial tree.

    Returns the completed (sentence, DepTree) pairs and, when ``gold`` trees
    are given (aligned with the input), their attachment score.  Sentences
    whose partial tree cannot be completed are logged and left out.
    """
    kind = parser_kind or completer.parser_kind
    out = []
    score = EvalResult()
    for i, (sentence, partial) in enumerate(partial_treebank):
        if isinstance(partial, DepTree):
            partial = partial.to_partial()
        try:
            partial.validate()
            tree = predict(completer, kind, sentence, partial, beam_size)
        except (UnsatisfiableError, TreebankError) as exc:
            log.warning("sentence %d not completed: %s", i, exc)
            continue
        out.append((sentence, tree))
        if gold is not None:
            score = score + evaluate_uas(tree, gold[i][1], sentence)
    return out, score


def run_complete_then_train(plan: ExperimentPlan, seed_models: Optional[dict] = None) -> ReportRow:
    if plan.regime != "complete-then-train":
        raise ValueError("run_complete_then_train needs a complete-then-train plan")
    fa, pool, dev, test = _load(plan)
    with _stage("simulate"):
        pa = simulate_pool(plan, fa, pool, dev, seed_models)
    with _stage("train-completer"):
        if plan.completer == "coarse-self":
            completer = train(plan.parser_kind, fa, [], plan.train_config, dev)
        else:
            completer = train("llgpar", fa, pa, plan.train_config, dev)
    with _stage("complete"):
        completed, score = complete_treebank(pa, completer, None, pool, plan.train_config.beam_size)
    with _stage("train"):
        model = train(plan.parser_kind, fa, completed, plan.train_config, dev)
    with _stage("evaluate"):
        return _evaluate_row(model, plan, dev, test, completed_treebank_uas=score.uas,
                             completer=plan.completer, closed_test=plan.completer == "fine-llgpar")


def run_plan(plan: ExperimentPlan) -> ReportRow:
    if plan.regime == "direct":
        return run_direct(plan)
    return run_complete_then_train(plan)


# ---------------------------------------------------------------------------
# reports

COLUMNS = ("parser", "regime", "setting", "alpha", "completer", "closed_test",
           "dev_uas", "test_uas", "completed_uas")


def _pct(v: Optional[float]) -> str:
    return "-" if v is None else f"{100.0 * v:.2f}"


def _cells(row: ReportRow) -> list[str]:
    alpha = "-" if row.alpha is None else f"{row.alpha:g}"
    return [row.parser_kind, row.regime, row.setting, alpha, row.completer or "-",
            "yes" if row.closed_test else "no", _pct(row.dev_uas), _pct(row.test_uas),
            _pct(row.completed_treebank_uas)]


def _sort_key(row: ReportRow):
    return (row.parser_kind, row.setting, -1.0 if row.alpha is None else row.alpha)


def emit_report(rows, fmt: str = "tsv") -> bytes:
    """UAS columns are percentages with two decimals; rows sorted by (parser, setting, alpha)."""
    rows = sorted(rows, key=_sort_key)
    if not rows:
        raise ValueError("no rows to report")
    table = [_cells(r) for r in rows]
    if fmt == "tsv":
        lines = ["\t".join(COLUMNS)] + ["\t".join(c) for c in table]
    elif fmt == "markdown":
        lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "|".join("---" for _ in COLUMNS) + "|"]
        lines += ["| " + " | ".join(c) + " |" for c in table]
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_report_tsv(data: bytes) -> list[dict]:
    """Read an emitted TSV back; UAS values return as fractions, '-' as None."""
    reader = csv.DictReader(io.StringIO(data.decode("utf-8")), delimiter="\t")
    out = []
    for rec in reader:
        row = dict(rec)
        for key in ("dev_uas", "test_uas", "completed_uas"):
            row[key] = None if rec[key] == "-" else float(rec[key]) / 100.0
        row["alpha"] = None if rec["alpha"] == "-" else float(rec["alpha"])
        row["completer"] = None if rec["completer"] == "-" else rec["completer"]
        row["closed_test"] = rec["closed_test"] == "yes"
        out.append(row)
    return out
