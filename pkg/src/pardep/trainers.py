"""Training regimes over fully and partially annotated sentences.

* ``llgpar``: second-order graph CRF trained by mini-batch SGD on the
  likelihood of the forest of trees consistent with each annotation.
* ``lgpar``: averaged perceptron on the graph model; the reference tree is
  the best tree consistent with the annotation under the current weights.
* ``ltpar``: averaged perceptron on the arc-eager beam parser with early
  update; the reference action sequence comes from constrained beam search.

All three share the corpus-weighting schedule (every FA sentence plus a
fresh random PA subset per iteration) and dev-based early stopping.
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .corpus import DepTree, EvalResult, PartialTree, Sentence, TreebankError, evaluate_uas
from .features import (FeatureConfig, LinearModel, SentenceAtoms, factor_scores_arrays,
                       tree_feature_indices)
from .graph import ConstraintMask, FactorScores, UnsatisfiableError, decode, inside_outside
from .transition import beam_decode, beam_decode_with_reference, sequence_feature_indices

log = logging.getLogger(__name__)

PARSER_KINDS = ("llgpar", "lgpar", "ltpar")
FA = "FA"
PA = "PA"

Annotation = Union[DepTree, PartialTree]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    beam_size: int = 64
    sgd_step: float = 0.1
    sgd_decay_batches: float = 1000.0
    l2_sigma2: float = 1.0
    batch_size: int = 32
    patience: int = 30
    per_iter_pa_subset: int = 10000
    rng_seed: int = 0
    max_iterations: int = 200
    target_dev_uas: Optional[float] = None
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if isinstance(self.feature, dict):
            self.feature = FeatureConfig(**self.feature)
        for name in ("beam_size", "batch_size", "patience", "per_iter_pa_subset", "max_iterations"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("sgd_step", "sgd_decay_batches", "l2_sigma2"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainingInstance:
    sentence: Sentence
    annotation: Annotation
    origin: str = FA

    def __post_init__(self):
        if self.origin not in (FA, PA):
            raise ValueError(f"origin must be {FA} or {PA}")
        a = self.annotation
        if (a.n if isinstance(a, PartialTree) else len(a)) != len(self.sentence):
            raise ValueError("annotation and sentence lengths differ")

    def partial(self) -> PartialTree:
        a = self.annotation
        return a.to_partial() if isinstance(a, DepTree) else a


def make_instances(data, origin: str) -> list[TrainingInstance]:
    """Wrap (sentence, annotation) pairs."""
    return [item if isinstance(item, TrainingInstance) else TrainingInstance(item[0], item[1], origin)
            for item in data]


# ---------------------------------------------------------------------------
# weight vector with averaging and serialization

_MAGIC = b"PDPM"
_FORMAT_VERSION = 1


def _pack_sparse(a: np.ndarray) -> bytes:
    idx = np.flatnonzero(a).astype("<i8")
    vals = a[idx].astype("<f8")
    return zlib.compress(struct.pack("<Q", idx.size) + idx.tobytes() + vals.tobytes(), 9)


def _unpack_sparse(blob: bytes, dim: int) -> np.ndarray:
    raw = zlib.decompress(blob)
    (k,) = struct.unpack_from("<Q", raw)
    idx = np.frombuffer(raw, dtype="<i8", count=k, offset=8)
    vals = np.frombuffer(raw, dtype="<f8", count=k, offset=8 + 8 * k)
    out = np.zeros(dim)
    out[idx] = vals
    return out


class WeightModel:
    """Dense weights plus the accumulator that yields their running average.

    Each perceptron instance applies ``w += delta`` and ``acc += c * delta``
    with ``c`` the number of instances seen before it, then increments
    ``c``.  The mean of all per-instance weight snapshots is then
    ``(c * w - acc) / c``.
    """

    def __init__(self, parser_kind: str, config: FeatureConfig, weights=None, accumulator=None,
                 update_count: int = 0):
        if parser_kind not in PARSER_KINDS:
            raise ValueError(f"unknown parser kind {parser_kind!r}")
        self.parser_kind = parser_kind
        self.config = config
        dim = config.dimension
        self.weights = np.zeros(dim) if weights is None else np.asarray(weights, dtype=np.float64)
        self.average_accumulator = np.zeros(dim) if accumulator is None else np.asarray(accumulator, dtype=np.float64)
        self.update_count = int(update_count)
        self.metadata: dict = {}
        self._averaged = None

    def copy(self) -> "WeightModel":
        out = WeightModel(self.parser_kind, self.config, self.weights.copy(),
                          self.average_accumulator.copy(), self.update_count)
        out.metadata = json.loads(json.dumps(self.metadata))
        return out

    def perceptron_step(self, plus: Optional[np.ndarray] = None, minus: Optional[np.ndarray] = None) -> None:
        """One instance: add count(plus) - count(minus), then advance the clock."""
        c = float(self.update_count)
        for idx, sign in ((plus, 1.0), (minus, -1.0)):
            if idx is not None and len(idx):
                np.add.at(self.weights, idx, sign)
                if c:
                    np.add.at(self.average_accumulator, idx, sign * c)
        self.update_count += 1
        self._averaged = None

    def averaged(self) -> np.ndarray:
        """The running average; plain weights when no perceptron step was taken."""
        if self.update_count == 0:
            return self.weights
        if self._averaged is None:
            c = float(self.update_count)
            self._averaged = (c * self.weights - self.average_accumulator) / c
        return self._averaged

    def touch(self) -> None:
        """Invalidate the cached average after changing ``weights`` in place."""
        self._averaged = None

    def scorer(self, averaged: bool = True) -> LinearModel:
        return LinearModel(self.averaged() if averaged else self.weights, self.config)

    # -- serialization --------------------------------------------------

    def to_bytes(self) -> bytes:
        header = json.dumps({
            "parser_kind": self.parser_kind,
            "dimension_log2": self.config.dimension_log2,
            "template_set_version": self.config.template_set_version,
            "update_count": self.update_count,
        }, sort_keys=True).encode()
        blocks = [_pack_sparse(self.weights), _pack_sparse(self.averaged()),
                  _pack_sparse(self.average_accumulator)]
        out = [_MAGIC, struct.pack("<HI", _FORMAT_VERSION, len(header)), header]
        for b in blocks:
            out.append(struct.pack("<Q", len(b)))
            out.append(b)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightModel":
        if data[:4] != _MAGIC:
            raise ValueError("not a model file")
        version, hlen = struct.unpack_from("<HI", data, 4)
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        pos = 10
        header = json.loads(data[pos:pos + hlen])
        pos += hlen
        config = FeatureConfig(header["dimension_log2"], header["template_set_version"])
        arrays = []
        for _ in range(3):
            (blen,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            arrays.append(_unpack_sparse(data[pos:pos + blen], config.dimension))
            pos += blen
        model = cls(header["parser_kind"], config, arrays[0], arrays[2], header["update_count"])
        if model.update_count:
            model._averaged = arrays[1]
        return model

    def save(self, path) -> None:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        sidecar = Path(str(path) + ".json")
        sidecar.write_text(json.dumps(self.metadata, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "WeightModel":
        path = Path(path)
        model = cls.from_bytes(path.read_bytes())
        sidecar = Path(str(path) + ".json")
        if sidecar.exists():
            model.metadata = json.loads(sidecar.read_text())
        return model


# ---------------------------------------------------------------------------
# prediction and evaluation


def predict(model: WeightModel, parser_kind: Optional[str], sentence: Sentence,
            partial: Optional[PartialTree] = None, beam_size: int = 64,
            averaged: bool = True) -> DepTree:
    """Parse, or complete ``partial`` by constrained decoding."""
    kind = parser_kind or model.parser_kind
    if kind not in PARSER_KINDS:
        raise ValueError(f"unknown parser kind {kind!r}")
    scorer = model.scorer(averaged)
    if partial is not None and len(partial.heads) == 0:
        partial = None
    if kind == "ltpar":
        return beam_decode(sentence, scorer, beam_size, partial).tree()
    atoms = SentenceAtoms(sentence)
    factors = FactorScores(*factor_scores_arrays(atoms, scorer.weights, scorer.config))
    mask = ConstraintMask.from_partial(partial) if partial is not None else None
    return decode(factors, mask)


def evaluate(model: WeightModel, data, beam_size: int = 64, averaged: bool = True) -> EvalResult:
    """UAS of the model on (sentence, gold tree) pairs."""
    total = EvalResult(0, 0)
    for sentence, gold in data:
        total = total + evaluate_uas(predict(model, None, sentence, None, beam_size, averaged), gold, sentence)
    return total


# ---------------------------------------------------------------------------
# LLGPar objective


def _instance_terms(inst: TrainingInstance, weights: np.ndarray, config: FeatureConfig,
                    grad: Optional[np.ndarray]) -> float:
    """-log p(annotation | x); adds E_all[f] - E_forest[f] into ``grad``."""
    atoms = SentenceAtoms(inst.sentence)
    factors = FactorScores(*factor_scores_arrays(atoms, weights, config))
    mask = ConstraintMask.from_partial(inst.partial(), check=False)
    constrained = inside_outside(factors, mask)
    full = inside_outside(factors)
    if grad is not None:
        full.expected_features(atoms, config, grad, 1.0)
        constrained.expected_features(atoms, config, grad, -1.0)
    return full.log_partition - constrained.log_partition


def llgpar_objective_and_gradient(batch: Sequence[TrainingInstance], weights: np.ndarray,
                                  config: FeatureConfig = FeatureConfig(), l2_sigma2: float = 1.0,
                                  reg_scale: float = 1.0) -> tuple[float, np.ndarray]:
    """Negative forest log-likelihood of a batch plus the L2 term, and its gradient.

    ``reg_scale`` multiplies the regularizer (mini-batches use |B|/N).
    Unsatisfiable instances are skipped with a warning.
    """
    grad = np.zeros(config.dimension)
    loss = 0.0
    for inst in batch:
        try:
            loss += _instance_terms(inst, weights, config, grad)
        except UnsatisfiableError:
            log.warning("skipping unsatisfiable instance")
    loss += reg_scale * float(weights @ weights) / (2.0 * l2_sigma2)
    grad += (reg_scale / l2_sigma2) * weights
    return loss, grad


# ---------------------------------------------------------------------------
# shared schedule


class _Schedule:
    """Per-iteration corpus weighting: all FA plus a fresh PA sample, shuffled."""

    def __init__(self, fa, pa, config: TrainConfig):
        self.fa = fa
        self.pa = pa
        self.k = min(config.per_iter_pa_subset, len(pa))
        self.rng = np.random.default_rng(config.rng_seed)

    def iteration(self) -> list[TrainingInstance]:
        picked = [self.pa[i] for i in sorted(self.rng.choice(len(self.pa), size=self.k, replace=False))] \
            if self.k else []
        merged = self.fa + picked
        order = self.rng.permutation(len(merged))
        return [merged[i] for i in order]


def _prepare(fa_data, pa_data) -> tuple[list, list, int]:
    fa = make_instances(fa_data or [], FA)
    pa = make_instances(pa_data or [], PA)
    if not fa and not pa:
        raise TrainingError("empty training set")
    keep_fa, keep_pa, skipped = [], [], 0
    for src, dst in ((fa, keep_fa), (pa, keep_pa)):
        for inst in src:
            try:
                if isinstance(inst.annotation, DepTree):
                    inst.annotation.validate()
                else:
                    inst.annotation.validate(check_satisfiable=True)
            except (TreebankError, ValueError) as exc:
                log.warning("skipping training sentence: %s", exc)
                skipped += 1
                continue
            dst.append(inst)
    if not keep_fa and not keep_pa:
        raise TrainingError("no usable training sentence")
    return keep_fa, keep_pa, skipped


def _run(kind: str, fa_data, pa_data, config: TrainConfig, dev_data, visit, finish_iteration=None,
         progress=None) -> WeightModel:
    fa, pa, skipped = _prepare(fa_data, pa_data)
    schedule = _Schedule(fa, pa, config)
    model = WeightModel(kind, config.feature)
    state = {"batches": 0}
    best, best_uas, best_iter = None, -1.0, 0
    curve = []
    for it in range(1, config.max_iterations + 1):
        order = schedule.iteration()
        skipped_now = visit(model, order, state)
        if finish_iteration is not None:
            finish_iteration(model)
        if dev_data:
            uas = evaluate(model, dev_data, config.beam_size).uas
        else:
            uas = 0.0
        curve.append({"iteration": it, "dev_uas": uas, "skipped": skipped_now})
        if progress is not None:
            progress(it, uas)
        log.info("%s iteration %d dev UAS %.4f", kind, it, uas)
        if not dev_data:
            best, best_uas, best_iter = model, uas, it
        elif uas > best_uas:
            best, best_uas, best_iter = model.copy(), uas, it
        if config.target_dev_uas is not None and dev_data and uas >= config.target_dev_uas:
            break
        if dev_data and it - best_iter >= config.patience:
            break
    best.metadata = {
        "parser_kind": kind,
        "seed": config.rng_seed,
        "train_config": config.to_dict(),
        "dev_curve": curve,
        "best_iteration": best_iter,
        "best_dev_uas": best_uas,
        "iterations_run": len(curve),
        "skipped_at_load": skipped,
        "fa_sentences": len(fa),
        "pa_sentences": len(pa),
    }
    return best


# ---------------------------------------------------------------------------
# trainers


def train_llgpar(fa_data, pa_data, config: TrainConfig, dev_data=None, progress=None) -> WeightModel:
    """Mini-batch SGD on the forest likelihood.

    Step size decays as sgd_step / (1 + t / sgd_decay_batches) over the
    global batch count t; the L2 term of each batch is weighted |B|/N.
    """
    fc = config.feature

    def visit(model, order, state):
        skipped = 0
        n_total = len(order)
        for start in range(0, n_total, config.batch_size):
            batch = order[start:start + config.batch_size]
            grad = np.zeros(fc.dimension)
            used = 0
            for inst in batch:
                try:
                    _instance_terms(inst, model.weights, fc, grad)
                    used += 1
                except UnsatisfiableError:
                    skipped += 1
                    log.warning("skipping unsatisfiable instance")
            if not used:
                continue
            grad += (used / n_total / config.l2_sigma2) * model.weights
            eta = config.sgd_step / (1.0 + state["batches"] / config.sgd_decay_batches)
            model.weights -= (eta / used) * grad
            model.touch()
            state["batches"] += 1
        return skipped

    return _run("llgpar", fa_data, pa_data, config, dev_data, visit, progress=progress)


def lgpar_update(model: WeightModel, inst: TrainingInstance) -> bool:
    """One constrained-decoding perceptron step; True when weights changed."""
    fc = model.config
    atoms = SentenceAtoms(inst.sentence)
    factors = FactorScores(*factor_scores_arrays(atoms, model.weights, fc))
    pred = decode(factors)
    if isinstance(inst.annotation, DepTree):
        ref = inst.annotation
    else:
        ref = decode(factors, ConstraintMask.from_partial(inst.annotation, check=False))
    if ref == pred:
        model.perceptron_step()
        return False
    model.perceptron_step(tree_feature_indices(atoms, ref.heads, fc),
                          tree_feature_indices(atoms, pred.heads, fc))
    return True


def train_lgpar(fa_data, pa_data, config: TrainConfig, dev_data=None, progress=None) -> WeightModel:
    def visit(model, order, state):
        skipped = 0
        for inst in order:
            try:
                lgpar_update(model, inst)
            except UnsatisfiableError:
                skipped += 1
                log.warning("skipping unsatisfiable instance")
        return skipped

    return _run("lgpar", fa_data, pa_data, config, dev_data, visit, progress=progress)


def ltpar_update(model: WeightModel, inst: TrainingInstance, beam_size: int) -> bool:
    """Constrained beam for the reference sequence, then an early-update step."""
    fc = model.config
    scorer = LinearModel(model.weights, fc)
    atoms = SentenceAtoms(inst.sentence)
    partial = inst.partial()
    ref = beam_decode(inst.sentence, scorer, beam_size, partial if partial.heads else None, atoms).history
    pred, stop = beam_decode_with_reference(inst.sentence, scorer, beam_size, ref, atoms)
    if stop is not None:
        plus, minus = ref[:stop], pred.history[:stop]
    elif pred.history != ref:
        plus, minus = ref, pred.history
    else:
        model.perceptron_step()
        return False
    model.perceptron_step(sequence_feature_indices(inst.sentence, plus, fc, atoms),
                          sequence_feature_indices(inst.sentence, minus, fc, atoms))
    return True


def train_ltpar(fa_data, pa_data, config: TrainConfig, dev_data=None, progress=None) -> WeightModel:
    def visit(model, order, state):
        for inst in order:
            ltpar_update(model, inst, config.beam_size)
        return 0

    return _run("ltpar", fa_data, pa_data, config, dev_data, visit, progress=progress)


TRAINERS = {"llgpar": train_llgpar, "lgpar": train_lgpar, "ltpar": train_ltpar}


def train(kind: str, fa_data, pa_data, config: TrainConfig, dev_data=None, progress=None) -> WeightModel:
    if kind not in TRAINERS:
        raise ValueError(f"unknown parser kind {kind!r}")
    return TRAINERS[kind](fa_data, pa_data, config, dev_data, progress)
