"""Simulated partial annotation over a fully annotated treebank.

Three ways to choose which gold heads survive:

* random: a uniform sample of alpha% of the non-punctuation tokens,
* uncertain: the alpha% non-punctuation tokens whose two most probable
  heads under a CRF model are closest in marginal probability,
* divergence: every non-punctuation token on which three parsers disagree.

Punctuation tokens never keep their heads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .corpus import DepTree, PartialTree, Sentence
from .features import SentenceAtoms, factor_scores_arrays
from .graph import FactorScores, inside_outside

SETTINGS = ("random", "uncertain", "divergence")


@dataclass(frozen=True)
class SimulationSpec:
    setting: str
    alpha: float = 100.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; expected one of {SETTINGS}")
        if self.setting != "divergence" and not 0 <= self.alpha <= 100:
            raise ValueError("alpha must lie in [0, 100]")


def keep_count(alpha: float, k: int) -> int:
    """ceil(alpha% of k), computed on the decimal value of alpha so 30% of 10 is 3."""
    return math.ceil(Fraction(str(alpha)) * k / 100)


def _candidates(sentence: Sentence) -> list[int]:
    return [t.index for t in sentence.tokens if not t.is_punct]


def _keep(tree: DepTree, positions) -> PartialTree:
    return PartialTree(len(tree), {m: tree.head(m) for m in positions})


def simulate_random(treebank, alpha: float, seed: int) -> list[tuple[Sentence, PartialTree]]:
    """Each sentence uses its own generator seeded by (seed, sentence index)."""
    SimulationSpec("random", alpha, seed)
    out = []
    for i, (sentence, tree) in enumerate(treebank):
        cand = _candidates(sentence)
        k = keep_count(alpha, len(cand))
        rng = np.random.default_rng([seed, i])
        picked = rng.choice(len(cand), size=k, replace=False) if k else []
        out.append((sentence, _keep(tree, (cand[j] for j in picked))))
    return out


def head_marginals(sentence: Sentence, model) -> np.ndarray:
    """Arc marginals [head, modifier] under the model's CRF distribution."""
    scorer = model.scorer(True) if hasattr(model, "scorer") else model
    atoms = SentenceAtoms(sentence)
    factors = FactorScores(*factor_scores_arrays(atoms, scorer.weights, scorer.config))
    return inside_outside(factors).arc_marginal


def uncertainty_gaps(marginal: np.ndarray) -> np.ndarray:
    """Per token (index 1..n), top head marginal minus the runner-up.

    Index 0 is unused.  A token with a single possible head has gap 1.
    """
    n = marginal.shape[0] - 1
    gaps = np.zeros(n + 1)
    for m in range(1, n + 1):
        col = np.sort(marginal[:, m])[::-1]
        gaps[m] = col[0] - (col[1] if n >= 2 else 0.0)
    return gaps


def simulate_uncertain(treebank, alpha: float, llgpar_model) -> list[tuple[Sentence, PartialTree]]:
    SimulationSpec("uncertain", alpha)
    _check_model(llgpar_model)
    out = []
    for sentence, tree in treebank:
        cand = _candidates(sentence)
        k = keep_count(alpha, len(cand))
        if k:
            gaps = uncertainty_gaps(head_marginals(sentence, llgpar_model))
            cand = sorted(cand, key=lambda m: (gaps[m], m))[:k]
        else:
            cand = []
        out.append((sentence, _keep(tree, cand)))
    return out


def divergent_tokens(sentence: Sentence, predictions) -> list[int]:
    """Non-punctuation positions where the predicted heads are not all equal."""
    return [m for m in _candidates(sentence) if len({p.head(m) for p in predictions}) > 1]


def simulate_divergence(treebank, model_llg, model_lg, model_lt,
                        beam_size: int = 64) -> list[tuple[Sentence, PartialTree]]:
    from .trainers import predict

    models = (model_llg, model_lg, model_lt)
    for m in models:
        _check_model(m)
    kinds = ("llgpar", "lgpar", "ltpar")
    out = []
    for sentence, tree in treebank:
        preds = [predict(m, kind, sentence, None, beam_size) for m, kind in zip(models, kinds)]
        out.append((sentence, _keep(tree, divergent_tokens(sentence, preds))))
    return out


def _check_model(model) -> None:
    config = model.config
    config.templates()  # raises on an unknown template set
    if model.weights.shape != (config.dimension,):
        raise ValueError("model weights do not match its feature configuration")


def simulate(spec: SimulationSpec, treebank, models: Optional[dict] = None, beam_size: int = 64):
    """Dispatch on ``spec.setting``; ``models`` maps parser kind to model."""
    models = models or {}
    if spec.setting == "random":
        return simulate_random(treebank, spec.alpha, spec.rng_seed)
    if spec.setting == "uncertain":
        if "llgpar" not in models:
            raise ValueError("the uncertain setting needs an llgpar model")
        return simulate_uncertain(treebank, spec.alpha, models["llgpar"])
    missing = [k for k in ("llgpar", "lgpar", "ltpar") if k not in models]
    if missing:
        raise ValueError(f"the divergence setting needs models for {missing}")
    return simulate_divergence(treebank, models["llgpar"], models["lgpar"], models["ltpar"], beam_size)
