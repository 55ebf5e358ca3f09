"""Hashed sparse features for graph factors and arc-eager configurations.

Every feature is a conjunction of atoms (word forms, POS tags, direction,
distance, ...) listed in a versioned template file.  A feature's index is
computed without any lookup table:

* strings are hashed with 64-bit FNV-1a,
* atoms are folded into a template seed one at a time with the MurmurHash3
  ``fmix64`` finalizer,
* the top ``dimension_log2`` bits of the result give the index.

Both functions are published and seedless, so indices are identical across
runs, processes and platforms.  Collisions are accepted silently.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Optional

import numpy as np
from numba import njit

from .corpus import DepTree, Sentence

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

DEFAULT_DIMENSION_LOG2 = 23
DEFAULT_TEMPLATE_SET = "v1"

# graph atom codes: role * 10 + (offset + 1) * 2 + attribute
ROLE_HEAD, ROLE_MOD, ROLE_SIB = 0, 1, 2
ATTR_WORD, ATTR_POS = 0, 1
ATOM_DIR = 90
ATOM_DIST = 91

# transition slots, in the column order of the slot matrix
ACTION_SLOTS = ("s0", "s1", "n0", "n1", "n2", "s0h", "s0h2", "s0l", "s0l2",
                "s0r", "s0r2", "n0l", "n0l2")
ACTION_NUMBERS = ("dist", "s0vl", "s0vr", "n0vl")
SLOT_NONE = -2  # slot value meaning "no such token"


def fnv1a64(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def fmix64(x: int) -> int:
    x &= MASK64
    x ^= x >> 33
    x = (x * 0xFF51AFD7ED558CCD) & MASK64
    x ^= x >> 33
    x = (x * 0xC4CEB9FE1A85EC53) & MASK64
    x ^= x >> 33
    return x


@njit(cache=True)
def _fmix(x):
    x ^= x >> np.uint64(33)
    x *= np.uint64(0xFF51AFD7ED558CCD)
    x ^= x >> np.uint64(33)
    x *= np.uint64(0xC4CEB9FE1A85EC53)
    x ^= x >> np.uint64(33)
    return x


# Special atom strings.  Token positions outside the sentence read as
# <bos>/<eos>, the artificial root as <root>.
_SPECIAL = ("<bos>", "<eos>", "<root>", "<nosib>", "<none>")
_NUM_SALT = fnv1a64("#num")
_ACTION_SALTS = np.array([fnv1a64(f"#action:{a}") for a in range(4)], dtype=np.uint64)


@dataclass(frozen=True)
class FeatureConfig:
    """Size of the hashed index space and the template set in use."""

    dimension_log2: int = DEFAULT_DIMENSION_LOG2
    template_set_version: str = DEFAULT_TEMPLATE_SET

    def __post_init__(self):
        if not 16 <= self.dimension_log2 <= 30:
            raise ValueError(f"dimension_log2 must lie in [16, 30], got {self.dimension_log2}")

    @property
    def dimension(self) -> int:
        return 1 << self.dimension_log2

    @property
    def shift(self) -> np.uint64:
        return np.uint64(64 - self.dimension_log2)

    def templates(self) -> "TemplateSet":
        return load_templates(self.template_set_version)


class FeatureVector:
    """Sparse map from feature index to a positive integer count."""

    __slots__ = ("entries",)

    def __init__(self, entries: Optional[Mapping[int, int]] = None):
        self.entries = {int(k): int(v) for k, v in (entries or {}).items() if v}

    @classmethod
    def from_indices(cls, indices: Iterable[int]) -> "FeatureVector":
        return cls(Counter(int(i) for i in np.asarray(indices).ravel()))

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, FeatureVector) and self.entries == other.entries

    def __add__(self, other: "FeatureVector") -> "FeatureVector":
        out = Counter(self.entries)
        out.update(other.entries)
        return FeatureVector(out)

    def __repr__(self):
        return f"FeatureVector({len(self.entries)} entries)"

    def indices(self) -> np.ndarray:
        """Index multiset as a flat array (each index repeated by its count)."""
        if not self.entries:
            return np.zeros(0, dtype=np.int64)
        keys = np.fromiter(self.entries.keys(), dtype=np.int64)
        counts = np.fromiter(self.entries.values(), dtype=np.int64)
        return np.repeat(keys, counts)

    def dot(self, weights: np.ndarray) -> float:
        return float(sum(weights[i] * c for i, c in self.entries.items()))


# ---------------------------------------------------------------------------
# template sets


@dataclass(frozen=True)
class TemplateSet:
    version: str
    arc: tuple
    sib: tuple
    action: tuple
    arc_codes: np.ndarray
    sib_codes: np.ndarray
    action_codes: np.ndarray
    arc_seeds: np.ndarray
    sib_seeds: np.ndarray
    action_seeds: np.ndarray


_GRAPH_ATOM = re.compile(r"^([hms])([wp])(_[lr])?$")
_ACTION_ATOM = re.compile(r"^(" + "|".join(sorted(ACTION_SLOTS, key=len, reverse=True)) + r")([wp])$")


def _graph_code(atom: str, section: str) -> int:
    if atom == "dir":
        return ATOM_DIR
    if atom == "dist":
        return ATOM_DIST
    match = _GRAPH_ATOM.match(atom)
    if match is None:
        raise ValueError(f"unknown graph atom {atom!r}")
    role = "hms".index(match.group(1))
    if role == ROLE_SIB and section != "sib":
        raise ValueError(f"sibling atom {atom!r} outside [sib]")
    offset = {None: 0, "_l": -1, "_r": 1}[match.group(3)]
    attr = ATTR_WORD if match.group(2) == "w" else ATTR_POS
    if offset and attr == ATTR_WORD:
        raise ValueError(f"context atoms are POS only: {atom!r}")
    return role * 10 + (offset + 1) * 2 + attr


def _action_code(atom: str) -> int:
    if atom in ACTION_NUMBERS:
        return 90 + ACTION_NUMBERS.index(atom)
    match = _ACTION_ATOM.match(atom)
    if match is None:
        raise ValueError(f"unknown action atom {atom!r}")
    slot = ACTION_SLOTS.index(match.group(1))
    return slot * 2 + (ATTR_WORD if match.group(2) == "w" else ATTR_POS)


def _pack(templates, coder):
    width = max(len(t) for t in templates)
    codes = np.full((len(templates), width + 1), -1, dtype=np.int64)
    for i, atoms in enumerate(templates):
        codes[i, 0] = len(atoms)
        codes[i, 1:len(atoms) + 1] = [coder(a) for a in atoms]
    return codes


def parse_templates(text: str, version: str) -> TemplateSet:
    sections = {"arc": [], "sib": [], "action": []}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            current = line.strip("[]")
            if current not in sections:
                raise ValueError(f"line {lineno}: unknown section {line}")
            continue
        if current is None:
            raise ValueError(f"line {lineno}: template outside a section")
        sections[current].append(tuple(line.split()))
    for name, templates in sections.items():
        if not templates:
            raise ValueError(f"template set {version} has no [{name}] templates")
        if len(set(templates)) != len(templates):
            raise ValueError(f"duplicate template in [{name}]")

    def seeds(name):
        return np.array([fnv1a64(f"{name}:{' '.join(t)}") for t in sections[name]], dtype=np.uint64)

    return TemplateSet(
        version=version,
        arc=tuple(sections["arc"]),
        sib=tuple(sections["sib"]),
        action=tuple(sections["action"]),
        arc_codes=_pack(sections["arc"], lambda a: _graph_code(a, "arc")),
        sib_codes=_pack(sections["sib"], lambda a: _graph_code(a, "sib")),
        action_codes=_pack(sections["action"], _action_code),
        arc_seeds=seeds("arc"),
        sib_seeds=seeds("sib"),
        action_seeds=seeds("action"),
    )


@lru_cache(maxsize=None)
def load_templates(version: str = DEFAULT_TEMPLATE_SET) -> TemplateSet:
    try:
        text = resources.files("pardep.templates").joinpath(f"{version}.tpl").read_text("utf-8")
    except FileNotFoundError:
        raise ValueError(f"unknown template set version {version!r}") from None
    return parse_templates(text, version)


# ---------------------------------------------------------------------------
# sentence atoms


@lru_cache(maxsize=1 << 16)
def _word_atom(form: str) -> int:
    return fnv1a64("w:" + form)


@lru_cache(maxsize=1 << 12)
def _pos_atom(tag: str) -> int:
    return fnv1a64("p:" + tag)


class SentenceAtoms:
    """Word and POS atom ids of a sentence, padded for context lookups.

    Array position ``q + 1`` holds sentence position ``q``, so index 0 is
    the pre-sentence boundary, 1 the artificial root, 2..n+1 the tokens and
    n+2 the post-sentence boundary.  The last two entries hold the
    ``<nosib>`` and ``<none>`` atoms.
    """

    __slots__ = ("n", "word", "pos")

    def __init__(self, sentence: Sentence):
        n = len(sentence)
        forms = ["<bos>", "<root>"] + [t.form for t in sentence.tokens] + ["<eos>", "<nosib>", "<none>"]
        tags = ["<bos>", "<root>"] + [t.pos for t in sentence.tokens] + ["<eos>", "<nosib>", "<none>"]
        self.n = n
        self.word = np.array([_word_atom(f) for f in forms], dtype=np.uint64)
        self.pos = np.array([_pos_atom(p) for p in tags], dtype=np.uint64)


# ---------------------------------------------------------------------------
# graph kernels


@njit(cache=True)
def _dist_bin(d):
    if d <= 5:
        return d
    if d <= 10:
        return 6
    return 7


@njit(cache=True)
def _graph_atom(code, word, pos, n, h, m, s):
    if code == 90:
        return _fmix(np.uint64(1000 + (1 if m > h else 0)))
    if code == 91:
        d = m - h if m > h else h - m
        return _fmix(np.uint64(2000 + _dist_bin(d)))
    role = code // 10
    rest = code % 10
    offset = rest // 2 - 1
    attr = rest % 2
    if role == 0:
        p = h
    elif role == 1:
        p = m
    else:
        p = s
        if s == h:  # null sibling
            return word[n + 3] if attr == 0 else pos[n + 3]
    q = p + offset + 1
    return word[q] if attr == 0 else pos[q]


@njit(cache=True)
def _graph_index(codes, seeds, k, word, pos, n, h, m, s, shift):
    x = seeds[k]
    for j in range(codes[k, 0]):
        x = _fmix(x ^ _graph_atom(codes[k, j + 1], word, pos, n, h, m, s))
    return np.int64(x >> shift)


@njit(cache=True)
def _factor_indices(codes, seeds, word, pos, n, h, m, s, shift):
    out = np.empty(codes.shape[0], dtype=np.int64)
    for k in range(codes.shape[0]):
        out[k] = _graph_index(codes, seeds, k, word, pos, n, h, m, s, shift)
    return out


@njit(cache=True)
def _graph_scores(arc_codes, arc_seeds, sib_codes, sib_seeds, word, pos, n, w, shift):
    arc = np.zeros((n + 1, n + 1))
    sib = np.zeros((n + 1, n + 1, n + 1))
    for h in range(n + 1):
        for m in range(1, n + 1):
            if h == m:
                continue
            total = 0.0
            for k in range(arc_codes.shape[0]):
                total += w[_graph_index(arc_codes, arc_seeds, k, word, pos, n, h, m, h, shift)]
            arc[h, m] = total
            lo = m + 1 if m < h else h + 1
            hi = h if m < h else m
            if h == 0:
                hi = lo  # the root takes a single dependent: first child only
            for s in range(lo - 1, hi):
                sv = h if s == lo - 1 else s
                total = 0.0
                for k in range(sib_codes.shape[0]):
                    total += w[_graph_index(sib_codes, sib_seeds, k, word, pos, n, h, m, sv, shift)]
                sib[h, m, sv] = total
    return arc, sib


@njit(cache=True)
def _graph_accumulate(arc_codes, arc_seeds, sib_codes, sib_seeds, word, pos, n,
                      arc_coef, sib_coef, out, scale, shift):
    for h in range(n + 1):
        for m in range(1, n + 1):
            if h == m:
                continue
            c = arc_coef[h, m] * scale
            if c != 0.0:
                for k in range(arc_codes.shape[0]):
                    out[_graph_index(arc_codes, arc_seeds, k, word, pos, n, h, m, h, shift)] += c
            lo = m + 1 if m < h else h + 1
            hi = h if m < h else m
            if h == 0:
                hi = lo
            for s in range(lo - 1, hi):
                sv = h if s == lo - 1 else s
                c = sib_coef[h, m, sv] * scale
                if c != 0.0:
                    for k in range(sib_codes.shape[0]):
                        out[_graph_index(sib_codes, sib_seeds, k, word, pos, n, h, m, sv, shift)] += c


# ---------------------------------------------------------------------------
# transition kernels


@njit(cache=True)
def _action_contexts(codes, seeds, word, pos, slots, numbers):
    """Action-independent feature hashes, one row per configuration."""
    k_items = slots.shape[0]
    out = np.empty((k_items, codes.shape[0]), dtype=np.uint64)
    none = word.shape[0] - 1
    for i in range(k_items):
        for k in range(codes.shape[0]):
            x = seeds[k]
            for j in range(codes[k, 0]):
                code = codes[k, j + 1]
                if code >= 90:
                    v = _fmix(np.uint64(numbers[i, code - 90]) + np.uint64(0x9E3779B97F4A7C15))
                else:
                    q = slots[i, code // 2]
                    q = none if q == -2 else q + 1
                    v = word[q] if code % 2 == 0 else pos[q]
                x = _fmix(x ^ v)
            out[i, k] = x
    return out


@njit(cache=True)
def _action_scores(contexts, salts, w, shift):
    k_items, t = contexts.shape
    out = np.zeros((k_items, salts.shape[0]))
    for i in range(k_items):
        for a in range(salts.shape[0]):
            total = 0.0
            for k in range(t):
                total += w[np.int64(_fmix(contexts[i, k] ^ salts[a]) >> shift)]
            out[i, a] = total
    return out


@njit(cache=True)
def _action_indices(contexts, salts, actions, shift):
    k_items, t = contexts.shape
    out = np.empty(k_items * t, dtype=np.int64)
    for i in range(k_items):
        for k in range(t):
            out[i * t + k] = np.int64(_fmix(contexts[i, k] ^ salts[actions[i]]) >> shift)
    return out


def configuration_slots(configuration) -> tuple[list[int], list[int]]:
    """Slot positions and counts feeding the action templates."""
    stack = configuration.stack
    b = configuration.buffer
    n = configuration.n
    heads = configuration.heads
    s0 = stack[-1] if stack else SLOT_NONE
    s1 = stack[-2] if len(stack) > 1 else SLOT_NONE
    n0 = b if b <= n else SLOT_NONE
    n1 = b + 1 if b + 1 <= n else SLOT_NONE
    n2 = b + 2 if b + 2 <= n else SLOT_NONE
    if s0 >= 1 and heads[s0] >= 0:
        s0h = heads[s0]
        s0h2 = heads[s0h] if s0h >= 1 and heads[s0h] >= 0 else SLOT_NONE
    else:
        s0h = s0h2 = SLOT_NONE
    ld1, ld2, rd1, rd2 = configuration.ldep1, configuration.ldep2, configuration.rdep1, configuration.rdep2
    if s0 != SLOT_NONE:
        s0l, s0l2, s0r, s0r2 = ld1[s0], ld2[s0], rd1[s0], rd2[s0]
        s0vl, s0vr = configuration.nleft[s0], configuration.nright[s0]
    else:
        s0l = s0l2 = s0r = s0r2 = SLOT_NONE
        s0vl = s0vr = 0
    if n0 != SLOT_NONE:
        n0l, n0l2 = ld1[n0], ld2[n0]
        n0vl = configuration.nleft[n0]
    else:
        n0l = n0l2 = SLOT_NONE
        n0vl = 0
    dist = min(n0 - s0, 10) if s0 != SLOT_NONE and n0 != SLOT_NONE else 0
    slots = [s0, s1, n0, n1, n2, s0h, s0h2, s0l, s0l2, s0r, s0r2, n0l, n0l2]
    return slots, [dist, s0vl, s0vr, n0vl]


def context_hashes(configurations, atoms: SentenceAtoms, templates: TemplateSet) -> np.ndarray:
    slots = np.empty((len(configurations), len(ACTION_SLOTS)), dtype=np.int64)
    numbers = np.empty((len(configurations), len(ACTION_NUMBERS)), dtype=np.int64)
    for i, configuration in enumerate(configurations):
        slots[i], numbers[i] = configuration_slots(configuration)
    return _action_contexts(templates.action_codes, templates.action_seeds, atoms.word, atoms.pos, slots, numbers)


def score_actions(contexts: np.ndarray, weights: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Scores of all four actions for each context row, shape (k, 4)."""
    return _action_scores(contexts, _ACTION_SALTS, weights, config.shift)


def conjoined_indices(contexts: np.ndarray, actions, config: FeatureConfig) -> np.ndarray:
    return _action_indices(contexts, _ACTION_SALTS, np.asarray(actions, dtype=np.int64), config.shift)


# ---------------------------------------------------------------------------
# public extractors

DEFAULT_CONFIG = FeatureConfig()


@dataclass
class LinearModel:
    """A weight vector paired with the feature configuration it was trained with."""

    weights: np.ndarray
    config: FeatureConfig = DEFAULT_CONFIG

    def __post_init__(self):
        if self.weights.shape != (self.config.dimension,):
            raise ValueError(f"weight vector has shape {self.weights.shape}, "
                             f"expected ({self.config.dimension},)")


def _check_arc(n, h, m):
    if not (0 <= h <= n and 1 <= m <= n) or h == m:
        raise IndexError(f"invalid arc {h}->{m} for a sentence of length {n}")


def arc_features(sentence: Sentence, h: int, m: int, config: FeatureConfig = DEFAULT_CONFIG) -> FeatureVector:
    n = len(sentence)
    _check_arc(n, h, m)
    atoms = SentenceAtoms(sentence)
    t = config.templates()
    return FeatureVector.from_indices(
        _factor_indices(t.arc_codes, t.arc_seeds, atoms.word, atoms.pos, n, h, m, h, config.shift))


def sibling_features(sentence: Sentence, h: int, m: int, s: Optional[int],
                     config: FeatureConfig = DEFAULT_CONFIG) -> FeatureVector:
    """Features of attaching ``m`` to ``h`` right after sibling ``s``.

    ``s`` is None for the first (closest) child on its side of the head.
    """
    n = len(sentence)
    _check_arc(n, h, m)
    if s is None:
        s = h
    elif s == m:
        raise ValueError("sibling equals modifier")
    elif not (min(h, m) < s < max(h, m)):
        raise ValueError(f"sibling {s} does not lie between head {h} and modifier {m}")
    elif h == 0:
        raise ValueError("the root takes a single dependent, it has no siblings")
    atoms = SentenceAtoms(sentence)
    t = config.templates()
    return FeatureVector.from_indices(
        _factor_indices(t.sib_codes, t.sib_seeds, atoms.word, atoms.pos, n, h, m, s, config.shift))


def action_features(configuration, sentence: Sentence, action=None,
                    config: FeatureConfig = DEFAULT_CONFIG) -> FeatureVector:
    """Features of a configuration.

    Without ``action`` the result holds the action-independent context
    features (folded into the index space); with it, the features that
    score that action.
    """
    atoms = SentenceAtoms(sentence)
    t = config.templates()
    ctx = context_hashes([configuration], atoms, t)
    if action is None:
        return FeatureVector.from_indices((ctx[0] >> config.shift).astype(np.int64))
    return FeatureVector.from_indices(conjoined_indices(ctx, [int(action)], config))


def sibling_pairs(heads) -> list[tuple[int, int, Optional[int]]]:
    """(head, modifier, previous sibling) for every arc of a tree.

    ``heads`` is indexed by modifier position minus one, as in DepTree.
    """
    n = len(heads)
    out = []
    for h in range(n + 1):
        right = [m for m in range(h + 1, n + 1) if heads[m - 1] == h]
        left = [m for m in range(h - 1, 0, -1) if heads[m - 1] == h]
        for side in (left, right):
            prev = None
            for m in side:
                out.append((h, m, prev))
                prev = m
    return out


def tree_features(sentence: Sentence, tree: DepTree, config: FeatureConfig = DEFAULT_CONFIG) -> FeatureVector:
    n = len(sentence)
    tree.validate()
    if len(tree) != n:
        raise ValueError("tree and sentence lengths differ")
    return FeatureVector.from_indices(tree_feature_indices(SentenceAtoms(sentence), tree.heads, config))


def tree_feature_indices(atoms: SentenceAtoms, heads, config: FeatureConfig) -> np.ndarray:
    """Flat index multiset of all arc and sibling factors of a tree."""
    t = config.templates()
    n = atoms.n
    parts = []
    for h, m, s in sibling_pairs(heads):
        parts.append(_factor_indices(t.arc_codes, t.arc_seeds, atoms.word, atoms.pos, n, h, m, h, config.shift))
        parts.append(_factor_indices(t.sib_codes, t.sib_seeds, atoms.word, atoms.pos, n, h, m,
                                     h if s is None else s, config.shift))
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)


def factor_scores_arrays(atoms: SentenceAtoms, weights: np.ndarray, config: FeatureConfig):
    """Dense (arc, sib) score arrays for every factor of a sentence."""
    t = config.templates()
    return _graph_scores(t.arc_codes, t.arc_seeds, t.sib_codes, t.sib_seeds,
                         atoms.word, atoms.pos, atoms.n, weights, config.shift)


def accumulate_factor_features(atoms: SentenceAtoms, arc_coef: np.ndarray, sib_coef: np.ndarray,
                               out: np.ndarray, config: FeatureConfig, scale: float = 1.0) -> None:
    """out[f] += scale * coef for each feature f of each factor."""
    t = config.templates()
    _graph_accumulate(t.arc_codes, t.arc_seeds, t.sib_codes, t.sib_seeds, atoms.word, atoms.pos,
                      atoms.n, arc_coef, sib_coef, out, scale, config.shift)
