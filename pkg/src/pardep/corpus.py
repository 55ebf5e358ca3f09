"""Sentences, full and partial dependency trees, CoNLL-X I/O and UAS.

Trees use the single-root convention throughout: the artificial root
(position 0) has exactly one dependent, and every tree is projective.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Optional, Sequence, Union

logger = logging.getLogger(__name__)

UNANNOTATED = "_"

# PTB punctuation tags, plus the bracket/symbol tags and the UD PUNCT tag.
# '#' and '$' are left out: they head the numbers that follow them.
DEFAULT_PUNCT_TAGS = frozenset({"``", "''", ",", ":", ".", "-LRB-", "-RRB-", "SYM", "PUNCT"})


class TreebankError(ValueError):
    """A sentence failed to parse or violated a tree invariant."""

    def __init__(self, message: str, sentence_index: Optional[int] = None, line: Optional[int] = None):
        where = []
        if sentence_index is not None:
            where.append(f"sentence {sentence_index}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.sentence_index = sentence_index
        self.line = line
        self.reason = message


@dataclass(frozen=True)
class Token:
    index: int
    form: str
    pos: str
    is_punct: bool = False

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"token index must be >= 1, got {self.index}")
        if not self.form:
            raise ValueError("empty token form")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        for i, tok in enumerate(self.tokens, 1):
            if tok.index != i:
                raise ValueError(f"token indices must run 1..n, found {tok.index} at position {i}")

    @classmethod
    def from_words(cls, words: Sequence[tuple], punct_tags=DEFAULT_PUNCT_TAGS) -> "Sentence":
        """Build from (form, pos) pairs."""
        return cls(tuple(Token(i, f, p, p in punct_tags) for i, (f, p) in enumerate(words, 1)))

    def __len__(self):
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def tags(self) -> list[str]:
        return [t.pos for t in self.tokens]

    def punct_mask(self) -> list[bool]:
        return [t.is_punct for t in self.tokens]


# ---------------------------------------------------------------------------
# structural checks on head maps (dict modifier -> head, positions 1-based)


def find_cycle(heads: Mapping[int, int]) -> Optional[list[int]]:
    """Return the tokens of one cycle among the given arcs, or None."""
    done: set[int] = set()
    for start in heads:
        path = []
        on_path: set[int] = set()
        node = start
        while node in heads and node not in done:
            if node in on_path:
                return path[path.index(node):]
            on_path.add(node)
            path.append(node)
            node = heads[node]
        done.update(path)
    return None


def find_crossing(heads: Mapping[int, int]) -> Optional[tuple]:
    arcs = sorted((min(h, m), max(h, m)) for m, h in heads.items())
    for i, (a, b) in enumerate(arcs):
        for c, d in arcs[i + 1:]:
            if c >= b:
                break
            if a < c < b < d:
                return (a, b), (c, d)
    return None


def _check_arcs(heads: Mapping[int, int], n: int) -> None:
    for m, h in heads.items():
        if not 1 <= m <= n:
            raise TreebankError(f"modifier index {m} out of range 1..{n}")
        if not 0 <= h <= n:
            raise TreebankError(f"head index {h} of token {m} out of range 0..{n}")
        if h == m:
            raise TreebankError(f"token {m} is its own head (cycle)")
    cycle = find_cycle(heads)
    if cycle is not None:
        raise TreebankError(f"cycle among tokens {sorted(cycle)}")
    roots = [m for m, h in heads.items() if h == 0]
    if len(roots) > 1:
        raise TreebankError(f"multiple root attachments: tokens {roots}")
    crossing = find_crossing(heads)
    if crossing is not None:
        raise TreebankError(f"crossing arcs {crossing[0]} and {crossing[1]} (non-projective)")


@dataclass(frozen=True)
class DepTree:
    """Complete tree; ``heads[m - 1]`` is the head of token m."""

    heads: tuple

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))

    def __len__(self):
        return len(self.heads)

    def head(self, m: int) -> int:
        return self.heads[m - 1]

    def arcs(self) -> dict[int, int]:
        return {m: h for m, h in enumerate(self.heads, 1)}

    def validate(self) -> "DepTree":
        n = len(self.heads)
        if n == 0:
            raise TreebankError("empty tree")
        _check_arcs(self.arcs(), n)
        if sum(1 for h in self.heads if h == 0) != 1:
            raise TreebankError("a complete tree needs exactly one root attachment")
        return self

    def to_partial(self) -> "PartialTree":
        return PartialTree(len(self.heads), self.arcs())


@dataclass(frozen=True)
class PartialTree:
    """Heads of a subset of the tokens of an n-token sentence."""

    n: int
    heads: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "heads", {int(m): int(h) for m, h in sorted(dict(self.heads).items())})

    def __len__(self):
        return len(self.heads)

    def __hash__(self):
        return hash((self.n, tuple(self.heads.items())))

    def head(self, m: int) -> Optional[int]:
        return self.heads.get(m)

    def is_complete(self) -> bool:
        return len(self.heads) == self.n

    def to_tree(self) -> DepTree:
        if not self.is_complete():
            raise ValueError("partial tree is not complete")
        return DepTree(tuple(self.heads[m] for m in range(1, self.n + 1)))

    def validate(self, check_satisfiable: bool = True) -> "PartialTree":
        if len(self.heads) > self.n:
            raise TreebankError("more annotated heads than tokens")
        _check_arcs(self.heads, self.n)
        if check_satisfiable and not is_satisfiable(self):
            raise TreebankError("partial tree cannot be extended to a projective single-root tree")
        return self

    def contained_in(self, tree: DepTree) -> bool:
        return all(tree.head(m) == h for m, h in self.heads.items())


Annotation = Union[DepTree, PartialTree]


# ---------------------------------------------------------------------------
# reading and writing


def _parse_block(rows, sentence_index, mode, punct_tags):
    tokens = []
    heads: dict[int, int] = {}
    for lineno, cols in rows:
        if len(cols) not in (8, 10):
            raise TreebankError(f"expected 8 or 10 tab-separated columns, got {len(cols)}",
                                sentence_index, lineno)
        try:
            idx = int(cols[0])
        except ValueError:
            raise TreebankError(f"non-integer ID {cols[0]!r}", sentence_index, lineno) from None
        if idx != len(tokens) + 1:
            raise TreebankError(f"token ID {idx} out of sequence", sentence_index, lineno)
        form = cols[1]
        pos = cols[4] if cols[4] != "_" else cols[3]
        if not form:
            raise TreebankError("empty FORM", sentence_index, lineno)
        tokens.append(Token(idx, form, pos, pos in punct_tags))
        head = cols[6]
        if head == UNANNOTATED:
            if mode == "full":
                raise TreebankError(f"token {idx} has no head in full mode", sentence_index, lineno)
            continue
        try:
            heads[idx] = int(head)
        except ValueError:
            raise TreebankError(f"bad HEAD value {head!r}", sentence_index, lineno) from None
    sentence = Sentence(tuple(tokens))
    n = len(tokens)
    try:
        if mode == "full":
            tree: Annotation = DepTree(tuple(heads[m] for m in range(1, n + 1))).validate()
        else:
            tree = PartialTree(n, heads).validate()
    except TreebankError as err:
        raise TreebankError(err.reason, sentence_index, rows[0][0]) from None
    return sentence, tree


def iter_treebank(source: Union[IO, str, bytes], mode: str = "full",
                  punct_tags=DEFAULT_PUNCT_TAGS, on_error: str = "raise",
                  diagnostics: Optional[list] = None) -> Iterator[tuple]:
    """Yield (Sentence, DepTree | PartialTree) pairs from a CoNLL-X stream.

    With ``on_error="skip"`` invalid sentences are logged, appended to
    ``diagnostics`` (if given) and dropped instead of raising.
    """
    if mode not in ("full", "partial"):
        raise ValueError(f"mode must be 'full' or 'partial', got {mode!r}")
    if on_error not in ("raise", "skip"):
        raise ValueError(f"on_error must be 'raise' or 'skip', got {on_error!r}")
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)
    elif isinstance(source, io.BufferedIOBase) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8")

    def flush(rows, index):
        try:
            return _parse_block(rows, index, mode, punct_tags)
        except TreebankError as err:
            if on_error == "raise":
                raise
            logger.warning("skipping %s", err)
            if diagnostics is not None:
                diagnostics.append(err)
            return None

    rows: list = []
    index = 0
    for lineno, line in enumerate(source, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            if rows:
                item = flush(rows, index)
                if item is not None:
                    yield item
                index += 1
                rows = []
            continue
        if line.startswith("#") and not rows:
            continue
        rows.append((lineno, line.split("\t")))
    if rows:
        item = flush(rows, index)
        if item is not None:
            yield item


def read_treebank(source, mode: str = "full", **kwargs) -> list[tuple]:
    return list(iter_treebank(source, mode, **kwargs))


def load_treebank(path, mode: str = "full", **kwargs) -> list[tuple]:
    with open(path, encoding="utf-8") as f:
        return read_treebank(f, mode, **kwargs)


def format_sentence(sentence: Sentence, tree: Annotation) -> str:
    lines = []
    for tok in sentence.tokens:
        head = tree.head(tok.index)
        head_col = UNANNOTATED if head is None else str(head)
        lines.append("\t".join((str(tok.index), tok.form, "_", tok.pos, tok.pos, "_", head_col, "_")))
    return "\n".join(lines) + "\n\n"


def write_treebank(items: Iterable[tuple], sink: Optional[IO] = None) -> bytes:
    """Serialize (Sentence, tree) pairs; returns the UTF-8 bytes written."""
    text = "".join(format_sentence(s, t) for s, t in items)
    data = text.encode("utf-8")
    if sink is not None:
        if isinstance(sink, io.TextIOBase):
            sink.write(text)
        else:
            sink.write(data)
    return data


def save_treebank(items: Iterable[tuple], path) -> None:
    with open(path, "wb") as f:
        write_treebank(items, f)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalResult:
    correct_heads: int = 0
    scored_tokens: int = 0

    @property
    def uas(self) -> float:
        """Attachment ratio; 0.0 when nothing was scored."""
        return self.correct_heads / self.scored_tokens if self.scored_tokens else 0.0

    def __add__(self, other: "EvalResult") -> "EvalResult":
        return EvalResult(self.correct_heads + other.correct_heads, self.scored_tokens + other.scored_tokens)


def evaluate_uas(pred: DepTree, gold: DepTree, sentence: Sentence) -> EvalResult:
    n = len(sentence)
    if len(pred) != n or len(gold) != n:
        raise ValueError(f"length mismatch: sentence {n}, pred {len(pred)}, gold {len(gold)}")
    correct = scored = 0
    for tok, p, g in zip(sentence.tokens, pred.heads, gold.heads):
        if tok.is_punct:
            continue
        scored += 1
        correct += p == g
    return EvalResult(correct, scored)


def evaluate_corpus(triples: Iterable[tuple]) -> EvalResult:
    """Sum counts over (pred, gold, sentence) triples."""
    total = EvalResult()
    for pred, gold, sentence in triples:
        total = total + evaluate_uas(pred, gold, sentence)
    return total


# ---------------------------------------------------------------------------
# constrained search space


def candidate_heads(sentence: Sentence, partial: PartialTree) -> list[frozenset]:
    """Allowed heads of each token (list index m - 1) under ``partial``.

    A head h is allowed for an unannotated token m when some projective
    single-root tree contains both h->m and every arc of ``partial``.
    """
    from .graph import ConstraintMask, feasible_arcs

    if partial.n != len(sentence):
        raise ValueError("partial tree and sentence lengths differ")
    partial.validate(check_satisfiable=False)
    feasible = feasible_arcs(ConstraintMask.from_partial(partial, check=False))
    out = []
    for m in range(1, partial.n + 1):
        heads = frozenset(int(h) for h in feasible[:, m].nonzero()[0])
        if not heads:
            raise TreebankError(f"no admissible head for token {m}: partial tree is unsatisfiable")
        out.append(heads)
    return out


def is_satisfiable(partial: PartialTree) -> bool:
    from .graph import ConstraintMask, mask_is_satisfiable

    return mask_is_satisfiable(ConstraintMask.from_partial(partial, check=False))
