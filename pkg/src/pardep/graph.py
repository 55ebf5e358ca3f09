"""Second-order projective decoding and inside-outside.

The chart is the adjacent-sibling extension of Eisner's algorithm
(McDonald & Pereira style).  Over token spans [s, t] with 1 <= s <= t <= n
it keeps

* ``CR[s,t]`` / ``CL[s,t]``: complete spans headed by s / by t,
* ``IR[s,t]`` / ``IL[s,t]``: incomplete spans with the arc s->t / t->s,
* ``SB[s,t]``: a sibling span, the right half of one child next to the
  left half of its neighbour.

The root is attached last: ``root = max_r CL[1,r] + CR[r,n] + f(0,r,-)``,
which gives the artificial root exactly one dependent.

A factor score ``f(h,m,s) = arc[h,m] + sib[h,m,s]`` covers one arc together
with its previous sibling ``s`` (the sibling between h and m attached just
before m).  ``sib[h,m,h]`` stores the first-child (no sibling) entry.
Disallowed arcs score ``NEG`` and are skipped by every log-sum-exp.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .corpus import DepTree, PartialTree, TreebankError

NEG = -1e18
_NEG_HALF = NEG / 2


class UnsatisfiableError(TreebankError):
    """No projective single-root tree survives the constraints."""


@dataclass
class FactorScores:
    """Arc and adjacent-sibling scores of one sentence.

    ``arc`` has shape (n+1, n+1), indexed [head, modifier]; ``sib`` has shape
    (n+1, n+1, n+1), indexed [head, modifier, sibling] with sibling == head
    for a first child.
    """

    arc: np.ndarray
    sib: np.ndarray

    @property
    def n(self) -> int:
        return self.arc.shape[0] - 1

    @classmethod
    def zeros(cls, n: int) -> "FactorScores":
        return cls(np.zeros((n + 1, n + 1)), np.zeros((n + 1, n + 1, n + 1)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, scale: float = 1.0) -> "FactorScores":
        return cls(rng.normal(0, scale, (n + 1, n + 1)), rng.normal(0, scale, (n + 1, n + 1, n + 1)))

    def factor(self, h: int, m: int, s: Optional[int] = None) -> float:
        return float(self.arc[h, m] + self.sib[h, m, h if s is None else s])


@dataclass
class ConstraintMask:
    """allowed[h, m] is True when the arc h->m may appear in a tree."""

    allowed: np.ndarray

    @property
    def n(self) -> int:
        return self.allowed.shape[0] - 1

    @classmethod
    def trivial(cls, n: int) -> "ConstraintMask":
        allowed = np.ones((n + 1, n + 1), dtype=np.bool_)
        np.fill_diagonal(allowed, False)
        allowed[:, 0] = False
        return cls(allowed)

    @classmethod
    def from_partial(cls, partial: PartialTree, check: bool = True) -> "ConstraintMask":
        mask = cls.trivial(partial.n)
        for m, h in partial.heads.items():
            mask.allowed[:, m] = False
            mask.allowed[h, m] = True
        if check and not mask_is_satisfiable(mask):
            raise UnsatisfiableError("partial tree admits no projective single-root completion")
        return mask

    @classmethod
    def from_tree(cls, tree: DepTree) -> "ConstraintMask":
        return cls.from_partial(tree.to_partial(), check=False)

    def __le__(self, other: "ConstraintMask") -> bool:
        return bool(np.all(~self.allowed | other.allowed))


@dataclass
class InsideOutsideResult:
    log_partition: float
    arc_marginal: np.ndarray  # (n+1, n+1), [head, modifier]
    sib_marginal: np.ndarray  # (n+1, n+1, n+1), sibling == head for first child

    def expected_features(self, atoms, config, out: np.ndarray, scale: float = 1.0) -> None:
        """Add scale * E[f] into the dense array ``out``."""
        from .features import accumulate_factor_features

        accumulate_factor_features(atoms, self.arc_marginal, self.sib_marginal, out, config, scale)


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _lae(a, b):
    if a < b:
        a, b = b, a
    if b <= _NEG_HALF:
        return a
    return a + np.log1p(np.exp(b - a))


@njit(cache=True)
def _factor_table(arc, sib, allowed):
    n = arc.shape[0] - 1
    f = np.full((n + 1, n + 1, n + 1), NEG)
    for h in range(n + 1):
        for m in range(1, n + 1):
            if h == m or not allowed[h, m]:
                continue
            for s in range(n + 1):
                f[h, m, s] = arc[h, m] + sib[h, m, s]
    return f


@njit(cache=True)
def _inside(f, n, use_max):
    """Chart pass.  With use_max the semiring is (max, +) and backpointers
    are recorded; otherwise (log-sum-exp, +)."""
    CR = np.full((n + 2, n + 2), NEG)
    CL = np.full((n + 2, n + 2), NEG)
    IR = np.full((n + 2, n + 2), NEG)
    IL = np.full((n + 2, n + 2), NEG)
    SB = np.full((n + 2, n + 2), NEG)
    bCR = np.full((n + 2, n + 2), -1, dtype=np.int64)
    bCL = np.full((n + 2, n + 2), -1, dtype=np.int64)
    bIR = np.full((n + 2, n + 2), -1, dtype=np.int64)
    bIL = np.full((n + 2, n + 2), -1, dtype=np.int64)
    bSB = np.full((n + 2, n + 2), -1, dtype=np.int64)
    for s in range(1, n + 1):
        CR[s, s] = 0.0
        CL[s, s] = 0.0
    for w in range(1, n):
        for s in range(1, n - w + 1):
            t = s + w
            # sibling span
            best = NEG
            arg = -1
            for u in range(s, t):
                v = CR[s, u] + CL[u + 1, t]
                if use_max:
                    if v > best:
                        best = v
                        arg = u
                else:
                    best = _lae(best, v)
            SB[s, t] = best
            bSB[s, t] = arg
            # s -> t
            best = CL[s + 1, t] + f[s, t, s]
            arg = -1
            if best <= _NEG_HALF:
                best = NEG
            for r in range(s + 1, t):
                v = IR[s, r] + SB[r, t] + f[s, t, r]
                if use_max:
                    if v > best:
                        best = v
                        arg = r
                else:
                    best = _lae(best, v)
            IR[s, t] = best
            bIR[s, t] = arg
            # t -> s
            best = CR[s, t - 1] + f[t, s, t]
            arg = -1
            if best <= _NEG_HALF:
                best = NEG
            for r in range(s + 1, t):
                v = SB[s, r] + IL[r, t] + f[t, s, r]
                if use_max:
                    if v > best:
                        best = v
                        arg = r
                else:
                    best = _lae(best, v)
            IL[s, t] = best
            bIL[s, t] = arg
            # complete spans
            best = NEG
            arg = -1
            for r in range(s + 1, t + 1):
                v = IR[s, r] + CR[r, t]
                if use_max:
                    if v > best:
                        best = v
                        arg = r
                else:
                    best = _lae(best, v)
            CR[s, t] = best
            bCR[s, t] = arg
            best = NEG
            arg = -1
            for r in range(s, t):
                v = CL[s, r] + IL[r, t]
                if use_max:
                    if v > best:
                        best = v
                        arg = r
                else:
                    best = _lae(best, v)
            CL[s, t] = best
            bCL[s, t] = arg
    total = NEG
    root = -1
    for r in range(1, n + 1):
        v = CL[1, r] + CR[r, n] + f[0, r, 0]
        if use_max:
            if v > total:
                total = v
                root = r
        else:
            total = _lae(total, v)
    if total <= _NEG_HALF:
        total = NEG
    return total, root, CR, CL, IR, IL, SB, bCR, bCL, bIR, bIL, bSB


@njit(cache=True)
def _backtrack(n, root, bCR, bCL, bIR, bIL, bSB):
    heads = np.full(n + 1, -1, dtype=np.int64)
    heads[root] = 0
    # item kinds: 0 CR, 1 CL, 2 IR, 3 IL, 4 SB
    stack_kind = np.empty(4 * n + 8, dtype=np.int64)
    stack_s = np.empty(4 * n + 8, dtype=np.int64)
    stack_t = np.empty(4 * n + 8, dtype=np.int64)
    top = 0
    stack_kind[top], stack_s[top], stack_t[top] = 1, 1, root
    top += 1
    stack_kind[top], stack_s[top], stack_t[top] = 0, root, n
    top += 1
    while top > 0:
        top -= 1
        kind, s, t = stack_kind[top], stack_s[top], stack_t[top]
        if s >= t:
            continue
        if kind == 0:
            r = bCR[s, t]
            stack_kind[top], stack_s[top], stack_t[top] = 2, s, r
            top += 1
            stack_kind[top], stack_s[top], stack_t[top] = 0, r, t
            top += 1
        elif kind == 1:
            r = bCL[s, t]
            stack_kind[top], stack_s[top], stack_t[top] = 1, s, r
            top += 1
            stack_kind[top], stack_s[top], stack_t[top] = 3, r, t
            top += 1
        elif kind == 2:
            heads[t] = s
            r = bIR[s, t]
            if r < 0:
                stack_kind[top], stack_s[top], stack_t[top] = 1, s + 1, t
                top += 1
            else:
                stack_kind[top], stack_s[top], stack_t[top] = 2, s, r
                top += 1
                stack_kind[top], stack_s[top], stack_t[top] = 4, r, t
                top += 1
        elif kind == 3:
            heads[s] = t
            r = bIL[s, t]
            if r < 0:
                stack_kind[top], stack_s[top], stack_t[top] = 0, s, t - 1
                top += 1
            else:
                stack_kind[top], stack_s[top], stack_t[top] = 4, s, r
                top += 1
                stack_kind[top], stack_s[top], stack_t[top] = 3, r, t
                top += 1
        else:
            u = bSB[s, t]
            stack_kind[top], stack_s[top], stack_t[top] = 0, s, u
            top += 1
            stack_kind[top], stack_s[top], stack_t[top] = 1, u + 1, t
            top += 1
    return heads


@njit(cache=True)
def _outside(f, n, Z, CR, CL, IR, IL, SB):
    oCR = np.full((n + 2, n + 2), NEG)
    oCL = np.full((n + 2, n + 2), NEG)
    oIR = np.full((n + 2, n + 2), NEG)
    oIL = np.full((n + 2, n + 2), NEG)
    oSB = np.full((n + 2, n + 2), NEG)
    mu = np.zeros((n + 1, n + 1, n + 1))
    for r in range(1, n + 1):
        if f[0, r, 0] <= _NEG_HALF:
            continue
        oCL[1, r] = _lae(oCL[1, r], CR[r, n] + f[0, r, 0])
        oCR[r, n] = _lae(oCR[r, n], CL[1, r] + f[0, r, 0])
        mu[0, r, 0] += np.exp(CL[1, r] + CR[r, n] + f[0, r, 0] - Z)
    for w in range(n - 1, 0, -1):
        for s in range(1, n - w + 1):
            t = s + w
            o = oCL[s, t]
            if o > _NEG_HALF:
                for r in range(s, t):
                    oCL[s, r] = _lae(oCL[s, r], o + IL[r, t])
                    oIL[r, t] = _lae(oIL[r, t], o + CL[s, r])
            o = oCR[s, t]
            if o > _NEG_HALF:
                for r in range(s + 1, t + 1):
                    oIR[s, r] = _lae(oIR[s, r], o + CR[r, t])
                    oCR[r, t] = _lae(oCR[r, t], o + IR[s, r])
            o = oIL[s, t]
            if o > _NEG_HALF:
                g = f[t, s, t]
                if g > _NEG_HALF:
                    oCR[s, t - 1] = _lae(oCR[s, t - 1], o + g)
                    mu[t, s, t] += np.exp(o + CR[s, t - 1] + g - Z)
                for r in range(s + 1, t):
                    g = f[t, s, r]
                    if g <= _NEG_HALF:
                        continue
                    oSB[s, r] = _lae(oSB[s, r], o + IL[r, t] + g)
                    oIL[r, t] = _lae(oIL[r, t], o + SB[s, r] + g)
                    mu[t, s, r] += np.exp(o + SB[s, r] + IL[r, t] + g - Z)
            o = oIR[s, t]
            if o > _NEG_HALF:
                g = f[s, t, s]
                if g > _NEG_HALF:
                    oCL[s + 1, t] = _lae(oCL[s + 1, t], o + g)
                    mu[s, t, s] += np.exp(o + CL[s + 1, t] + g - Z)
                for r in range(s + 1, t):
                    g = f[s, t, r]
                    if g <= _NEG_HALF:
                        continue
                    oIR[s, r] = _lae(oIR[s, r], o + SB[r, t] + g)
                    oSB[r, t] = _lae(oSB[r, t], o + IR[s, r] + g)
                    mu[s, t, r] += np.exp(o + IR[s, r] + SB[r, t] + g - Z)
            o = oSB[s, t]
            if o > _NEG_HALF:
                for u in range(s, t):
                    oCR[s, u] = _lae(oCR[s, u], o + CL[u + 1, t])
                    oCL[u + 1, t] = _lae(oCL[u + 1, t], o + CR[s, u])
    return mu


# ---------------------------------------------------------------------------
# public API


def _table(factors: FactorScores, mask: ConstraintMask) -> np.ndarray:
    if factors.n != mask.n:
        raise ValueError(f"factor scores cover {factors.n} tokens, mask {mask.n}")
    return _factor_table(np.ascontiguousarray(factors.arc, dtype=np.float64),
                         np.ascontiguousarray(factors.sib, dtype=np.float64), mask.allowed)


def score_tree(factors: FactorScores, tree: DepTree, mask: Optional[ConstraintMask] = None) -> float:
    """Sum of the tree's arc and adjacent-sibling factors; -inf if masked."""
    from .features import sibling_pairs

    total = 0.0
    for h, m, s in sibling_pairs(tree.heads):
        if mask is not None and not mask.allowed[h, m]:
            return float("-inf")
        total += factors.arc[h, m] + factors.sib[h, m, h if s is None else s]
    return float(total)


def decode_heads(factors: FactorScores, mask: ConstraintMask) -> tuple[np.ndarray, float]:
    """Best tree as a head array (index 0 unused) and its score."""
    n = factors.n
    f = _table(factors, mask)
    total, root, _, _, _, _, _, bCR, bCL, bIR, bIL, bSB = _inside(f, n, True)
    if total <= _NEG_HALF:
        raise UnsatisfiableError("no tree satisfies the constraint mask")
    return _backtrack(n, root, bCR, bCL, bIR, bIL, bSB), float(total)


def decode(factors: FactorScores, mask: Optional[ConstraintMask] = None) -> DepTree:
    if mask is None:
        mask = ConstraintMask.trivial(factors.n)
    heads, _ = decode_heads(factors, mask)
    return DepTree(tuple(heads[1:]))


def log_partition(factors: FactorScores, mask: ConstraintMask) -> float:
    f = _table(factors, mask)
    total = _inside(f, factors.n, False)[0]
    if total <= _NEG_HALF:
        raise UnsatisfiableError("no tree satisfies the constraint mask")
    return float(total)


def inside_outside(factors: FactorScores, mask: Optional[ConstraintMask] = None) -> InsideOutsideResult:
    n = factors.n
    if mask is None:
        mask = ConstraintMask.trivial(n)
    f = _table(factors, mask)
    Z, _, CR, CL, IR, IL, SB = _inside(f, n, False)[:7]
    if Z <= _NEG_HALF:
        raise UnsatisfiableError("no tree satisfies the constraint mask")
    mu = _outside(f, n, Z, CR, CL, IR, IL, SB)
    return InsideOutsideResult(float(Z), mu.sum(axis=2), mu)


def forest_log_prob(factors: FactorScores, mask: ConstraintMask,
                    full_mask: Optional[ConstraintMask] = None) -> float:
    """log p(partial | x): log-partition of the constrained forest minus the
    unconstrained one."""
    if full_mask is None:
        full_mask = ConstraintMask.trivial(factors.n)
    if not mask <= full_mask:
        raise ValueError("mask must be a subset of full_mask")
    return log_partition(factors, mask) - log_partition(factors, full_mask)


def mask_is_satisfiable(mask: ConstraintMask) -> bool:
    f = _table(FactorScores.zeros(mask.n), mask)
    return bool(_inside(f, mask.n, True)[0] > _NEG_HALF)


def feasible_arcs(mask: ConstraintMask) -> np.ndarray:
    """Boolean (n+1, n+1): arcs used by at least one tree under the mask.

    Runs inside-outside over uniform scores, so marginals are tree-count
    ratios; an arc is feasible exactly when its marginal is positive.
    """
    n = mask.n
    f = _table(FactorScores.zeros(n), mask)
    Z, _, CR, CL, IR, IL, SB = _inside(f, n, False)[:7]
    if Z <= _NEG_HALF:
        return np.zeros((n + 1, n + 1), dtype=np.bool_)
    return _outside(f, n, Z, CR, CL, IR, IL, SB).sum(axis=2) > 0.0
