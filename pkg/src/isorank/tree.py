"""Hierarchical sorting tree, BlockSort, TreeSort and permutation extraction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetExhausted, InvalidArgument
from .trisection import (NeighborhoodContext, RoundLog, TrisectionParams, double_trisection,
                         effective_zeta)

ZERO, PTYPE, ONE = "ZERO", "P", "ONE"
_DIGIT = {ZERO: 0, PTYPE: 1, ONE: 2}


@dataclass
class Node:
    members: tuple
    kind: str
    depth: int
    label: tuple = ()
    children: list | None = None
    conservative: tuple | None = None   # (O_bar, P_bar, I_bar)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def to_dict(self) -> dict:
        out = {"type": self.kind, "members": list(self.members), "depth": self.depth}
        if self.conservative is not None:
            out["conservative"] = [list(s) for s in self.conservative]
        if self.children is not None:
            out["children"] = [c.to_dict() for c in self.children]
        return out


@dataclass
class SortingTree:
    root: Node

    @classmethod
    def initial(cls, n: int) -> "SortingTree":
        return cls(Node(tuple(range(n)), ZERO, 0))

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.children:
                stack.extend(node.children)

    def leaves(self) -> list[Node]:
        """Leaves in the order induced by the ternary labels (ZERO < P < ONE)."""
        return sorted((x for x in self.nodes() if x.is_leaf), key=lambda x: x.label)

    def active_leaves(self, depth: int) -> list[Node]:
        return [x for x in self.leaves() if x.depth == depth and x.kind != PTYPE]

    def to_json(self) -> str:
        return json.dumps(self.root.to_dict())


@dataclass(frozen=True)
class SampleBudget:
    tau_inf: int
    t_inf: int
    mode: str = "practical"

    @property
    def upsilon_star(self) -> int:
        return 6 * self.tau_inf * max(self.t_inf, 1)

    @classmethod
    def practical(cls, n: int, d: int, tau_inf: int | None = None) -> "SampleBudget":
        tau = max(3, math.ceil(math.log2(n * d))) if tau_inf is None else int(tau_inf)
        return cls(tau, _depth_cap(n), "practical")

    @classmethod
    def paper(cls, n: int, d: int, delta: float, zeta: float) -> "SampleBudget":
        zm = min(effective_zeta(zeta), 1.0)
        tau = math.ceil(4e7 * math.log(n * d / (delta * zm * zm)) ** 7)
        return cls(tau, _depth_cap(n), "paper")


def _depth_cap(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0


class SampleScheduler:
    """Hands out 6 samples per (depth, iteration).

    Paper mode refuses to reuse a sample; practical mode cycles through the
    pool and counts how many draws were repeats.
    """

    def __init__(self, pool: Sequence[np.ndarray], budget: SampleBudget):
        if not pool:
            raise InvalidArgument("empty sample pool")
        self.pool = list(pool)
        self.budget = budget
        self._requested: set[int] = set()

    @property
    def reuse_count(self) -> int:
        return sum(1 for i in self._requested if i >= len(self.pool))

    def draw(self, depth: int, tau: int) -> list[np.ndarray]:
        base = 6 * (depth * self.budget.tau_inf + tau)
        idx = list(range(base, base + 6))
        if self.budget.mode == "paper" and idx[-1] >= len(self.pool):
            raise BudgetExhausted(f"sample {idx[-1]} requested, pool holds {len(self.pool)}")
        self._requested.update(idx)
        return [self.pool[i % len(self.pool)] for i in idx]


@dataclass
class BlockSortRecord:
    depth: int
    G: frozenset
    O: frozenset
    P: frozenset
    I: frozenset
    O_bar: frozenset
    P_bar: frozenset
    I_bar: frozenset
    iterations: int


def block_sort(draw: Callable[[int], list], ctx: NeighborhoodContext | None, G, params: TrisectionParams,
               tau_inf: int, early_exit: bool = True, log: RoundLog | None = None,
               depth: int = 0) -> BlockSortRecord:
    G = frozenset(int(x) for x in G)
    empty = frozenset()
    if len(G) <= 1:
        return BlockSortRecord(depth, G, empty, G, empty, empty, G, empty, 0)
    O, I, Ob, Ib = set(), set(), set(), set()
    iterations = 0
    for tau in range(tau_inf):
        rest = G - Ob - Ib
        if len(rest) <= 1:
            break
        # the pivot rank can leave [1, |rest|] only once the conservative sets are already wrong
        gamma = min(max(len(G) // 2 - len(Ob), 1), len(rest))
        res = double_trisection(draw(tau), ctx, rest, gamma, params, log)
        iterations += 1
        before = (len(O), len(I), len(Ob), len(Ib))
        O |= res.L
        I |= res.U
        Ob |= res.L_bar
        Ib |= res.U_bar
        if early_exit and before == (len(O), len(I), len(Ob), len(Ib)):
            break
    if O & I:
        O_snap, I_snap = frozenset(O), frozenset(I)
        O = set(O_snap - I_snap)
        I = set(I_snap - O_snap)
        Ob &= O
        Ib &= I
    O, I, Ob, Ib = map(frozenset, (O, I, Ob, Ib))
    return BlockSortRecord(depth, G, O, G - O - I, I, Ob, G - Ob - Ib, Ib, iterations)


def context_for(leaves: list[Node], pos: int) -> NeighborhoodContext:
    below = [x.members for x in reversed(leaves[:pos])]
    above = [x.members for x in leaves[pos + 1:]]
    return NeighborhoodContext(below=below, above=above)


def order_leaves(tree: SortingTree, G: Node) -> NeighborhoodContext:
    active = tree.active_leaves(G.depth)
    for pos, x in enumerate(active):
        if x is G:
            return context_for(active, pos)
    raise InvalidArgument("G is not an active leaf of the tree")


def extract_permutation(tree: SortingTree, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    leaves = tree.leaves()
    members = [np.asarray(x.members, dtype=int) for x in leaves]
    total = sum(m.size for m in members)
    n = total if n is None else n
    flat = np.concatenate(members) if members else np.empty(0, dtype=int)
    if total != n or not np.array_equal(np.sort(flat), np.arange(n)):
        raise RuntimeError("leaves do not partition the experts")
    pi = np.empty(n, dtype=int)
    start = 0
    for m in members:
        ranks = start + np.arange(m.size)
        if m.size > 1:
            ranks = rng.permutation(ranks)
        pi[m] = ranks
        start += m.size
    return pi


@dataclass
class TreeSortResult:
    tree: SortingTree
    pi_hat: np.ndarray
    records: list = field(default_factory=list)
    budget: SampleBudget | None = None
    reuse_count: int = 0
    rounds: RoundLog = field(default_factory=RoundLog)


def tree_sort(samples: Sequence[np.ndarray], params: TrisectionParams, budget: SampleBudget | None = None,
              rng: np.random.Generator | None = None) -> TreeSortResult:
    samples = [np.asarray(s, dtype=float) for s in samples]
    n, d = samples[0].shape
    budget = budget if budget is not None else SampleBudget.practical(n, d)
    rng = rng if rng is not None else np.random.default_rng()
    sched = SampleScheduler(samples, budget)
    early = budget.mode == "practical"
    tree = SortingTree.initial(n)
    records: list[BlockSortRecord] = []
    log = RoundLog()
    for t in range(budget.t_inf):
        active = tree.active_leaves(t)
        if all(len(x.members) <= 1 for x in active):
            break
        for pos, leaf in enumerate(active):
            ctx = context_for(active, pos)
            rec = block_sort(lambda tau, t=t: sched.draw(t, tau), ctx, leaf.members, params,
                             budget.tau_inf, early, log, depth=t)
            records.append(rec)
            kids = []
            for kind, part in ((ZERO, rec.O), (PTYPE, rec.P), (ONE, rec.I)):
                if part:
                    kids.append(Node(tuple(sorted(part)), kind, t + 1, leaf.label + (_DIGIT[kind],)))
            leaf.children = kids
            leaf.conservative = (tuple(sorted(rec.O_bar)), tuple(sorted(rec.P_bar)), tuple(sorted(rec.I_bar)))
    pi = extract_permutation(tree, rng, n)
    return TreeSortResult(tree, pi, records, budget, sched.reuse_count, log)


def estimate(samples: Sequence[np.ndarray], variant: str = "WM", zeta: float = 1.0, delta: float = 0.05,
             practical_scaling: float = 1.0 / 64, budget: SampleBudget | None = None,
             rng: np.random.Generator | None = None) -> TreeSortResult:
    params = TrisectionParams(zeta=zeta, delta=delta, mode=variant, practical_scaling=practical_scaling)
    return tree_sort(samples, params, budget, rng)
