"""Poisson-sampled observations and their reduction to full observation matrices."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientObservations, InvalidArgument
from .model import NoiseSpec, ProblemInstance
from .tree import SampleBudget, TreeSortResult, tree_sort
from .trisection import TrisectionParams, effective_zeta


@dataclass(frozen=True)
class ObservationLog:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    lam: float
    n: int
    d: int

    def __len__(self) -> int:
        return int(self.rows.size)

    def restrict(self, experts) -> "ObservationLog":
        """Records of the given experts, relabelled 0..len(experts)-1 in the given order."""
        experts = np.asarray(experts, dtype=int)
        relabel = np.full(self.n, -1)
        relabel[experts] = np.arange(experts.size)
        keep = relabel[self.rows] >= 0
        return ObservationLog(relabel[self.rows[keep]], self.cols[keep], self.values[keep],
                              self.lam, experts.size, self.d)

    def thin(self, rng: np.random.Generator) -> tuple["ObservationLog", "ObservationLog"]:
        """Independent fair-coin split; each half has intensity lam/2."""
        coin = rng.random(len(self)) < 0.5
        halves = []
        for m in (coin, ~coin):
            halves.append(ObservationLog(self.rows[m], self.cols[m], self.values[m],
                                         self.lam / 2, self.n, self.d))
        return halves[0], halves[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["i", "k", "y"])
            for i, k, y in zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()):
                out.writerow([i, k, repr(y)])

    @classmethod
    def from_csv(cls, path, n: int, d: int, lam: float) -> "ObservationLog":
        rows, cols, vals = [], [], []
        with open(Path(path), newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(int(rec["i"]))
                cols.append(int(rec["k"]))
                vals.append(float(rec["y"]))
        rows_a = np.asarray(rows, dtype=int)
        cols_a = np.asarray(cols, dtype=int)
        if rows_a.size and (rows_a.min() < 0 or rows_a.max() >= n or cols_a.min() < 0 or cols_a.max() >= d):
            raise InvalidArgument("observation position outside the n x d grid")
        return cls(rows_a, cols_a, np.asarray(vals, dtype=float), float(lam), n, d)


def sample_poisson_observations(inst: ProblemInstance, lam: float, noise: NoiseSpec,
                                rng: np.random.Generator) -> ObservationLog:
    if lam <= 0:
        raise InvalidArgument("lambda must be positive")
    n, d = inst.n, inst.d
    counts = rng.poisson(lam, size=(n, d)).ravel()
    cells = np.repeat(np.arange(n * d), counts)
    cells = cells[rng.permutation(cells.size)]
    rows, cols = np.divmod(cells, d)
    mean = inst.M[rows, cols]
    if noise.kind == "none":
        vals = mean.astype(float)
    elif noise.kind == "bernoulli":
        vals = (rng.random(mean.size) < mean).astype(float)
    else:
        vals = mean + noise.zeta * rng.standard_normal(mean.size)
    return ObservationLog(rows, cols, vals, float(lam), n, d)


@dataclass(frozen=True)
class ReductionPlan:
    regime: str
    lambda_minus: float
    upsilon_star: int
    budget: SampleBudget
    l_lambda: int | None
    reduced_d: int
    batch: int | None
    zeta_reduced: float


def plan_reduction(lam: float, n: int, d: int, zeta: float, delta: float = 0.05,
                   mode: str = "practical", tau_inf: int | None = None) -> ReductionPlan:
    if lam <= 0:
        raise InvalidArgument("lambda must be positive")
    zeta_noise = zeta / math.sqrt(max(lam, 1.0))
    if mode == "paper":
        budget = SampleBudget.paper(n, d, delta, zeta_noise)
    else:
        budget = SampleBudget.practical(n, d, tau_inf)
    ups = budget.upsilon_star
    lm = lam / (4 * ups)
    if lm <= 2 / d:
        return ReductionPlan("very_small", lm, ups, budget, None, d, None, zeta)
    if lm <= 1:
        l = math.floor(1 / lm)
        return ReductionPlan("small", lm, ups, budget, l, d // l, None, zeta)
    b = math.floor(lm)
    return ReductionPlan("large", lm, ups, budget, None, d, b, zeta / math.sqrt(b))


def _rank_within(keys: np.ndarray) -> np.ndarray:
    """Position of each record among the records sharing its key, in log order."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    start = np.r_[0, np.flatnonzero(sk[1:] != sk[:-1]) + 1]
    first = np.repeat(start, np.diff(np.r_[start, sk.size]))
    rank = np.empty(keys.size, dtype=int)
    rank[order] = np.arange(keys.size) - first
    return rank


def reduce_observations(log: ObservationLog, plan: ReductionPlan) -> list[np.ndarray]:
    if plan.regime not in ("small", "large"):
        raise InvalidArgument("nothing to reduce in the very small regime")
    n, ups = log.n, plan.upsilon_star
    if plan.regime == "small":
        l, dr = plan.l_lambda, plan.reduced_d
        keep = log.cols < dr * l
        rows, bins, vals = log.rows[keep], log.cols[keep] // l, log.values[keep]
        need, width = ups, dr
    else:
        rows, bins, vals = log.rows, log.cols, log.values
        need, width = ups * plan.batch, log.d
    keys = rows * width + bins
    have = np.bincount(keys, minlength=n * width)
    short = np.flatnonzero(have < need)
    if short.size:
        c = int(short[0])
        raise InsufficientObservations(divmod(c, width), int(have[c]), need)
    rank = _rank_within(keys)
    used = rank < need
    out = np.zeros((ups, n, width))
    if plan.regime == "small":
        out[rank[used], rows[used], bins[used]] = vals[used]
    else:
        np.add.at(out, (rank[used] // plan.batch, rows[used], bins[used]), vals[used])
        out /= plan.batch
    return list(out)


@dataclass
class WMPResult:
    pi_hat: np.ndarray
    plan: ReductionPlan
    failed: bool = False
    tree: TreeSortResult | None = None


def estimate_wmp(log: ObservationLog, zeta: float, delta: float = 0.05, mode: str = "practical",
                 practical_scaling: float = 1.0 / 64, tau_inf: int | None = None,
                 rng: np.random.Generator | None = None) -> WMPResult:
    rng = rng if rng is not None else np.random.default_rng()
    n, d = log.n, log.d
    plan = plan_reduction(log.lam, n, d, zeta, delta, mode, tau_inf)
    if plan.regime == "very_small":
        return WMPResult(rng.permutation(n), plan)
    try:
        reduced = reduce_observations(log, plan)
    except InsufficientObservations:
        return WMPResult(rng.permutation(n), plan, failed=True)
    variant = "WM_SR" if plan.regime == "small" else "WM"
    params = TrisectionParams(zeta=plan.zeta_reduced, delta=delta, mode=variant,
                              practical_scaling=practical_scaling)
    res = tree_sort(reduced, params, plan.budget, rng)
    return WMPResult(res.pi_hat, plan, tree=res)


def default_delta(lam: float, n: int, d: int, zeta: float) -> float:
    """Failure budget zeta_-^2 [(lam v 1) n d]^-2 used for conformance runs."""
    zm = min(effective_zeta(zeta), 1.0)
    return zm * zm / (max(lam, 1.0) * n * d) ** 2
