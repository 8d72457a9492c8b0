"""Matrix reconstruction, the Borda baseline and the pairwise-comparison ranking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import inverse
from .partial import ObservationLog, estimate_wmp


def isotonic_regression_1d(v, w=None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit by pooling adjacent violators."""
    v = np.asarray(v, dtype=float)
    w = np.ones_like(v) if w is None else np.asarray(w, dtype=float)
    if v.shape != w.shape or np.any(w <= 0):
        raise ValueError("weights must be positive and match the values")
    means: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for x, wx in zip(v.tolist(), w.tolist()):
        means.append(x)
        weights.append(wx)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), weights.pop(), sizes.pop()
            tot = weights[-1] + w2
            means[-1] = (means[-1] * weights[-1] + m2 * w2) / tot
            weights[-1] = tot
            sizes[-1] += s2
    return np.repeat(means, sizes)


def _iso_rows(A: np.ndarray) -> np.ndarray:
    return np.vstack([isotonic_regression_1d(row) for row in A]) if A.size else A.copy()


@dataclass(frozen=True)
class ProjectionSettings:
    tol: float = 1e-12
    max_iter: int = 20_000


@dataclass
class ProjectionResult:
    B: np.ndarray
    converged: bool
    iterations: int
    residual: float = field(default=0.0)


def project_bi_isotonic(Y, settings: ProjectionSettings | None = None) -> ProjectionResult:
    """Dykstra's alternating projections onto the row- and column-monotone cones, then [0,1]."""
    settings = settings or ProjectionSettings()
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise ValueError("non-finite entries")
    x = Y.copy()
    p = np.zeros_like(Y)
    q = np.zeros_like(Y)
    converged = False
    it = 0
    change = np.inf
    for it in range(1, settings.max_iter + 1):
        y = _iso_rows(x + p)
        p = x + p - y
        x_new = _iso_rows((y + q).T).T
        q = y + q - x_new
        change = float(np.linalg.norm(x_new - x))
        x = x_new
        if change <= settings.tol:
            converged = True
            break
    # bounded isotonic fit = clipped unbounded fit; the running maxima only
    # remove the tiny row violations left by the last column sweep
    B = np.clip(x, 0.0, 1.0)
    B = np.maximum.accumulate(np.maximum.accumulate(B, axis=1), axis=0)
    return ProjectionResult(B, converged, it, change)


def empirical_matrix(log: ObservationLog) -> np.ndarray:
    """(1/lam) * sum of the values recorded at each cell."""
    Y = np.zeros((log.n, log.d))
    np.add.at(Y, (log.rows, log.cols), log.values)
    return Y / log.lam


def estimate_matrix(log: ObservationLog, pi_hat, settings: ProjectionSettings | None = None) -> np.ndarray:
    """Plug-in estimate: sort rows by pi_hat, project, unsort.

    ``log`` should be independent of pi_hat, e.g. the second half from
    ``ObservationLog.thin``; its ``lam`` is the intensity of that half.
    """
    Y2 = empirical_matrix(log)
    inv = inverse(np.asarray(pi_hat))
    B = project_bi_isotonic(Y2[inv], settings).B
    return B[np.asarray(pi_hat)]


def borda_rank(data) -> np.ndarray:
    """Rank by ascending row sum, ties by index.  Accepts a matrix or an ObservationLog."""
    if isinstance(data, ObservationLog):
        sums = np.bincount(data.rows, weights=data.values, minlength=data.n)
    else:
        sums = np.asarray(data, dtype=float).sum(axis=1)
    order = np.lexsort((np.arange(sums.size), sums))
    return inverse(order)


@dataclass
class PairwiseComparisons:
    pairs: set
    phi: np.ndarray


def pairwise_estimator(log: ObservationLog, zeta: float, delta: float = 0.05, mode: str = "practical",
                       practical_scaling: float = 1.0 / 64, tau_inf: int | None = None,
                       rng: np.random.Generator | None = None) -> tuple[np.ndarray, PairwiseComparisons]:
    """Sort experts by how many others were found strictly below them in two-expert runs."""
    rng = rng if rng is not None else np.random.default_rng()
    n = log.n
    if n < 2:
        return np.arange(n), PairwiseComparisons(set(), np.zeros(n, dtype=int))
    by_row = [np.flatnonzero(log.rows == i) for i in range(n)]
    pairs: set = set()
    for i in range(n):
        for j in range(i + 1, n):
            idx = np.concatenate([by_row[i], by_row[j]])
            idx.sort()
            sub = ObservationLog((log.rows[idx] == j).astype(int), log.cols[idx], log.values[idx],
                                 log.lam, 2, log.d)
            res = estimate_wmp(sub, zeta, delta, mode, practical_scaling, tau_inf, rng)
            if res.tree is None or not res.tree.records:
                continue
            root = res.tree.records[0]
            if not root.O and len(root.P) == 1 and len(root.I) == 1:
                low, = root.P
                high, = root.I
                a, b = (i, j) if low == 0 else (j, i)
                pairs.add((a, b))
    phi = np.zeros(n, dtype=int)
    for _, b in pairs:
        phi[b] += 1
    order = np.lexsort((np.arange(n), phi))
    return inverse(order), PairwiseComparisons(pairs, phi)
