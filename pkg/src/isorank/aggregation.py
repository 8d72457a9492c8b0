"""Dyadic grids, block encoding and block aggregation.

Block starts are 0-indexed: at scale r the grid is {0, r, ..., floor(d/r)*r}.
The last start may open a window that runs past the final column; entries
beyond column d-1 count as 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class DyadicGrids:
    scales: tuple[int, ...]
    heights: tuple[float, ...]


def build_grids(n: int, d: int, zeta: float) -> DyadicGrids:
    if n < 1 or d < 1:
        raise InvalidArgument("n and d must be positive")
    if zeta <= 0:
        raise InvalidArgument("zeta must be positive (substitute a tiny value for noiseless data)")
    scales = tuple(2 ** k for k in range(int(math.floor(math.log2(d))) + 1))
    low = zeta * zeta / (n * d)
    if low > 1:
        return DyadicGrids(scales, ())
    kmin = math.ceil(math.log2(low))
    # guard against rounding in log2
    while 2.0 ** (kmin - 1) >= low:
        kmin -= 1
    while 2.0 ** kmin < low:
        kmin += 1
    heights = tuple(2.0 ** k for k in range(kmin, 1))
    return DyadicGrids(scales, heights)


def block_starts(d: int, r: int) -> np.ndarray:
    return np.arange(0, (d // r) * r + 1, r)


def encode_set(D, r: int, d: int) -> np.ndarray:
    """Block starts whose window [l, l+r) meets the question set D."""
    D = np.asarray(D)
    if D.dtype == bool:
        D = np.flatnonzero(D)
    if D.size == 0:
        return np.empty(0, dtype=int)
    if D.min() < 0 or D.max() >= d:
        raise InvalidArgument("question set outside [0, d)")
    hit = np.zeros(D.max() // r + 1, dtype=bool)
    hit[D // r] = True
    return np.flatnonzero(hit) * r


def padded_prefix(Y: np.ndarray, x) -> np.ndarray:
    """Sum of the padded rows of Y over columns [0, x) for arbitrary integer x.

    Columns left of 0 contribute 0, columns right of d-1 contribute 1 each.
    Works on a vector or on the rows of a matrix; x may be an array.
    """
    return prefix_lookup(prefix_table(Y), x)


def prefix_table(Y: np.ndarray) -> np.ndarray:
    """Cumulative sums of Y with a leading zero column, for repeated padded_prefix lookups."""
    Y = np.asarray(Y, dtype=float)
    cs = np.zeros(Y.shape[:-1] + (Y.shape[-1] + 1,))
    np.cumsum(Y, axis=-1, out=cs[..., 1:])
    return cs


def prefix_lookup(cs: np.ndarray, x) -> np.ndarray:
    d = cs.shape[-1] - 1
    # positions as floats: windows wider than int64 can occur for tiny heights
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, 0, d).astype(int)
    return cs[..., xc] + np.maximum(x - d, 0.0)


def encode_matrix(Y: np.ndarray, P, Q, r: int) -> np.ndarray:
    """Z[i, l] = r^{-1/2} * (sum of padded Y[P_i] over the block starting at Q_l)."""
    Y = np.asarray(Y, dtype=float)
    d = Y.shape[1]
    Q = np.asarray(Q, dtype=int)
    if Q.size and (np.any(Q % r) or Q.min() < 0 or Q.max() > (d // r) * r):
        raise InvalidArgument("Q is not a subset of the scale-r block grid")
    rows = Y[np.asarray(P, dtype=int)]
    return (padded_prefix(rows, Q + r) - padded_prefix(rows, Q)) / math.sqrt(r)


def column_mean(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] == 0:
        raise InvalidArgument("column mean of an empty expert set")
    return A.mean(axis=0)
