"""Pivot comparisons, CUSUM dimension reduction, debiased PCA and the double trisection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aggregation import DyadicGrids, build_grids, column_mean, encode_matrix, encode_set, padded_prefix, prefix_lookup, prefix_table
from .errors import InvalidArgument, NumericNonconvergence

MODES = ("HT", "WM", "WM_SR")
ZETA_FLOOR = 2.0 ** -40


def effective_zeta(zeta: float) -> float:
    return zeta if zeta > 0 else ZETA_FLOOR


@dataclass(frozen=True)
class TrisectionParams:
    zeta: float
    delta: float = 0.05
    mode: str = "HT"
    practical_scaling: float = 1.0 / 64
    power_tol: float = 1e-10
    power_max_iter: int = 200

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown mode {self.mode!r}")
        if not 0 < self.delta < 1:
            raise InvalidArgument("delta must lie in (0, 1)")
        if self.practical_scaling <= 0:
            raise InvalidArgument("practical_scaling must be positive")

    @property
    def zeta_eff(self) -> float:
        return effective_zeta(self.zeta)

    @property
    def beta_tris(self) -> float:
        return 4 * math.sqrt(2) * self.zeta_eff

    @property
    def beta_bar_tris(self) -> float:
        return 8 * math.sqrt(2) * self.zeta_eff


@dataclass(frozen=True)
class TrisectionResult:
    L: frozenset = frozenset()
    U: frozenset = frozenset()
    L_bar: frozenset = frozenset()
    U_bar: frozenset = frozenset()

    def union(self, other: "TrisectionResult") -> "TrisectionResult":
        return TrisectionResult(self.L | other.L, self.U | other.U,
                                self.L_bar | other.L_bar, self.U_bar | other.U_bar)


# ---------------------------------------------------------------- pivot

def pivot(Z: np.ndarray, w: np.ndarray, gamma: int, params: TrisectionParams,
          experts: Sequence[int] | None = None) -> TrisectionResult:
    """Compare every expert's projection psi = <Z_i, w/|w|> with the gamma-th smallest one."""
    Z = np.asarray(Z, dtype=float)
    w = np.asarray(w, dtype=float)
    m = Z.shape[0]
    experts = np.arange(m) if experts is None else np.asarray(experts)
    if w.ndim != 1 or w.size != Z.shape[1] or np.any(w < 0) or not np.any(w > 0):
        raise InvalidArgument("weights must be nonnegative and not all zero")
    if not 1 <= gamma <= m:
        raise InvalidArgument("gamma outside [1, |P|]")
    norm = np.linalg.norm(w)
    psi = Z @ (w / norm)
    order = np.lexsort((experts, psi))
    ref = psi[order[gamma - 1]]
    root = math.sqrt(math.log(2 * m / params.delta))
    thr = params.beta_tris * root
    thr_bar = params.beta_bar_tris * root
    if params.mode == "WM_SR":
        spread = w.max() / norm
        thr += 4 * spread
        thr_bar += 8 * spread

    def pick(mask):
        return frozenset(experts[mask].tolist())

    return TrisectionResult(
        L=pick(psi < ref - thr), U=pick(psi > ref + thr),
        L_bar=pick(psi < ref - thr_bar), U_bar=pick(psi > ref + thr_bar))


# ---------------------------------------------------------------- CUSUM statistics

def cusum_all(ybar: np.ndarray, width: int, shifted: bool = False) -> np.ndarray:
    """Forward-minus-backward window means at every position of ybar.

    The shifted variant moves the backward window one step further left.
    """
    d = ybar.shape[-1]
    k = np.arange(d, dtype=float)
    width = float(width)
    s = 1 if shifted else 0
    cs = prefix_table(ybar)
    here = prefix_lookup(cs, k)
    fwd = prefix_lookup(cs, k + width) - here
    bwd = (here if s == 0 else prefix_lookup(cs, k - s)) - prefix_lookup(cs, k - width - s)
    return (fwd - bwd) / width


def cusum(ybar: np.ndarray, k: int, width: int) -> float:
    """Single-position CUSUM (k is 0-indexed, may lie outside [0, d))."""
    if width < 1:
        raise InvalidArgument("width must be at least 1")
    w = float(width)
    fwd = padded_prefix(ybar, k + w) - padded_prefix(ybar, k)
    bwd = padded_prefix(ybar, k) - padded_prefix(ybar, k - w)
    return float(fwd - bwd) / w


def width_all(y_up: np.ndarray, y_down: np.ndarray, r: int, shifted: bool = False) -> np.ndarray:
    """Mean gap between the upper and lower neighbourhoods over [k-r, k+r)."""
    d = y_up.shape[-1]
    k = np.arange(d, dtype=float)
    r = float(r)
    s = 1 if shifted else 0
    cu, cd = prefix_table(y_up), prefix_table(y_down)
    up = prefix_lookup(cu, k + r) - prefix_lookup(cu, k - r)
    down = prefix_lookup(cd, k + r - s) - prefix_lookup(cd, k - r - s)
    return (up - down) / (2 * r)


def cp_window(n_bar: int, h: float, r: int, d: int, params: TrisectionParams,
              scaling: float | None = None) -> int:
    scaling = params.practical_scaling if scaling is None else scaling
    z = params.zeta_eff
    r0 = 32 * z * z * math.log(2 * d / params.delta) * scaling / (n_bar * h * h)
    return 8 * max(math.ceil(r0), r)


def dimension_reduction_cp(Y: np.ndarray, P_bar, h: float, r: int, params: TrisectionParams,
                           scaling: float | None = None, cache: dict | None = None) -> np.ndarray:
    P_bar = np.asarray(P_bar, dtype=int)
    if P_bar.size == 0:
        raise InvalidArgument("empty expert set")
    d = Y.shape[1]
    rt = cp_window(P_bar.size, h, r, d, params, scaling)
    cache = {} if cache is None else cache
    if ("cp", rt) not in cache:
        if "ybar" not in cache:
            cache["ybar"] = Y[P_bar].mean(axis=0)
        cache[("cp", rt)] = cusum_all(cache["ybar"], rt)
    return encode_set(cache[("cp", rt)] >= h / 4, r, d)


def population_cp_sets(m_bar: np.ndarray, h: float, r: int, r_tilde: int) -> tuple[np.ndarray, np.ndarray]:
    """Inner (scale 8r, h/2) and outer (scale r_tilde, h/8) block sets computed from the mean expert."""
    d = m_bar.size
    inner = encode_set(cusum_all(m_bar, 8 * r) >= h / 2, r, d)
    outer = encode_set(cusum_all(m_bar, r_tilde) >= h / 8, r, d)
    return inner, outer


# ---------------------------------------------------------------- neighbourhoods

@dataclass
class NeighborhoodContext:
    """Leaves below (nearest first) and above (nearest first) the current one.

    Past the real leaves the sequence continues with synthetic single experts:
    constant-0 rows below and constant-1 rows above.
    """
    below: list = field(default_factory=list)
    above: list = field(default_factory=list)

    def _gather(self, groups, budget: float):
        real: list[int] = []
        for g in groups:
            real.extend(int(x) for x in g)
            if len(real) >= budget and real:
                return real, 0
        # real leaves exhausted: top up with synthetic single experts
        return real, max(1, math.ceil(budget - len(real)))

    def mean_rows(self, Y: np.ndarray, budget: float, cache: dict | None = None):
        """Mean rows of the upper and lower neighbourhoods and of their union."""
        up_real, up_syn = self._gather(self.above, budget)
        dn_real, dn_syn = self._gather(self.below, budget)
        if up_real or dn_real:
            key = ("hood", len(up_real), up_syn, len(dn_real), dn_syn)
        else:
            # all synthetic: the means are constant rows whatever the counts
            key = ("hood", 0, 0, up_syn / (up_syn + dn_syn))
        if cache is not None and key in cache:
            return cache[key]
        d = Y.shape[1]
        up_sum = Y[up_real].sum(axis=0) + up_syn
        dn_sum = Y[dn_real].sum(axis=0) if dn_real else np.zeros(d)
        n_up = len(up_real) + up_syn
        n_dn = len(dn_real) + dn_syn
        out = (key, up_sum / n_up, dn_sum / n_dn, (up_sum + dn_sum) / (n_up + n_dn))
        if cache is not None:
            cache[key] = out
        return out


def dyadic_ceil(x: float) -> float:
    return 2.0 ** math.ceil(math.log2(x))


def dimension_reduction_wm(Y: np.ndarray, ctx: NeighborhoodContext, P_bar, h: float, r: int,
                           params: TrisectionParams, grids: DyadicGrids,
                           scaling: float | None = None, cache: dict | None = None) -> np.ndarray:
    scaling = params.practical_scaling if scaling is None else scaling
    P_bar = np.asarray(P_bar, dtype=int)
    d = Y.shape[1]
    z2 = params.zeta_eff ** 2
    logf = math.log(4 * d * len(grids.scales) / params.delta) * scaling
    r0 = 2 ** 9 * logf * z2 / (P_bar.size * h * h)
    rt = 4 * max(dyadic_ceil(r0), r)
    shifted = params.mode == "WM_SR"
    cache = {} if cache is None else cache
    hits = None

    def memo(key, fn):
        if key not in cache:
            cache[key] = fn()
        return cache[key]

    for rcp in grids.scales:
        if rcp < 4 * r or rcp > rt:
            continue
        key, y_up, y_dn, _ = ctx.mean_rows(Y, 2 ** 11 * logf * z2 / (rcp * h * h), cache)
        width = memo(("width", key, rcp), lambda: width_all(y_up, y_dn, rcp, shifted))
        if 2 * rcp <= rt:
            vkey, _, _, y_v = ctx.mean_rows(Y, 2 ** 11 * logf * z2 / (2 * rcp * h * h), cache)
        else:
            vkey = "P"
            y_v = memo("ybar", lambda: Y[P_bar].mean(axis=0))
        c_stat = memo(("cusum", vkey, rcp), lambda: cusum_all(y_v, 2 * rcp, shifted))
        hit = (width >= h / 16) & (c_stat >= h / 16)
        hits = hit if hits is None else hits | hit
    if hits is None:
        return np.empty(0, dtype=int)
    return encode_set(hits, r, d)


# ---------------------------------------------------------------- spectral step

def pca_direction(Z1: np.ndarray, Z2: np.ndarray, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Leading eigenvector of C C^T - 1/2 D D^T with C = Z1 - mean, D = C - (Z2 - mean).

    Power iteration on the Gershgorin-shifted (hence PSD) matrix, run by
    repeated squaring: after k squarings the iterate has seen 2^k products,
    so small eigengaps cost log rather than linear many steps.  ``max_iter``
    caps the number of squarings.
    """
    Z1 = np.asarray(Z1, dtype=float)
    Z2 = np.asarray(Z2, dtype=float)
    if Z1.shape != Z2.shape:
        raise InvalidArgument("Z1 and Z2 must have the same shape")
    m = Z1.shape[0]
    if m == 1:
        return np.ones(1)
    C = Z1 - Z1.mean(axis=0)
    D = C - (Z2 - Z2.mean(axis=0))
    A = C @ C.T - 0.5 * (D @ D.T)
    A = 0.5 * (A + A.T)
    shift = np.abs(A).sum(axis=1).max()
    if shift == 0:
        return np.ones(m) / math.sqrt(m)
    B = (A + shift * np.eye(m)) / (2 * shift)
    P = B.copy()
    v = None
    for _ in range(max_iter):
        P = P @ P
        P /= np.abs(P).max()
        # P tends to a multiple of v v^T; its heaviest column points along v
        col = P[:, np.argmax(np.einsum("ij,ij->j", P, P))]
        new = col / np.linalg.norm(col)
        if v is not None and min(np.linalg.norm(new - v), np.linalg.norm(new + v)) <= tol:
            v = new
            break
        v = new
    else:
        raise NumericNonconvergence("power iteration hit its iteration cap")
    # two plain steps polish the direction against the rounding of the squarings
    for _ in range(2):
        v = B @ v
        v /= np.linalg.norm(v)
    j = np.argmax(np.abs(v))
    return v if v[j] >= 0 else -v


def threshold_weights(v: np.ndarray, Z: np.ndarray, params: TrisectionParams) -> np.ndarray:
    q = Z.shape[1]
    zhat = v @ (Z - Z.mean(axis=0))
    thr = 2 * params.zeta_eff * math.sqrt(2 * math.log(2 * q / params.delta))
    if params.zeta <= 0:
        thr = 0.0
    a = np.abs(zhat)
    return np.where(a >= thr, a, 0.0)


# ---------------------------------------------------------------- double trisection

@dataclass
class RoundLog:
    rounds: int = 0
    distinct: int = 0
    skipped_empty: int = 0
    skipped_zero_weight: int = 0
    fallbacks: int = 0


def double_trisection(samples: Sequence[np.ndarray], ctx: NeighborhoodContext | None, P_bar,
                      gamma: int, params: TrisectionParams, log: RoundLog | None = None) -> TrisectionResult:
    if len(samples) != 6:
        raise InvalidArgument("double trisection consumes exactly 6 samples")
    P_bar = np.sort(np.asarray(list(P_bar), dtype=int))
    out = TrisectionResult()
    if P_bar.size <= 1:
        return out
    if not 1 <= gamma <= P_bar.size:
        raise InvalidArgument("gamma outside [1, |P|]")
    log = log if log is not None else RoundLog()
    n, d = samples[0].shape
    grids = build_grids(n, d, params.zeta_eff)
    ctx = ctx if ctx is not None else NeighborhoodContext()
    seen = set()
    cache: dict = {}
    for r in grids.scales:
        for h in grids.heights:
            log.rounds += 1
            if params.mode == "HT":
                Q = dimension_reduction_cp(samples[0], P_bar, h, r, params, cache=cache)
            else:
                Q = dimension_reduction_wm(samples[0], ctx, P_bar, h, r, params, grids, cache=cache)
            if Q.size == 0:
                log.skipped_empty += 1
                continue
            # everything below depends on (r, Q) only, so repeated rounds add nothing
            key = (r, Q.tobytes())
            if key in seen:
                continue
            seen.add(key)
            log.distinct += 1
            out = out.union(_local_round(samples, P_bar, Q, r, gamma, params, log))
    return out


def _local_round(samples, P_bar, Q, r, gamma, params, log) -> TrisectionResult:
    first = pivot(encode_matrix(samples[1], P_bar, Q, r), np.ones(Q.size), gamma, params, P_bar)
    excluded = first.L_bar | first.U_bar
    P_tilde = np.array([i for i in P_bar if i not in excluded], dtype=int)
    if P_tilde.size == 0:
        return first
    Z3 = encode_matrix(samples[2], P_tilde, Q, r)
    Z4 = encode_matrix(samples[3], P_tilde, Q, r)
    try:
        v = pca_direction(Z3, Z4, params.power_tol, params.power_max_iter)
    except NumericNonconvergence:
        log.fallbacks += 1
        warnings.warn("power iteration did not converge; using the all-ones direction")
        v = np.ones(P_tilde.size) / math.sqrt(P_tilde.size)
    w = threshold_weights(v, encode_matrix(samples[4], P_tilde, Q, r), params)
    if not np.any(w > 0):
        log.skipped_zero_weight += 1
        return first
    second = pivot(encode_matrix(samples[5], P_bar, Q, r), w, gamma, params, P_bar)
    return first.union(second)
