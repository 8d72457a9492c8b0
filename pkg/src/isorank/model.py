"""Problem instances, noise models and synthetic generators.

Conventions used across the package:

* experts are rows, questions are columns, both 0-indexed;
* a permutation ``pi`` maps an expert to its rank (0 = lowest);
  ``M[inverse(pi)]`` is the matrix with rows listed in rank order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GenerationFailed, InvalidArgument

NOISE_KINDS = ("gaussian", "bernoulli", "none")


def inverse(pi: np.ndarray) -> np.ndarray:
    """Inverse permutation (rank -> expert)."""
    pi = np.asarray(pi)
    inv = np.empty_like(pi)
    inv[pi] = np.arange(pi.size)
    return inv


def is_permutation(pi, n: int) -> bool:
    pi = np.asarray(pi)
    return pi.shape == (n,) and np.array_equal(np.sort(pi), np.arange(n))


@dataclass(frozen=True)
class ProblemInstance:
    M: np.ndarray
    pi_star: np.ndarray
    zeta: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        pi = np.asarray(self.pi_star, dtype=int)
        if M.ndim != 2:
            raise InvalidArgument("M must be a matrix")
        if not is_permutation(pi, M.shape[0]):
            raise InvalidArgument("pi_star is not a permutation of the rows")
        if self.zeta < 0:
            raise InvalidArgument("zeta must be nonnegative")
        M.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "pi_star", pi)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def d(self) -> int:
        return self.M.shape[1]

    def sorted_matrix(self) -> np.ndarray:
        return self.M[inverse(self.pi_star)]

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "d": self.d,
            "zeta": self.zeta,
            "pi_star": self.pi_star.tolist(),
            "M": self.M.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ProblemInstance":
        doc = json.loads(text)
        M = np.asarray(doc["M"], dtype=float).reshape(doc["n"], doc["d"])
        return cls(M=M, pi_star=np.asarray(doc["pi_star"]), zeta=float(doc["zeta"]))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    zeta: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidArgument(f"unknown noise kind {self.kind!r}")

    @property
    def effective_zeta(self) -> float:
        # Bernoulli noise is 1/2-sub-Gaussian, handled with zeta pinned to 1
        if self.kind == "bernoulli":
            return 1.0
        if self.kind == "none":
            return 0.0
        return float(self.zeta)


@dataclass(frozen=True)
class StaircaseConfig:
    n: int
    d: int
    n_tilde: int
    d_tilde: int
    q: int
    upsilon: float
    lambda0: float
    zeta: float = 1.0

    def bump(self) -> float:
        return self.upsilon * self.zeta / np.sqrt(self.lambda0)

    def check(self) -> None:
        if self.n % self.n_tilde or self.d % self.d_tilde:
            raise InvalidArgument("n_tilde must divide n and d_tilde must divide d")
        for v in (self.n_tilde, self.d_tilde):
            if v & (v - 1):
                raise InvalidArgument("n_tilde and d_tilde must be powers of two")
        if not 0 <= self.q <= self.d_tilde:
            raise InvalidArgument("q must lie in [0, d_tilde]")
        cap = min(self.n_tilde / (4 * self.n), 1 / (4 * self.d_tilde))
        if 2 * self.bump() > cap + 1e-15:
            raise InvalidArgument("bump amplitude too large to stay bi-isotonic")


def validate_bi_isotonic(M, pi, atol: float = 0.0) -> bool:
    M = np.asarray(M, dtype=float)
    pi = np.asarray(pi)
    if M.ndim != 2 or pi.shape != (M.shape[0],):
        raise InvalidArgument("permutation length does not match the row count")
    if not is_permutation(pi, M.shape[0]):
        raise InvalidArgument("pi is not a permutation")
    B = M[inverse(pi)]
    if B.size and (B.min() < -atol or B.max() > 1 + atol):
        return False
    return bool(np.all(np.diff(B, axis=0) >= -atol) and np.all(np.diff(B, axis=1) >= -atol))


def padded_entry(M, i: int, k: int) -> float:
    """Entry of the infinite extension: 0 below/left, 1 above/right (0-indexed)."""
    n, d = np.shape(M)
    if i < 0 or k < 0:
        return 0.0
    if i >= n or k >= d:
        return 1.0
    return float(M[i][k])


def _shuffle_rows(B: np.ndarray, rng: np.random.Generator, zeta: float, **meta) -> ProblemInstance:
    pi = rng.permutation(B.shape[0])
    # expert i has rank pi[i], so its row is B[pi[i]]
    return ProblemInstance(M=B[pi], pi_star=pi, zeta=zeta, meta=meta)


def gen_random_instance(n: int, d: int, rng: np.random.Generator, zeta: float = 1.0,
                        levels: int | None = None) -> ProblemInstance:
    """Random bi-isotonic matrix from nonnegative increments, rows shuffled.

    With ``levels`` the values are rounded onto a grid, which produces ties.
    """
    inc = rng.exponential(size=(n, d)) * (rng.random((n, d)) < 0.5)
    B = np.cumsum(np.cumsum(inc, axis=0), axis=1)
    top = B.max()
    B = B / top if top > 0 else B
    if levels:
        B = np.floor(B * levels) / levels
    return _shuffle_rows(B, rng, zeta, generator="random")


def gen_separated_instance(n: int, d: int, rng: np.random.Generator, zeta: float = 0.0,
                           gap: float = 0.5) -> ProblemInstance:
    """Rows strictly increasing in every column; consecutive rows differ by at least gap/n per entry."""
    col = np.cumsum(rng.uniform(0.1, 1.0, size=d))
    col = (1 - gap) * col / col[-1]
    row = gap * np.arange(1, n + 1) / n
    B = np.clip(row[:, None] + col[None, :] - col[0] * 0.5, 0.0, 1.0)
    return _shuffle_rows(B, rng, zeta, generator="separated")


def gen_two_block_instance(n: int, d: int, r: int, h: float, layout: str = "simple_cp",
                           rng: np.random.Generator | None = None, zeta: float = 1.0,
                           bumped: Sequence[int] | None = None, q: int | None = None,
                           block: int | None = None) -> ProblemInstance:
    """Two expert types (n/2 each).

    simple_cp: the types differ by h on a single r-block.
    spectral_toy: the lower type climbs h per block; the upper type adds h on
    the ``bumped`` blocks (or q random ones).
    """
    if n % 2 or n < 2:
        raise InvalidArgument("n must be even")
    if r < 1 or d % r:
        raise InvalidArgument("r must divide d")
    if not 0 <= h <= 1:
        raise InvalidArgument("h must lie in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng()
    nb = d // r
    if layout == "simple_cp":
        b = nb // 2 if block is None else block
        lower = np.full(d, 0.5 * (1 - h))
        lower[(b + 1) * r:] += h
        upper = lower.copy()
        upper[b * r:(b + 1) * r] += h
        if upper.max() > 1 or lower.min() < 0:
            raise InvalidArgument("h too large")
    elif layout == "spectral_toy":
        if nb * h > 1 + 1e-12:
            raise InvalidArgument("h too large for a staircase of d/r steps in [0, 1]")
        if bumped is None:
            qq = max(1, nb // 4) if q is None else q
            bumped = rng.choice(nb, size=qq, replace=False)
        mask = np.zeros(nb)
        mask[np.asarray(bumped, dtype=int)] = 1.0
        lower_b = h * np.arange(nb)
        upper_b = lower_b + h * mask
        lower = np.repeat(lower_b, r)
        upper = np.repeat(upper_b, r)
    else:
        raise InvalidArgument(f"unknown layout {layout!r}")
    B = np.vstack([np.tile(lower, (n // 2, 1)), np.tile(upper, (n // 2, 1))])
    return _shuffle_rows(B, rng, zeta, generator=layout, r=r, h=h)


def gen_spurious_instance(n: int, d: int, rng: np.random.Generator, zeta: float = 1.0,
                          groups: int = 4, r: int = 4, h: float = 0.1, steps: int = 8,
                          signal_blocks: int = 2) -> ProblemInstance:
    """Groups of experts sharing a common staircase across columns.

    Every row climbs the same ``steps`` jumps (placed on r-block boundaries),
    so the mean expert varies there while all groups stay level with each
    other.  Group g sits g*h above group 0 on ``signal_blocks`` blocks, each
    lying just left of a jump; the jump absorbs the bump so rows stay monotone.
    """
    if n % groups or d % r:
        raise InvalidArgument("groups must divide n and r must divide d")
    nb = d // r
    if not 1 <= signal_blocks <= steps < nb:
        raise InvalidArgument("need 1 <= signal_blocks <= steps < d/r")
    sh = (1 - (groups - 1) * h) / steps
    if sh < (groups - 1) * h:
        raise InvalidArgument("h too large for the requested staircase")
    cuts = np.sort(rng.choice(np.arange(1, nb), size=steps, replace=False))
    common = np.zeros(d)
    for c in cuts:
        common[c * r:] += sh
    signal = np.zeros(d)
    for c in rng.choice(cuts, size=signal_blocks, replace=False):
        signal[(c - 1) * r:c * r] = 1.0
    size = n // groups
    B = np.vstack([np.tile(common + g * h * signal, (size, 1)) for g in range(groups)])
    return _shuffle_rows(np.clip(B, 0, 1), rng, zeta, generator="spurious", r=r, h=h)


def _packing(n_tilde: int, rng: np.random.Generator) -> list[frozenset]:
    """Greedy random packing of n_tilde/2-subsets with symmetric difference >= n_tilde/4."""
    half = n_tilde // 2
    kept: list[frozenset] = []
    tries = 0
    cap = 10 * max(n_tilde, 1)
    while tries < cap:
        tries += 1
        cand = frozenset(rng.choice(n_tilde, size=half, replace=False).tolist())
        if all(len(cand ^ s) >= n_tilde / 4 for s in kept):
            kept.append(cand)
    if not kept:
        raise GenerationFailed(f"packing of size-{half} subsets failed after {cap} draws")
    return kept


def gen_staircase_instance(cfg: StaircaseConfig, rng: np.random.Generator) -> ProblemInstance:
    cfg.check()
    n, d, nt, dt = cfg.n, cfg.d, cfg.n_tilde, cfg.d_tilde
    groups = n // nt
    width = d // dt
    iota = np.arange(1, groups + 1)
    kappa = np.arange(1, dt + 1)
    C = iota[:, None] * nt / (4 * n) + kappa[None, :] / (4 * dt)
    base = np.kron(C, np.ones((nt, width)))
    amp = cfg.bump()
    Bfull = np.zeros((n, d))
    bumped_rows = np.zeros(n, dtype=bool)
    if amp > 0 and cfg.q > 0:
        for g in range(groups):
            packing = _packing(nt, rng)
            G = packing[rng.integers(len(packing))]
            Q = rng.choice(dt, size=cfg.q, replace=False)
            cols = np.concatenate([np.arange(b * width, (b + 1) * width) for b in Q])
            rows = g * nt + np.fromiter(G, dtype=int)
            Bfull[np.ix_(rows, cols)] = 1.0
            bumped_rows[rows] = True
    M = base + amp * Bfull
    # oracle: by group, unbumped experts before bumped ones
    order = np.lexsort((np.arange(n), bumped_rows, np.repeat(np.arange(groups), nt)))
    pi = inverse(order)
    return ProblemInstance(M=M, pi_star=pi, zeta=cfg.zeta, meta={"generator": "staircase"})


def sample_full_observations(inst: ProblemInstance, count: int, noise: NoiseSpec,
                             rng: np.random.Generator) -> list[np.ndarray]:
    if count < 1:
        raise InvalidArgument("count must be at least 1")
    M = inst.M
    if noise.kind == "none":
        return [M.copy() for _ in range(count)]
    if noise.kind == "bernoulli":
        if M.min() < 0 or M.max() > 1:
            raise InvalidArgument("bernoulli noise needs entries in [0, 1]")
        return [(rng.random(M.shape) < M).astype(float) for _ in range(count)]
    return [M + noise.zeta * rng.standard_normal(M.shape) for _ in range(count)]
