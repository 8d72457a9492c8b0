"""Losses, lemma checks and the Monte-Carlo experiment runner."""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .aggregation import build_grids, encode_matrix
from .errors import InvalidArgument
from .estimation import borda_rank, estimate_matrix, pairwise_estimator, project_bi_isotonic
from .model import (NoiseSpec, ProblemInstance, StaircaseConfig, gen_random_instance, gen_separated_instance,
                    gen_spurious_instance, gen_staircase_instance, gen_two_block_instance, inverse,
                    is_permutation, sample_full_observations)
from .partial import estimate_wmp, sample_poisson_observations
from .tree import BlockSortRecord, SampleBudget, TreeSortResult, tree_sort
from .trisection import (TrisectionParams, TrisectionResult, cp_window, cusum_all, dimension_reduction_cp,
                         population_cp_sets)

CSV_COLUMNS = ["estimator", "lambda", "seed", "perm_loss", "linf_loss", "lerr_loss", "matrix_loss",
               "prop1_ok", "sandwich_ok", "lossgen_ok", "runtime_ms"]
TREE_ESTIMATORS = ("HT", "WM", "WM_SR")
ESTIMATORS = TREE_ESTIMATORS + ("borda", "WMP", "PC", "random")


# ---------------------------------------------------------------- losses

def _check_perms(M, *perms):
    n = np.shape(M)[0]
    for p in perms:
        if not is_permutation(p, n):
            raise InvalidArgument("not a bijection on the experts")


def perm_loss(M, pi_hat, pi_star) -> float:
    _check_perms(M, pi_hat, pi_star)
    M = np.asarray(M, dtype=float)
    return float(np.sum((M[inverse(pi_hat)] - M[inverse(pi_star)]) ** 2))


def linf_loss(M, pi_hat, pi_star) -> float:
    _check_perms(M, pi_hat, pi_star)
    M = np.asarray(M, dtype=float)
    diff = M[inverse(pi_hat)] - M[inverse(pi_star)]
    return float(np.max(np.sum(diff ** 2, axis=1))) if diff.size else 0.0


def lerr_loss(M, pi_hat, pi_star) -> float:
    _check_perms(M, pi_hat, pi_star)
    M = np.asarray(M, dtype=float)
    ph, ps = np.asarray(pi_hat), np.asarray(pi_star)
    inverted = (ph[:, None] < ph[None, :]) & (ps[:, None] > ps[None, :])
    if not inverted.any():
        return 0.0
    sq = np.sum(M ** 2, axis=1)
    dist = sq[:, None] + sq[None, :] - 2 * M @ M.T
    return float(max(dist[inverted].max(), 0.0))


def random_guess_level(M) -> float:
    """Expected perm_loss of a uniformly random ranking: 2 * ||M - mean row||_F^2."""
    M = np.asarray(M, dtype=float)
    return float(2 * np.sum((M - M.mean(axis=0)) ** 2))


# ---------------------------------------------------------------- structural checks

def tie_ranks(inst: ProblemInstance) -> np.ndarray:
    """Dense rank of each expert's row; equal rows share a rank."""
    B = inst.sorted_matrix()
    new = np.r_[True, np.any(B[1:] != B[:-1], axis=1)] if B.shape[0] else np.zeros(0, bool)
    level = np.cumsum(new) - 1
    return level[inst.pi_star]


def check_property1(rec: BlockSortRecord, rho: np.ndarray) -> bool:
    G, O, P, I = rec.G, rec.O, rec.P, rec.I
    Ob, Pb, Ib = rec.O_bar, rec.P_bar, rec.I_bar
    if (O | P | I) != G or O & P or O & I or P & I:
        return False
    if not (Ob <= O and Ib <= I and P <= Pb):
        return False
    for i in Ob:
        if any(rho[j] < rho[i] and j not in O for j in G):
            return False
    for i in Ib:
        if any(rho[j] > rho[i] and j not in I for j in G):
            return False
    if O and I and max(rho[i] for i in O) > min(rho[j] for j in I):
        return False
    return 2 * len(O) <= len(G) and 2 * len(I) <= len(G)


def check_property2(res: TrisectionResult, P_bar: Iterable[int], gamma: int, rho: np.ndarray) -> bool:
    P_bar = list(P_bar)
    if not (res.L_bar <= res.L and res.U_bar <= res.U):
        return False
    r = np.array([rho[i] for i in P_bar])
    for i in res.L:
        if np.sum(r < rho[i]) + 1 >= gamma:
            return False
    for i in res.U:
        if np.sum(r <= rho[i]) <= gamma:
            return False
    for i in res.L_bar:
        if any(rho[j] < rho[i] and j not in res.L for j in P_bar):
            return False
    for i in res.U_bar:
        if any(rho[j] > rho[i] and j not in res.U for j in P_bar):
            return False
    return True


def loss_general_bound(inst: ProblemInstance, result: TreeSortResult) -> tuple[float, float]:
    """(realized loss, 10 t_inf * sum of within-group energies of the conservative P-sets)."""
    M = inst.M
    t_inf = result.budget.t_inf if result.budget else 0
    total = 0.0
    for rec in result.records:
        if rec.depth < t_inf and len(rec.P_bar) > 1:
            rows = M[sorted(rec.P_bar)]
            total += float(np.sum((rows - rows.mean(axis=0)) ** 2))
    return perm_loss(M, result.pi_hat, inst.pi_star), 10 * t_inf * total


# ---------------------------------------------------------------- dimension-reduction lemmas

def _thresholded_energy(M, P_bar, Q, r, h) -> float:
    if Q.size == 0:
        return 0.0
    Theta = encode_matrix(M, P_bar, Q, r)
    dev = np.abs(Theta - Theta.mean(axis=0))
    eta = math.sqrt(r) * h
    return eta * eta * float(np.sum(dev >= eta))


def energy_capture(M, P_bar, zeta: float) -> tuple[bool, float, float]:
    """Group energy against 16 zeta^2 + 96 |R||H| * best thresholded block energy."""
    M = np.asarray(M, dtype=float)
    P_bar = np.asarray(P_bar, dtype=int)
    n, d = M.shape
    grids = build_grids(n, d, zeta)
    rows = M[P_bar]
    lhs = float(np.sum((rows - rows.mean(axis=0)) ** 2))
    m_bar = rows.mean(axis=0)
    best = 0.0
    for r in grids.scales:
        inner_stat = cusum_all(m_bar, 8 * r)
        for h in grids.heights:
            Q = np.unique(np.flatnonzero(inner_stat >= h / 2) // r) * r
            best = max(best, _thresholded_energy(M, P_bar, Q, r, h))
    rhs = 16 * zeta * zeta + 96 * len(grids.scales) * len(grids.heights) * best
    return lhs <= rhs, lhs, rhs


def block_count_bound(M, P_bar, zeta: float, delta: float) -> tuple[bool, int]:
    """Every (r, h): outer population block count <= 64 r_tilde / (r h).  Returns (ok, violations)."""
    M = np.asarray(M, dtype=float)
    P_bar = np.asarray(P_bar, dtype=int)
    n, d = M.shape
    params = TrisectionParams(zeta=zeta, delta=delta, practical_scaling=1.0)
    grids = build_grids(n, d, zeta)
    m_bar = M[P_bar].mean(axis=0)
    bad = 0
    for r in grids.scales:
        for h in grids.heights:
            rt = cp_window(P_bar.size, h, r, d, params, 1.0)
            _, outer = population_cp_sets(m_bar, h, r, rt)
            if outer.size > 64 * rt / (r * h):
                bad += 1
    return bad == 0, bad


def sandwich(M, Y, P_bar, zeta: float, delta: float) -> tuple[bool, float]:
    """Inner population set <= estimated set <= outer population set, for every (r, h).

    Returns (all pairs ok, fraction of pairs ok); thresholds at full strength (scaling 1).
    """
    M = np.asarray(M, dtype=float)
    P_bar = np.asarray(P_bar, dtype=int)
    n, d = M.shape
    params = TrisectionParams(zeta=zeta, delta=delta, practical_scaling=1.0)
    grids = build_grids(n, d, params.zeta_eff)
    m_bar = M[P_bar].mean(axis=0)
    ok = total = 0
    for r in grids.scales:
        for h in grids.heights:
            rt = cp_window(P_bar.size, h, r, d, params, 1.0)
            inner, outer = population_cp_sets(m_bar, h, r, rt)
            est = dimension_reduction_cp(Y, P_bar, h, r, params, scaling=1.0)
            total += 1
            if set(inner.tolist()) <= set(est.tolist()) <= set(outer.tolist()):
                ok += 1
    return ok == total, ok / max(total, 1)


def verify_lemmas(inst: ProblemInstance, result: TreeSortResult | None = None,
                  delta: float = 0.05) -> dict:
    """Pass/fail flags for energy capture, block count and (given a run) the loss bound."""
    P = np.arange(inst.n)
    zeta = inst.zeta if inst.zeta > 0 else 1.0
    flags = {
        "energy_capture": "pass" if energy_capture(inst.M, P, zeta)[0] else "fail",
        "block_count": "pass" if block_count_bound(inst.M, P, zeta, delta)[0] else "fail",
        "loss_general": "n/a",
    }
    if result is not None:
        rho = tie_ranks(inst)
        if all(check_property1(rec, rho) for rec in result.records):
            lhs, rhs = loss_general_bound(inst, result)
            flags["loss_general"] = "pass" if lhs <= rhs + 1e-9 else "fail"
    return flags


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    instance: dict
    estimators: list
    noise: str = "gaussian"
    observation: str = "full"
    upsilon: int | None = None
    lambdas: list = field(default_factory=lambda: [1.0])
    seeds: list = field(default_factory=lambda: [0])
    delta: float = 0.05
    mode: str = "practical"
    practical_scaling: float = 1.0 / 64
    tau_inf: int | None = None
    fixed_instance: bool = False
    reconstruct: bool = False
    checks: bool = True
    timing: bool = True
    seed_base: int = 0

    def __post_init__(self):
        if not self.seeds:
            raise InvalidArgument("at least one seed is required")
        if any(lam <= 0 for lam in self.lambdas):
            raise InvalidArgument("all lambdas must be positive")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise InvalidArgument(f"unknown estimator {e!r}")
        if self.observation not in ("full", "poisson"):
            raise InvalidArgument("observation must be 'full' or 'poisson'")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if isinstance(doc.get("seeds"), int):
            doc["seeds"] = list(range(doc["seeds"]))
        return cls(**doc)


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def make_instance(spec: dict, rng: np.random.Generator) -> ProblemInstance:
    spec = dict(spec)
    gen = spec.pop("generator")
    zeta = float(spec.pop("zeta", 1.0))
    if gen == "random":
        return gen_random_instance(spec.pop("n"), spec.pop("d"), rng, zeta, **spec)
    if gen == "separated":
        return gen_separated_instance(spec.pop("n"), spec.pop("d"), rng, zeta, **spec)
    if gen in ("simple_cp", "spectral_toy"):
        return gen_two_block_instance(layout=gen, rng=rng, zeta=zeta, **spec)
    if gen == "spurious":
        return gen_spurious_instance(spec.pop("n"), spec.pop("d"), rng, zeta, **spec)
    if gen == "staircase":
        return gen_staircase_instance(StaircaseConfig(zeta=zeta, **spec), rng)
    raise InvalidArgument(f"unknown generator {gen!r}")


@dataclass
class CellResult:
    estimator: str
    lam: float | None
    seed: int
    perm_loss: float = float("nan")
    linf_loss: float = float("nan")
    lerr_loss: float = float("nan")
    matrix_loss: float = float("nan")
    prop1_ok: str = "n/a"
    sandwich_ok: str = "n/a"
    lossgen_ok: str = "n/a"
    runtime_ms: float = 0.0
    error: str = ""
    lossgen_lhs: float = float("nan")
    lossgen_rhs: float = float("nan")

    def row(self) -> list:
        def f(x):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))
        return [self.estimator, f(self.lam), self.seed, f(self.perm_loss), f(self.linf_loss),
                f(self.lerr_loss), f(self.matrix_loss), self.prop1_ok, self.sandwich_ok,
                self.lossgen_ok, f(round(self.runtime_ms, 3))]


@dataclass
class ExperimentReport:
    cells: list

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(CSV_COLUMNS)
            for c in self.cells:
                out.writerow(c.row())

    def summary(self, baseline: str | None = "borda") -> list[dict]:
        groups: dict = {}
        for c in self.cells:
            groups.setdefault((c.estimator, c.lam), []).append(c.perm_loss)
        means = {k: mean_ci(v)[0] for k, v in groups.items()}
        out = []
        for (est, lam), vals in groups.items():
            mean, lo, hi = mean_ci(vals)
            base = means.get((baseline, lam)) if baseline else None
            ratio = mean / base if base else float("nan")
            out.append({"estimator": est, "lambda": lam, "mean_perm_loss": mean, "ci_low": lo,
                        "ci_high": hi, "count": len(vals), f"ratio_to_{baseline}": ratio})
        return out

    def write_summary(self, path, baseline: str | None = "borda") -> None:
        rows = self.summary(baseline)
        if not rows:
            return
        with open(path, "w", newline="") as fh:
            out = csv.DictWriter(fh, fieldnames=list(rows[0]))
            out.writeheader()
            out.writerows(rows)


def mean_ci(values, z: float = 1.96) -> tuple[float, float, float]:
    """Mean with a normal-approximation confidence interval."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), float("nan")
    m = float(v.mean())
    if v.size < 2:
        return m, m, m
    se = float(v.std(ddof=1) / math.sqrt(v.size))
    return m, m - z * se, m + z * se


def _fill_losses(cell: CellResult, inst: ProblemInstance, pi_hat) -> None:
    cell.perm_loss = perm_loss(inst.M, pi_hat, inst.pi_star)
    cell.linf_loss = linf_loss(inst.M, pi_hat, inst.pi_star)
    cell.lerr_loss = lerr_loss(inst.M, pi_hat, inst.pi_star)


def _tree_flags(cell: CellResult, inst: ProblemInstance, res: TreeSortResult) -> None:
    rho = tie_ranks(inst)
    ok = all(check_property1(rec, rho) for rec in res.records)
    cell.prop1_ok = "pass" if ok else "fail"
    lhs, rhs = loss_general_bound(inst, res)
    cell.lossgen_lhs, cell.lossgen_rhs = lhs, rhs
    if ok:
        cell.lossgen_ok = "pass" if lhs <= rhs + 1e-9 else "fail"


def run_seed(cfg: ExperimentConfig, seed: int) -> list[CellResult]:
    inst_seed = cfg.seed_base if cfg.fixed_instance else seed
    inst = make_instance(cfg.instance, _rng(cfg.seed_base, inst_seed, 0))
    noise = NoiseSpec(cfg.noise, inst.zeta)
    zeta = noise.effective_zeta
    cells: list[CellResult] = []
    if cfg.observation == "full":
        budget = (SampleBudget.practical(inst.n, inst.d, cfg.tau_inf) if cfg.mode == "practical"
                  else SampleBudget.paper(inst.n, inst.d, cfg.delta, zeta))
        count = cfg.upsilon or budget.upsilon_star
        pool = sample_full_observations(inst, count, noise, _rng(cfg.seed_base, seed, 1))
        mean_obs = np.mean(pool, axis=0)
        for k, est in enumerate(cfg.estimators):
            cell = CellResult(est, None, seed)
            t0 = time.perf_counter()
            try:
                rng = _rng(cfg.seed_base, seed, 10 + k)
                if est in TREE_ESTIMATORS:
                    params = TrisectionParams(zeta=zeta, delta=cfg.delta, mode=est,
                                              practical_scaling=cfg.practical_scaling)
                    res = tree_sort(pool, params, budget, rng)
                    pi = res.pi_hat
                    if cfg.checks:
                        _tree_flags(cell, inst, res)
                elif est == "borda":
                    pi = borda_rank(mean_obs)
                elif est == "random":
                    pi = rng.permutation(inst.n)
                else:
                    raise InvalidArgument(f"{est} needs poisson observations")
                cell.runtime_ms = (time.perf_counter() - t0) * 1e3
                _fill_losses(cell, inst, pi)
                if cfg.reconstruct:
                    inv = inverse(pi)
                    B = project_bi_isotonic(mean_obs[inv]).B
                    cell.matrix_loss = float(np.sum((B[pi] - inst.M) ** 2))
                if cfg.checks and est == "HT":
                    cell.sandwich_ok = "pass" if sandwich(inst.M, pool[0], np.arange(inst.n), zeta,
                                                          cfg.delta)[0] else "fail"
            except Exception as exc:  # noqa: BLE001 - recorded per cell, the run continues
                cell.error = f"{type(exc).__name__}: {exc}"
            if not cfg.timing:
                cell.runtime_ms = 0.0
            cells.append(cell)
        return cells
    for j, lam in enumerate(cfg.lambdas):
        log = sample_poisson_observations(inst, lam, noise, _rng(cfg.seed_base, seed, 2, j))
        for k, est in enumerate(cfg.estimators):
            cell = CellResult(est, lam, seed)
            t0 = time.perf_counter()
            try:
                rng = _rng(cfg.seed_base, seed, 20 + k, j)
                pi, tree_res = _rank_log(est, log, zeta, cfg, rng)
                cell.runtime_ms = (time.perf_counter() - t0) * 1e3
                _fill_losses(cell, inst, pi)
                if cfg.checks and tree_res is not None:
                    _tree_flags(cell, inst, tree_res)
                if cfg.reconstruct:
                    first, second = log.thin(_rng(cfg.seed_base, seed, 30 + k, j))
                    pi1, _ = _rank_log(est, first, zeta, cfg, rng)
                    Mh = estimate_matrix(second, pi1)
                    cell.matrix_loss = float(np.sum((Mh - inst.M) ** 2))
            except Exception as exc:  # noqa: BLE001
                cell.error = f"{type(exc).__name__}: {exc}"
            if not cfg.timing:
                cell.runtime_ms = 0.0
            cells.append(cell)
    return cells


def _rank_log(est: str, log, zeta: float, cfg: ExperimentConfig, rng):
    if est == "WMP":
        res = estimate_wmp(log, zeta, cfg.delta, cfg.mode, cfg.practical_scaling, cfg.tau_inf, rng)
        return res.pi_hat, res.tree
    if est == "PC":
        pi, _ = pairwise_estimator(log, zeta, cfg.delta, cfg.mode, cfg.practical_scaling, cfg.tau_inf, rng)
        return pi, None
    if est == "borda":
        return borda_rank(log), None
    if est == "random":
        return rng.permutation(log.n), None
    raise InvalidArgument(f"{est} needs full observations")


def worker_count() -> int:
    cap = os.environ.get("ISORANK_THREADS")
    if cap:
        return max(1, int(cap))
    return usable_cpus()


def usable_cpus() -> int:
    # the affinity mask, not the machine size: containers often pin fewer cores
    if hasattr(os, "sched_getaffinity"):
        return max(1, len(os.sched_getaffinity(0)))
    return max(1, os.cpu_count() or 1)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    workers = worker_count() if workers is None else workers
    seeds = list(cfg.seeds)
    if workers <= 1 or len(seeds) == 1:
        parts = [run_seed(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            parts = list(pool.map(run_seed, [cfg] * len(seeds), seeds))
    cells = [c for part in parts for c in part]
    return ExperimentReport(cells)


def plot_report(report: ExperimentReport, path) -> Path:
    """Mean perm_loss per estimator (against lambda when there is a grid)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = report.summary(baseline=None)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ests = sorted({r["estimator"] for r in rows})
    lams = sorted({r["lambda"] for r in rows if r["lambda"] is not None})
    for i, est in enumerate(ests):
        sel = [r for r in rows if r["estimator"] == est]
        if lams:
            sel.sort(key=lambda r: r["lambda"])
            x = [r["lambda"] for r in sel]
        else:
            x = [i] * len(sel)
        y = np.array([r["mean_perm_loss"] for r in sel])
        err = np.array([[r["mean_perm_loss"] - r["ci_low"] for r in sel],
                        [r["ci_high"] - r["mean_perm_loss"] for r in sel]])
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=est)
    if lams:
        ax.set_xscale("log")
        ax.set_xlabel("lambda")
    else:
        ax.set_xticks(range(len(ests)))
        ax.set_xticklabels(ests)
    ax.set_ylabel("mean perm loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
