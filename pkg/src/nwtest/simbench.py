"""Synthetic benchmark models, permutation baselines, and power tables.

Four data-generating models, each indexed by a signal level beta (beta = 0
recovers identical distributions in all of them):

- A: mean shift with polynomially decaying coordinates under an AR(1)
  covariance with correlation 0.5;
- B: variance inflation of the leading coordinates, same AR(1) base;
- C: one sample is a symmetric two-component Gaussian mixture, the other
  replaces the first s coordinates by a correlated Gaussian block with the
  same mean and variance (s = round(5 * beta));
- D: both samples are mixtures with identical coordinate marginals, but
  one carries an AR(0.9) dependence block of size s = round(100 * beta).

AR(1) blocks are sampled by the exact recursion x_j = r x_{j-1} +
sqrt(1 - r^2) z_j rather than a Cholesky factor.

Baselines: permutation-calibrated unbiased squared maximum mean
discrepancy (Gaussian kernel, median-distance bandwidth) and the energy
distance.  The kernel/distance matrices are computed once on the pooled
sample; permutations only re-index them.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .pipeline import TestConfig, derive_seed, multi_split_test

__all__ = [
    "ModelSpec",
    "PowerCell",
    "PowerTable",
    "round_half_away",
    "ar1_gaussian_sample",
    "gen_model",
    "mmd_permutation_test",
    "energy_permutation_test",
    "power_study",
]


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def ar1_gaussian_sample(d: int, r: float, n: int, seed=0) -> np.ndarray:
    """n draws of a zero-mean Gaussian with covariance r^|i-j| (exact).

    ``seed`` may be an integer or an existing ``numpy.random.Generator``.
    """
    if not abs(r) < 1.0:
        raise ValueError("|r| must be below 1")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    z = rng.standard_normal((n, d))
    if d == 1 or r == 0.0:
        return z
    x = np.empty_like(z)
    x[:, 0] = z[:, 0]
    scale = math.sqrt(1.0 - r * r)
    for j in range(1, d):
        x[:, j] = r * x[:, j - 1] + scale * z[:, j]
    return x


@dataclass(frozen=True)
class ModelSpec:
    model: str          # A | B | C | D
    beta: float
    d: int
    n_x: int
    n_y: int
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("A", "B", "C", "D"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.d < 1 or self.n_x < 1 or self.n_y < 1:
            raise ValueError("dimension and sample sizes must be positive")


def _mixture(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """0.5 N(-1, I) + 0.5 N(1, I), one membership draw per row."""
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return signs[:, None] + rng.standard_normal((n, d))


def gen_model(spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw (X, Y) for the requested model; beta = 0 gives equal laws."""
    rng = np.random.default_rng(spec.seed)
    d, beta = spec.d, spec.beta
    if spec.model == "A":
        X = ar1_gaussian_sample(d, 0.5, spec.n_x, rng)
        Y = ar1_gaussian_sample(d, 0.5, spec.n_y, rng)
        mu = 0.8 * beta * np.arange(1, d + 1, dtype=np.float64) ** -3.0
        return X, Y + mu
    if spec.model == "B":
        X = ar1_gaussian_sample(d, 0.5, spec.n_x, rng)
        Y = ar1_gaussian_sample(d, 0.5, spec.n_y, rng)
        extra = 8.0 * beta * np.arange(1, d + 1, dtype=np.float64) ** -3.0
        return X, Y + np.sqrt(extra) * rng.standard_normal((spec.n_y, d))
    if spec.model == "C":
        s = round_half_away(5.0 * beta)
        if s > d:
            raise ValueError(f"model C block size s={s} exceeds d={d}")
        X = _mixture(rng, spec.n_x, d)
        y1 = math.sqrt(2.0) * ar1_gaussian_sample(max(s, 1), 0.5, spec.n_y, rng)[:, :s]
        y2 = _mixture(rng, spec.n_y, d - s)
        return X, np.hstack([y1, y2])
    s = round_half_away(100.0 * beta)
    if s > d:
        raise ValueError(f"model D block size s={s} exceeds d={d}")
    X = _mixture(rng, spec.n_x, d)
    signs = np.where(rng.random(spec.n_y) < 0.5, -1.0, 1.0)
    block = ar1_gaussian_sample(max(s, 1), 0.9, spec.n_y, rng)[:, :s]
    rest = rng.standard_normal((spec.n_y, d - s))
    return X, signs[:, None] + np.hstack([block, rest])


# ---------------------------------------------------------------------------
# permutation baselines
# ---------------------------------------------------------------------------


def _permutation_pvalue(pooled_stat, n_x: int, n_total: int, n_perms: int,
                        rng: np.random.Generator) -> tuple[float, float]:
    """Generic permutation scheme over pooled indices.

    ``pooled_stat(idx_x, idx_y)`` evaluates the statistic for a labelling.
    Returns (observed statistic, p-value) under the >= convention.
    """
    base = np.arange(n_total)
    observed = pooled_stat(base[:n_x], base[n_x:])
    exceed = 0
    for _ in range(n_perms):
        perm = rng.permutation(n_total)
        if pooled_stat(perm[:n_x], perm[n_x:]) >= observed:
            exceed += 1
    return observed, (exceed + 1) / (n_perms + 1)


def mmd_permutation_test(X: np.ndarray, Y: np.ndarray, n_perms: int = 199,
                         alpha: float = 0.05, seed: int = 0) -> tuple[float, bool]:
    """Unbiased squared MMD with a Gaussian kernel, permutation calibrated.

    The bandwidth is the median pairwise Euclidean distance of the pooled
    sample; an all-identical pool (zero median) returns p = 1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if n_perms < 99:
        raise ValueError("need at least 99 permutations")
    pooled = np.vstack([X, Y])
    dists = pdist(pooled)
    bandwidth = float(np.median(dists))
    if bandwidth <= 0.0:
        return 1.0, False
    kernel = squareform(np.exp(-(dists ** 2) / (2.0 * bandwidth ** 2)))
    np.fill_diagonal(kernel, 1.0)
    n_x = X.shape[0]

    def stat(ix, iy):
        kxx = kernel[np.ix_(ix, ix)]
        kyy = kernel[np.ix_(iy, iy)]
        kxy = kernel[np.ix_(ix, iy)]
        nx, ny = ix.size, iy.size
        term_x = (kxx.sum() - np.trace(kxx)) / (nx * (nx - 1))
        term_y = (kyy.sum() - np.trace(kyy)) / (ny * (ny - 1))
        return term_x + term_y - 2.0 * kxy.mean()

    rng = np.random.default_rng(seed)
    _, p = _permutation_pvalue(stat, n_x, pooled.shape[0], n_perms, rng)
    return p, bool(p <= alpha)


def energy_permutation_test(X: np.ndarray, Y: np.ndarray, n_perms: int = 199,
                            alpha: float = 0.05, seed: int = 0) -> tuple[float, bool]:
    """Energy-distance two-sample test with permutation calibration."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if n_perms < 99:
        raise ValueError("need at least 99 permutations")
    pooled = np.vstack([X, Y])
    dmat = squareform(pdist(pooled))
    if not dmat.any():
        return 1.0, False
    n_x = X.shape[0]

    def stat(ix, iy):
        dxx = dmat[np.ix_(ix, ix)]
        dyy = dmat[np.ix_(iy, iy)]
        dxy = dmat[np.ix_(ix, iy)]
        nx, ny = ix.size, iy.size
        within_x = dxx.sum() / (nx * (nx - 1))
        within_y = dyy.sum() / (ny * (ny - 1))
        return 2.0 * dxy.mean() - within_x - within_y

    rng = np.random.default_rng(seed)
    _, p = _permutation_pvalue(stat, n_x, pooled.shape[0], n_perms, rng)
    return p, bool(p <= alpha)


# ---------------------------------------------------------------------------
# Monte Carlo power study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerCell:
    """One (method, model) cell of the study grid."""

    method: str          # plain | l1 | l0 | mmd | ed
    model: str
    beta: float
    d: int
    n_x: int
    n_y: int

    def __post_init__(self):
        if self.method not in ("plain", "l1", "l0", "mmd", "ed"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class PowerTable:
    alpha: float
    n_reps: int
    rows: list = field(default_factory=list)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "model", "beta", "d", "n_x", "n_y",
                             "alpha", "n_reps", "n_failed", "reject_rate"])
            for row in self.rows:
                writer.writerow([
                    row["method"], row["model"], row["beta"], row["d"],
                    row["n_x"], row["n_y"], self.alpha, self.n_reps,
                    row["n_failed"], f"{row['reject_rate']:.6g}"])


def _run_replication(args):
    cell, alpha, n_perms, test_config, rep_seed = args
    spec = ModelSpec(model=cell.model, beta=cell.beta, d=cell.d,
                     n_x=cell.n_x, n_y=cell.n_y, seed=rep_seed)
    X, Y = gen_model(spec)
    if cell.method == "mmd":
        _, reject = mmd_permutation_test(X, Y, n_perms=n_perms, alpha=alpha,
                                         seed=derive_seed(rep_seed, "perm"))
        return reject
    if cell.method == "ed":
        _, reject = energy_permutation_test(X, Y, n_perms=n_perms, alpha=alpha,
                                            seed=derive_seed(rep_seed, "perm"))
        return reject
    config = replace(test_config, variant=cell.method, alpha=alpha,
                     seed=derive_seed(rep_seed, "test"))
    return multi_split_test(X, Y, config).reject


def power_study(grid, n_reps: int, alpha: float = 0.05, out_path: str = None,
                seed: int = 0, n_perms: int = 199,
                test_config: TestConfig = None, n_jobs: int = 1) -> PowerTable:
    """Rejection rates over independent replications for every grid cell.

    Failed replications are recorded and excluded from the rate.  The
    proposed-method cells reuse ``test_config`` for everything except the
    variant, level and seed; the benchmark default is a single split.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    if test_config is None:
        test_config = TestConfig(n_splits=1)
    table = PowerTable(alpha=alpha, n_reps=n_reps)
    for ci, cell in enumerate(grid):
        tasks = [(cell, alpha, n_perms, test_config,
                  derive_seed(seed, "cell", ci, "rep", rep))
                 for rep in range(n_reps)]
        outcomes = []
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                futures = [pool.submit(_run_replication, t) for t in tasks]
                for fut in futures:
                    try:
                        outcomes.append(bool(fut.result()))
                    except Exception as exc:  # noqa: BLE001 - cell isolation
                        warnings.warn(f"replication failed in {cell}: {exc}")
                        outcomes.append(None)
        else:
            for task in tasks:
                try:
                    outcomes.append(bool(_run_replication(task)))
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    warnings.warn(f"replication failed in {cell}: {exc}")
                    outcomes.append(None)
        ok = [o for o in outcomes if o is not None]
        table.rows.append({
            "method": cell.method, "model": cell.model, "beta": cell.beta,
            "d": cell.d, "n_x": cell.n_x, "n_y": cell.n_y,
            "n_failed": len(outcomes) - len(ok),
            "reject_rate": float(np.mean(ok)) if ok else 0.0,
        })
    if out_path is not None:
        table.write_csv(out_path)
        if not os.path.exists(out_path):
            raise RuntimeError(f"failed to write {out_path}")
    return table
