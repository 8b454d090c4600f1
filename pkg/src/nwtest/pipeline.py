"""End-to-end test orchestration.

One test run: split each sample into fit and test halves, estimate a
projection and train a witness network per candidate hyperparameter pair
on the fit half only, evaluate the composed scores on the test half,
standardise the vector of mean differences, and calibrate the max against
the pivotal max-of-absolute-Gaussians law.  Several independent splits can
be aggregated into a single p-value (Cauchy combination or Bonferroni).

All randomness flows from one master seed through a counter-based
splitmix64 derivation, so runs are reproducible across platforms.
"""

from __future__ import annotations

import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .statistic import (DegenerateCandidatesError, TestReport,
                        backward_eliminate, candidate_covariance,
                        max_abs_gauss_quantile, max_gauss_pvalue,
                        max_statistic)
from .stiefel import ManPGOptions, l0_fit_projection, manpg_fit_projection
from .witness import NetworkArchitecture, TrainOptions, default_output_bound, train_witness

__all__ = [
    "derive_seed",
    "SplitIndices",
    "CandidateSpec",
    "TestConfig",
    "MultiSplitReport",
    "IndexAudit",
    "default_candidates",
    "split_sample",
    "run_single_split_test",
    "aggregate_pvalues",
    "multi_split_test",
]

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def derive_seed(master: int, *path) -> int:
    """Deterministic 64-bit seed for a labelled position in the run tree.

    Path components may be ints, floats (mixed in by their bit pattern) or
    strings (mixed in by crc32), so e.g. ``derive_seed(s, "proj", k, rho)``
    is stable across platforms and runs.
    """
    state = _splitmix64(master & _M64)
    for comp in path:
        if isinstance(comp, str):
            comp = zlib.crc32(comp.encode("utf-8"))
        elif isinstance(comp, float):
            comp = int.from_bytes(np.float64(comp).tobytes(), "little")
        elif not isinstance(comp, (int, np.integer)):
            raise TypeError(f"unsupported path component {comp!r}")
        state = _splitmix64((state ^ int(comp)) & _M64)
    return state


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateSpec:
    """One entry of the aggregation set: projection dimension + regulariser."""

    k: int
    reg_type: str = "none"   # none | l1 | l0
    reg_value: float = 0.0   # rho for l1, sparsity budget for l0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.reg_type not in ("none", "l1", "l0"):
            raise ValueError(f"unknown regulariser {self.reg_type!r}")
        if self.reg_type == "l1" and self.reg_value < 0:
            raise ValueError("l1 penalty must be nonnegative")
        if self.reg_type == "l0" and self.reg_value < self.k:
            raise ValueError("l0 budget must be at least k")

    def to_dict(self) -> dict:
        return {"k": self.k, "reg_type": self.reg_type, "reg_value": self.reg_value}


def default_candidates(variant: str, d: int) -> tuple:
    """Published default candidate sets, restricted to k <= d."""
    ks = [k for k in (1, 5, 10) if k <= d]
    if variant == "plain":
        return tuple(CandidateSpec(k) for k in ks)
    if variant == "l1":
        return tuple(CandidateSpec(k, "l1", rho)
                     for k in ks for rho in (0.01, 0.1, 1.0))
    if variant == "l0":
        out = []
        for k in ks:
            budgets = {k, int(k * math.sqrt(d)), k * d}
            out.extend(CandidateSpec(k, "l0", float(b)) for b in sorted(budgets))
        return tuple(out)
    raise ValueError(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # keep pytest from collecting this as a test class

    variant: str = "l1"                  # plain | l1 | l0
    candidates: tuple = None             # None: defaults for the variant
    alpha: float = 0.05
    split_ratio: float = 0.5
    n_splits: int = 5
    aggregation: str = "cauchy"
    seed: int = 0
    kappa: float = 1e-3
    net_depth: int = 3
    manpg: ManPGOptions = field(default_factory=ManPGOptions)
    train: TrainOptions = field(default_factory=TrainOptions)

    def __post_init__(self):
        if self.variant not in ("plain", "l1", "l0"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.n_splits < 1:
            raise ValueError("n_splits must be >= 1")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.candidates is not None:
            cands = tuple(self.candidates)
            if not cands:
                raise ValueError("candidate list must be nonempty")
            object.__setattr__(self, "candidates", cands)

    _TOP_KEYS = {"variant", "candidates", "alpha", "split_ratio", "n_splits",
                 "aggregation", "seed", "kappa", "net_depth", "manpg", "train"}

    @classmethod
    def from_dict(cls, payload: dict) -> "TestConfig":
        if not isinstance(payload, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(payload) - cls._TOP_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(payload)
        if kwargs.get("candidates") is not None:
            cands = []
            for entry in kwargs["candidates"]:
                extra = set(entry) - {"k", "reg_type", "reg_value"}
                if extra:
                    raise ValueError(f"unknown candidate keys: {sorted(extra)}")
                cands.append(CandidateSpec(**entry))
            kwargs["candidates"] = tuple(cands)
        if "manpg" in kwargs:
            known = {f for f in ManPGOptions.__dataclass_fields__}
            extra = set(kwargs["manpg"]) - known
            if extra:
                raise ValueError(f"unknown manpg keys: {sorted(extra)}")
            kwargs["manpg"] = ManPGOptions(**kwargs["manpg"])
        if "train" in kwargs:
            known = {f for f in TrainOptions.__dataclass_fields__}
            extra = set(kwargs["train"]) - known
            if extra:
                raise ValueError(f"unknown train keys: {sorted(extra)}")
            kwargs["train"] = TrainOptions(**kwargs["train"])
        return cls(**kwargs)

    def resolved_candidates(self, d: int) -> tuple:
        return self.candidates if self.candidates is not None \
            else default_candidates(self.variant, d)


# ---------------------------------------------------------------------------
# sample splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitIndices:
    fit_x: np.ndarray
    test_x: np.ndarray
    fit_y: np.ndarray
    test_y: np.ndarray
    seed: int


def _partition(n: int, ratio: float, rng: np.random.Generator):
    # fit size: round(ratio * n), halves away from zero
    n_fit = int(math.floor(ratio * n + 0.5))
    perm = rng.permutation(n)
    return np.sort(perm[:n_fit]), np.sort(perm[n_fit:])


def split_sample(n_x: int, n_y: int, ratio: float, seed: int) -> SplitIndices:
    """Random fit/test partition of both samples, deterministic in the seed."""
    if n_x < 4 or n_y < 4:
        raise ValueError("need at least four observations per sample")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    for n in (n_x, n_y):
        n_fit = int(math.floor(ratio * n + 0.5))
        if min(n_fit, n - n_fit) < 2:
            raise ValueError("split leaves fewer than two points in a subset")
    rng = np.random.default_rng(seed)
    fit_x, test_x = _partition(n_x, ratio, rng)
    fit_y, test_y = _partition(n_y, ratio, rng)
    return SplitIndices(fit_x=fit_x, test_x=test_x, fit_y=fit_y,
                        test_y=test_y, seed=seed)


@dataclass
class IndexAudit:
    """Filled by an instrumented run: which indices fed fitting vs scoring."""

    fit_x: np.ndarray = None
    fit_y: np.ndarray = None
    evaluations: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# single-split test
# ---------------------------------------------------------------------------


def _fit_candidate(fit_x, fit_y, spec: CandidateSpec, config: TestConfig,
                   proj_seed: int, l0_cache: dict):
    if spec.reg_type == "l0":
        budget = int(min(spec.reg_value, spec.k * fit_x.shape[1]))
        U, _ = l0_fit_projection(fit_x, fit_y, spec.k, budget,
                                 opts=config.manpg, seed=proj_seed,
                                 fit_cache=l0_cache.setdefault(spec.k, {}))
        return U
    rho = spec.reg_value if spec.reg_type == "l1" else 0.0
    U, _ = manpg_fit_projection(fit_x, fit_y, spec.k, rho=rho,
                                opts=config.manpg, seed=proj_seed)
    return U


def run_single_split_test(X: np.ndarray, Y: np.ndarray, config: TestConfig,
                          split: SplitIndices,
                          audit: IndexAudit = None) -> TestReport:
    """Fit every candidate on the fit half and test on the held-out half."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    d = X.shape[1]
    specs = config.resolved_candidates(d)
    fit_x, fit_y = X[split.fit_x], Y[split.fit_y]
    test_x, test_y = X[split.test_x], Y[split.test_y]
    n2x, n2y = test_x.shape[0], test_y.shape[0]
    if audit is not None:
        audit.fit_x = split.fit_x.copy()
        audit.fit_y = split.fit_y.copy()

    rows_x, rows_y, kept_specs, kept_idx, failed = [], [], [], [], []
    l0_cache: dict = {}
    for j, spec in enumerate(specs):
        proj_seed = derive_seed(split.seed, "proj", spec.k)
        net_seed = derive_seed(split.seed, "net", spec.k, spec.reg_type,
                               float(spec.reg_value))
        try:
            if spec.k > d:
                raise ValueError(f"candidate k={spec.k} exceeds data dimension {d}")
            U = _fit_candidate(fit_x, fit_y, spec, config, proj_seed, l0_cache)
            proj_fit = np.vstack([fit_x @ U, fit_y @ U])
            arch = NetworkArchitecture.default(
                spec.k, default_output_bound(proj_fit), depth=config.net_depth)
            net = train_witness(fit_x, fit_y, U, arch=arch,
                                opts=replace(config.train, seed=net_seed))
            gx = net.forward(test_x @ U)
            gy = net.forward(test_y @ U)
        except Exception as exc:  # noqa: BLE001 - candidate isolation
            warnings.warn(f"candidate {j} ({spec}) failed and was dropped: {exc}")
            failed.append(j)
            continue
        if audit is not None:
            audit.evaluations.append(
                {"candidate": j, "x_indices": split.test_x.copy(),
                 "y_indices": split.test_y.copy()})
        rows_x.append(gx)
        rows_y.append(gy)
        kept_specs.append(spec)
        kept_idx.append(j)
    if not kept_specs:
        raise RuntimeError("every candidate failed; no statistic available")

    evals_x = np.vstack(rows_x)
    evals_y = np.vstack(rows_y)
    s_vec = evals_x.mean(axis=1) - evals_y.mean(axis=1)
    cov = candidate_covariance(evals_x, evals_y, kappa=config.kappa)
    try:
        conditioned = backward_eliminate(cov)
        T, _ = max_statistic(s_vec[conditioned.kept], conditioned, n2x, n2y)
        m_eff = conditioned.m_effective
        eliminated = [kept_idx[i] for i in conditioned.eliminated]
    except DegenerateCandidatesError:
        # single surviving candidate with zero variance: fall back to the
        # scalar studentisation convention
        m_eff = 1
        eliminated = kept_idx[1:]
        s0 = s_vec[0]
        T = 0.0 if s0 == 0.0 else math.inf
    q = max_abs_gauss_quantile(m_eff, config.alpha)
    p = max_gauss_pvalue(T, m_eff)

    diag = np.diag(cov.matrix)
    cand_entries = []
    for local_i, (j, spec) in enumerate(zip(kept_idx, kept_specs)):
        cand_entries.append({
            "k": spec.k, "reg_type": spec.reg_type,
            "reg_value": float(spec.reg_value),
            "S_n": float(s_vec[local_i]),
            "sigma_hat": float(math.sqrt(max(diag[local_i], 0.0))),
        })
    report = TestReport(
        variant=config.variant, alpha=config.alpha, T=float(T), q=float(q),
        p=float(p), m_requested=len(specs), m_effective=m_eff,
        eliminated=eliminated, candidates=cand_entries,
        seeds={"master": config.seed, "split": split.seed},
    )
    if failed:
        report.seeds["failed_candidates"] = failed
    return report


# ---------------------------------------------------------------------------
# aggregation over splits
# ---------------------------------------------------------------------------


def aggregate_pvalues(ps, method: str = "cauchy") -> float:
    """Combine p-values from dependent tests into one.

    ``cauchy``: mean of tan((1/2 - p) pi), valid under arbitrary dependence.
    ``bonferroni``: K times the smallest p-value, capped at 1.
    """
    ps = np.asarray(list(ps), dtype=np.float64)
    if ps.size == 0:
        raise ValueError("need at least one p-value")
    if np.any(ps < 0.0) or np.any(ps > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    if method == "cauchy":
        clipped = np.clip(ps, 1e-15, 1.0 - 1e-15)
        combined = float(np.mean(np.tan((0.5 - clipped) * math.pi)))
        return float(min(max(0.5 - math.atan(combined) / math.pi, 0.0), 1.0))
    if method == "bonferroni":
        return float(min(1.0, ps.size * ps.min()))
    raise ValueError(
        f"unknown aggregation {method!r}; available: cauchy, bonferroni")


@dataclass
class MultiSplitReport:
    variant: str
    alpha: float
    p: float
    reject: bool
    n_splits: int
    aggregation: str
    seed: int
    splits: list  # per-split TestReports

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "alpha": self.alpha, "p": self.p,
            "reject": self.reject, "n_splits": self.n_splits,
            "aggregation": self.aggregation, "seed": self.seed,
            "splits": [r.to_dict() for r in self.splits],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MultiSplitReport":
        required = {"variant", "alpha", "p", "reject", "n_splits",
                    "aggregation", "seed", "splits"}
        missing = required - set(payload)
        if missing:
            raise ValueError(f"multi-split report missing keys: {sorted(missing)}")
        splits = [TestReport.from_dict(r) for r in payload["splits"]]
        return cls(variant=payload["variant"], alpha=payload["alpha"],
                   p=payload["p"], reject=payload["reject"],
                   n_splits=payload["n_splits"], aggregation=payload["aggregation"],
                   seed=payload["seed"], splits=splits)


def _one_split(args):
    X, Y, config, split_index = args
    split_seed = derive_seed(config.seed, "split", split_index)
    split = split_sample(X.shape[0], Y.shape[0], config.split_ratio, split_seed)
    return run_single_split_test(X, Y, config, split)


def multi_split_test(X: np.ndarray, Y: np.ndarray, config: TestConfig,
                     n_jobs: int = 1) -> MultiSplitReport:
    """Aggregate the single-split test over independent random splits."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    tasks = [(X, Y, config, s) for s in range(config.n_splits)]
    if n_jobs > 1 and config.n_splits > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, config.n_splits)) as pool:
            reports = list(pool.map(_one_split, tasks))
    else:
        reports = [_one_split(t) for t in tasks]
    p = aggregate_pvalues([r.p for r in reports], method=config.aggregation)
    return MultiSplitReport(
        variant=config.variant, alpha=config.alpha, p=p,
        reject=bool(p <= config.alpha), n_splits=config.n_splits,
        aggregation=config.aggregation, seed=config.seed, splits=reports)
