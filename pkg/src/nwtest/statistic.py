"""Max-type aggregation of per-candidate mean-difference statistics.

Each candidate contributes the difference of sample means of a learned
scalar score evaluated on held-out data.  The vector of differences is
standardised by the inverse square root of its estimated covariance and
the test statistic is the largest absolute standardised entry.  Under the
null it behaves like the maximum of independent absolute standard normals,
so critical values and p-values are closed form.

Covariance conditioning follows a backward elimination: while the
correlation matrix of the surviving candidates has smallest eigenvalue
below ``kappa``, drop the candidate whose removal raises that eigenvalue
the most (ties: lowest index).
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegenerateCandidatesError",
    "CovarianceEstimate",
    "TestReport",
    "mean_difference",
    "pooled_variance",
    "candidate_covariance",
    "backward_eliminate",
    "inv_sqrt_sym",
    "max_statistic",
    "norm_cdf",
    "norm_ppf",
    "max_abs_gauss_quantile",
    "max_gauss_pvalue",
    "validate_report_dict",
]


class DegenerateCandidatesError(RuntimeError):
    """Raised when no candidate subset admits a stable standardisation."""


# ---------------------------------------------------------------------------
# normal distribution helpers (erfc-based CDF, rational inverse + Newton)
# ---------------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation of the standard normal quantile
_PPF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_PPF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_PPF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_PPF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)
_PPF_LOW = 0.02425


def norm_cdf(x: float) -> float:
    """Standard normal distribution function."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT2PI


def norm_ppf(p: float) -> float:
    """Standard normal quantile, accurate to better than 1e-10.

    Rational approximation refined by one Newton step against the
    erfc-based distribution function.  Upper-half inputs are reflected to
    the lower tail first (1 - p is exact there), so the Newton residual
    keeps full relative precision in both tails.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    if p > 0.5:
        return -norm_ppf(1.0 - p)
    a, b, c, d = _PPF_A, _PPF_B, _PPF_C, _PPF_D
    if p < _PPF_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    if x > -36.0:
        x -= (norm_cdf(x) - p) / _norm_pdf(x)
    else:
        # deep tail: Newton on log scale with the Mills-ratio asymptotics,
        # immune to pdf underflow down to the smallest subnormal p
        inv2 = 1.0 / (x * x)
        series = 1.0 - inv2 + 3.0 * inv2 * inv2 - 15.0 * inv2 * inv2 * inv2
        log_cdf = -0.5 * x * x - math.log(-x * _SQRT2PI) + math.log(series)
        x -= (log_cdf - math.log(p)) * (series / (-x))
    return x


def max_abs_gauss_quantile(m: int, alpha: float) -> float:
    """1-alpha quantile of max_j |Z_j| for m independent standard normals."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return norm_ppf((1.0 + (1.0 - alpha) ** (1.0 / m)) / 2.0)


def max_gauss_pvalue(t: float, m: int) -> float:
    """P(max_j |Z_j| > t) for m independent standard normals."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if t <= 0.0:
        return 1.0
    u = math.erfc(t / _SQRT2)  # 1 - (2*Phi(t) - 1)
    if u >= 1.0:
        return 1.0
    p = -math.expm1(m * math.log1p(-u))
    return min(max(p, 0.0), 1.0)


# ---------------------------------------------------------------------------
# per-candidate statistics
# ---------------------------------------------------------------------------


def mean_difference(gx, gy) -> float:
    """Difference of the two sample means of the candidate score."""
    gx = np.asarray(gx, dtype=np.float64).ravel()
    gy = np.asarray(gy, dtype=np.float64).ravel()
    if gx.size == 0 or gy.size == 0:
        raise ValueError("both evaluation lists must be nonempty")
    return float(gx.mean() - gy.mean())


def pooled_variance(gx, gy) -> float:
    """Size-weighted average of the two 1/n sample variances.

    The weights are swapped relative to the sizes, so the result is the
    variance of the root-(n2x n2y/(n2x+n2y))-scaled mean difference.
    """
    gx = np.asarray(gx, dtype=np.float64).ravel()
    gy = np.asarray(gy, dtype=np.float64).ravel()
    if gx.size < 2 or gy.size < 2:
        raise ValueError("need at least two evaluations per sample")
    nx, ny = gx.size, gy.size
    vx = float(np.mean((gx - gx.mean()) ** 2))
    vy = float(np.mean((gy - gy.mean()) ** 2))
    return (ny / (nx + ny)) * vx + (nx / (nx + ny)) * vy


@dataclass
class CovarianceEstimate:
    """Candidate covariance with the bookkeeping of eliminated entries.

    ``matrix`` covers the surviving candidates only; ``kept`` maps its
    rows back to the original candidate indices.
    """

    matrix: np.ndarray
    kept: list[int]
    eliminated: list[int]
    kappa: float

    @property
    def m_effective(self) -> int:
        return len(self.kept)


def candidate_covariance(evals_x: np.ndarray, evals_y: np.ndarray,
                         kappa: float = 1e-3) -> CovarianceEstimate:
    """Plug-in covariance of the scaled mean-difference vector.

    ``evals_x`` is (m, n2x): candidate j evaluated on every held-out X
    point, likewise ``evals_y``.  Uses the 1/n covariance convention and
    the same swapped size weights as ``pooled_variance``.
    """
    gx = np.atleast_2d(np.asarray(evals_x, dtype=np.float64))
    gy = np.atleast_2d(np.asarray(evals_y, dtype=np.float64))
    if gx.shape[0] != gy.shape[0]:
        raise ValueError("candidate counts differ between samples")
    nx, ny = gx.shape[1], gy.shape[1]
    if nx < 2 or ny < 2:
        raise ValueError("need at least two test points per sample")
    cx = gx - gx.mean(axis=1, keepdims=True)
    cy = gy - gy.mean(axis=1, keepdims=True)
    sigma = (ny / (nx + ny)) * (cx @ cx.T) / nx + (nx / (nx + ny)) * (cy @ cy.T) / ny
    sigma = 0.5 * (sigma + sigma.T)
    return CovarianceEstimate(matrix=sigma, kept=list(range(gx.shape[0])),
                              eliminated=[], kappa=kappa)


def _correlation(sigma: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(sigma))
    return sigma / np.outer(d, d)


def backward_eliminate(cov: CovarianceEstimate, kappa: float = None) -> CovarianceEstimate:
    """Drop candidates until the correlation matrix is well conditioned.

    The eigenvalue floor applies to the correlation-scaled matrix so the
    threshold is invariant to per-candidate scaling.  Candidates with an
    exactly zero variance are removed first (they admit no correlation).
    """
    if kappa is None:
        kappa = cov.kappa
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    sigma = cov.matrix.copy()
    kept = list(cov.kept)
    eliminated = list(cov.eliminated)

    alive = [i for i in range(len(kept)) if sigma[i, i] > 0.0]
    dead = [i for i in range(len(kept)) if sigma[i, i] <= 0.0]
    if dead and not alive:
        if len(kept) == 1:
            raise DegenerateCandidatesError(
                "single candidate has zero variance on the test data")
        alive, dead = dead[:1], dead[1:]
    for i in dead:
        eliminated.append(kept[i])
    sigma = sigma[np.ix_(alive, alive)]
    kept = [kept[i] for i in alive]

    while len(kept) > 1:
        corr = _correlation(sigma)
        if np.linalg.eigvalsh(corr)[0] >= kappa:
            break
        best_j, best_val = 0, -np.inf
        for j in range(len(kept)):
            rest = [i for i in range(len(kept)) if i != j]
            sub = _correlation(sigma[np.ix_(rest, rest)])
            lam = np.linalg.eigvalsh(sub)[0] if len(rest) > 1 else 1.0
            if lam > best_val + 1e-15:
                best_j, best_val = j, lam
        eliminated.append(kept[best_j])
        keep = [i for i in range(len(kept)) if i != best_j]
        sigma = sigma[np.ix_(keep, keep)]
        kept = [kept[i] for i in keep]

    if len(kept) == 1 and sigma[0, 0] <= 0.0:
        raise DegenerateCandidatesError(
            "last surviving candidate has zero variance on the test data")
    return CovarianceEstimate(matrix=sigma, kept=kept, eliminated=eliminated,
                              kappa=kappa)


def inv_sqrt_sym(mat: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root via eigendecomposition."""
    mat = np.asarray(mat, dtype=np.float64)
    lam, vec = np.linalg.eigh(0.5 * (mat + mat.T))
    if lam[0] <= 0.0:
        raise ValueError("matrix is not positive definite; eliminate candidates first")
    return (vec / np.sqrt(lam)) @ vec.T


def max_statistic(stat_vector: np.ndarray, cov: CovarianceEstimate,
                  n2x: int, n2y: int) -> tuple[float, np.ndarray]:
    """Largest absolute standardised entry of the scaled statistic vector.

    ``stat_vector`` holds the per-candidate mean differences for the
    surviving candidates in ``cov``.  Returns the statistic and the vector
    of standardised components (ordered as ``cov.kept``).
    """
    s = np.asarray(stat_vector, dtype=np.float64).ravel()
    if s.size != cov.m_effective:
        raise ValueError("statistic vector does not match surviving candidates")
    scale = math.sqrt(n2x * n2y / (n2x + n2y))
    root = inv_sqrt_sym(cov.matrix)
    comps = scale * (root @ s)
    return float(np.max(np.abs(comps))), comps


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class TestReport:
    """Outcome of one aggregated test on a single fit/test split."""

    __test__ = False  # keep pytest from collecting this as a test class

    variant: str
    alpha: float
    T: float
    q: float
    p: float
    m_requested: int
    m_effective: int
    eliminated: list[int]
    candidates: list[dict]
    seeds: dict
    reject: bool = field(default=None)

    def __post_init__(self):
        if self.reject is None:
            self.reject = bool(self.T > self.q)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "alpha": self.alpha,
            "T": self.T,
            "q": self.q,
            "p": self.p,
            "m_requested": self.m_requested,
            "m_effective": self.m_effective,
            "eliminated": list(self.eliminated),
            "candidates": [dict(c) for c in self.candidates],
            "seeds": dict(self.seeds),
            "reject": self.reject,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TestReport":
        validate_report_dict(payload)
        return cls(
            variant=payload["variant"], alpha=payload["alpha"], T=payload["T"],
            q=payload["q"], p=payload["p"], m_requested=payload["m_requested"],
            m_effective=payload["m_effective"], eliminated=list(payload["eliminated"]),
            candidates=[dict(c) for c in payload["candidates"]],
            seeds=dict(payload["seeds"]), reject=payload.get("reject"),
        )


_REPORT_FIELDS = {
    "variant": str, "alpha": float, "T": float, "q": float, "p": float,
    "m_requested": int, "m_effective": int, "eliminated": list,
    "candidates": list, "seeds": dict,
}
_CANDIDATE_FIELDS = {"k": int, "reg_type": str, "reg_value": float,
                     "S_n": float, "sigma_hat": float}


def validate_report_dict(payload: dict) -> None:
    """Check a decoded report against the published schema; raise on defect."""
    if not isinstance(payload, dict):
        raise ValueError("report must be a JSON object")
    for key, typ in _REPORT_FIELDS.items():
        if key not in payload:
            raise ValueError(f"report is missing field {key!r}")
        val = payload[key]
        if typ is float and isinstance(val, int):
            val = float(val)
        if not isinstance(val, typ):
            raise ValueError(f"report field {key!r} has wrong type")
    if not 0.0 <= payload["p"] <= 1.0:
        raise ValueError("p-value outside [0, 1]")
    for cand in payload["candidates"]:
        for key, typ in _CANDIDATE_FIELDS.items():
            if key not in cand:
                raise ValueError(f"candidate entry is missing field {key!r}")
            val = cand[key]
            if typ is float and isinstance(val, int):
                val = float(val)
            if val is not None and not isinstance(val, typ):
                raise ValueError(f"candidate field {key!r} has wrong type")


def write_json_atomic(payload: dict, path: str) -> None:
    """Serialise to a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
