"""Discriminative projection estimation on the Stiefel manifold.

Maximises the empirical projected 1-Wasserstein distance, optionally minus
an entrywise l1 penalty, by alternating two subproblems:

1. at fixed projection, an exact optimal-transport solve between the
   projected samples (closed-form quantile coupling when k = 1, the
   transportation simplex otherwise, warm-started across iterations);
2. at a fixed coupling, one manifold proximal-gradient step: a descent
   direction from a tangent-constrained proximal subproblem solved by a
   semi-smooth Newton method on its KKT system, an Armijo backtracking
   line search, and a QR retraction.

Internally the solver minimises
    F(U; plan) = -sum_ij plan_ij ||U^T (x_i - y_j)||_2 + rho * ||U||_1,
so the accepted steps decrease F at the current coupling.

An l0 variant approximates a hard sparsity budget by sweeping an l1
penalty ladder and pruning each solution to the budget (largest-magnitude
entries, re-orthonormalised), keeping the candidate with the largest
projected distance on the fit data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .transport import (empirical_projected_w1, quantile_coupling,
                        solve_discrete_ot)

__all__ = [
    "ManPGOptions",
    "ObjectiveState",
    "IterationRecord",
    "ManPGTrace",
    "l1_norm",
    "soft_threshold",
    "smoothed_cost_grad",
    "solve_descent_direction",
    "retract",
    "heuristic_init",
    "random_stiefel",
    "manpg_fit_projection",
    "prune_and_orthonormalize",
    "default_rho_ladder",
    "l0_fit_projection",
]


@dataclass(frozen=True)
class ManPGOptions:
    """Solver controls for the alternating manifold proximal-gradient loop."""

    step_size: float = None      # None: 1/L from a power-iteration estimate
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    max_outer: int = 200
    tol: float = 1e-5            # relative change of U between outer iterations
    newton_tol: float = 1e-8
    newton_max: int = 50
    grad_smoothing: float = 1e-12
    n_random_restarts: int = 1
    max_backtracks: int = 50

    def __post_init__(self):
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 < self.armijo_shrink < 1.0:
            raise ValueError("armijo_shrink must lie in (0, 1)")
        if not 0.0 < self.armijo_slope < 1.0:
            raise ValueError("armijo_slope must lie in (0, 1)")
        if self.max_outer < 1 or self.newton_max < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.tol <= 0 or self.newton_tol <= 0 or self.grad_smoothing <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_random_restarts < 0:
            raise ValueError("n_random_restarts must be >= 0")


@dataclass(frozen=True)
class ObjectiveState:
    """Penalised objective split into its smooth and l1 parts."""

    total: float
    smooth: float
    penalty: float


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    f_before: float
    f_after: float
    smooth: float
    penalty: float
    step: float
    v_norm: float
    newton_converged: bool


@dataclass
class ManPGTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    value: float = 0.0        # projected W1 of the returned U on the fit data
    l1_norm: float = 0.0      # implied l1 constraint level of the solution
    objective: float = 0.0    # penalised objective -value + rho * l1_norm
    restart_objectives: list = field(default_factory=list)
    gamma: float = 0.0

    def dump(self, path: str) -> None:
        """Tab-separated per-iteration log: iter F l h step V_norm."""
        with open(path, "w") as handle:
            handle.write("iter\tF\tl\th\tstep\tV_norm\n")
            for rec in self.records:
                handle.write(
                    f"{rec.iteration}\t{rec.f_after!r}\t{rec.smooth!r}\t"
                    f"{rec.penalty!r}\t{rec.step!r}\t{rec.v_norm!r}\n")


def l1_norm(U: np.ndarray) -> float:
    """Entrywise l1 norm; the implied constraint level of a penalised run."""
    return float(np.sum(np.abs(U)))


def soft_threshold(B: np.ndarray, t: float) -> np.ndarray:
    """Entrywise sign(b) * max(|b| - t, 0)."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return np.sign(B) * np.maximum(np.abs(B) - t, 0.0)


def smoothed_cost_grad(U: np.ndarray, plan_weights: np.ndarray,
                       diffs: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Gradient of the negated smoothed transport cost at a fixed coupling.

    ``diffs`` holds the pair differences x_i - y_j (one row per coupled
    pair) and ``plan_weights`` the matching coupling masses.  The norm is
    smoothed as sqrt(||U^T z||^2 + eps^2), so the gradient is finite even
    when a projected pair collapses to zero.
    """
    U = np.asarray(U, dtype=np.float64)
    diffs = np.atleast_2d(np.asarray(diffs, dtype=np.float64))
    w = np.asarray(plan_weights, dtype=np.float64).ravel()
    if diffs.shape[0] != w.size:
        raise ValueError("plan weights and pair differences disagree in length")
    proj = diffs @ U
    denom = np.sqrt(np.einsum("ij,ij->i", proj, proj) + eps * eps)
    coef = w / denom
    return -(diffs.T @ (proj * coef[:, None]))


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def solve_descent_direction(U: np.ndarray, grad: np.ndarray, gamma: float,
                            rho: float, newton_tol: float = 1e-8,
                            newton_max: int = 50) -> tuple[np.ndarray, bool]:
    """Tangent-constrained proximal step via semi-smooth Newton.

    Finds the symmetric multiplier L solving A(V(L)) = 0 with
    V(L) = prox(U - gamma*(grad - 2*U*L)) - U and A(V) = V^T U + U^T V,
    where prox is entrywise soft-thresholding at gamma*rho.  The Clarke
    generalised Jacobian uses the 0/1 activity mask of the threshold; the
    dense k(k+1)/2 system is Tikhonov-damped when singular.

    Returns the direction of the best-residual iterate and a convergence
    flag (residual below ``newton_tol``).
    """
    U = np.asarray(U, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    d, k = U.shape
    t = gamma * rho

    def evaluate(lam):
        B = U - gamma * (grad - 2.0 * (U @ lam))
        V = soft_threshold(B, t) - U
        R = V.T @ U + U.T @ V
        return B, V, R

    lam = 0.5 * _sym(U.T @ grad)
    B, V, R = evaluate(lam)
    res = np.linalg.norm(R)
    best_v, best_res = V, res

    iu, ju = np.triu_indices(k)
    q = iu.size
    jac = np.empty((q, q))
    for _ in range(newton_max):
        if best_res <= newton_tol:
            break
        mask = (np.abs(B) > t).astype(np.float64)
        for col, (a, b) in enumerate(zip(iu, ju)):
            # dB for the symmetric basis element E_ab touches columns a, b only
            m_rows = np.zeros((k, k))
            if a == b:
                m_rows[a, :] = (2.0 * gamma * mask[:, a] * U[:, a]) @ U
            else:
                m_rows[a, :] = (2.0 * gamma * mask[:, a] * U[:, b]) @ U
                m_rows[b, :] = (2.0 * gamma * mask[:, b] * U[:, a]) @ U
            dR = m_rows + m_rows.T
            jac[:, col] = dR[iu, ju]
        rhs = -R[iu, ju]
        try:
            step = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            damped = jac + 1e-10 * np.eye(q)
            try:
                step = np.linalg.solve(damped, rhs)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(jac, rhs, rcond=None)[0]
        d_lam = np.zeros((k, k))
        d_lam[iu, ju] = step
        d_lam = d_lam + d_lam.T - np.diag(np.diag(d_lam))

        scale = 1.0
        improved = False
        for _ in range(6):
            cand = lam + scale * d_lam
            Bc, Vc, Rc = evaluate(cand)
            rc = np.linalg.norm(Rc)
            if rc < res:
                lam, B, V, R, res = cand, Bc, Vc, Rc, rc
                improved = True
                break
            scale *= 0.5
        if not improved:
            lam, B, V, R = cand, Bc, Vc, Rc
            res = rc
        if res < best_res:
            best_res, best_v = res, V
    return best_v, bool(best_res <= newton_tol)


def retract(U: np.ndarray, V: np.ndarray, r: float = 1.0,
            method: str = "qr") -> np.ndarray:
    """Map the perturbation U + r*V back onto the Stiefel manifold.

    The default is the QR factor with a sign-corrected R diagonal; a
    rank-deficient perturbation falls back to the polar factor.  The
    geodesic (matrix exponential) map is available for tangent V.
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if method == "qr":
        A = U + r * V
        qf, rf = np.linalg.qr(A)
        diag = np.diag(rf)
        floor = 1e-12 * max(1.0, float(np.abs(A).max()))
        if np.any(np.abs(diag) < floor):
            w, _, zt = np.linalg.svd(A, full_matrices=False)
            return w @ zt
        signs = np.where(diag < 0.0, -1.0, 1.0)
        return qf * signs
    if method == "exp":
        from scipy.linalg import expm

        k = U.shape[1]
        qf, rf = np.linalg.qr((np.eye(U.shape[0]) - U @ U.T) @ V)
        block = np.block([[U.T @ V, -rf.T], [rf, np.zeros((k, k))]])
        return np.hstack([U, qf]) @ expm(r * block)[:, :k]
    raise ValueError(f"unknown retraction {method!r}")


def random_stiefel(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal basis of a random Gaussian matrix."""
    mat = rng.standard_normal((d, k))
    qf, rf = np.linalg.qr(mat)
    return qf * np.where(np.diag(rf) < 0.0, -1.0, 1.0)


def heuristic_init(fit_x: np.ndarray, fit_y: np.ndarray, k: int) -> np.ndarray:
    """Warm start spanning the mean shift and the top covariance shifts."""
    d = fit_x.shape[1]
    rows = [fit_x.mean(axis=0) - fit_y.mean(axis=0)]
    if d > 1:
        cov_diff = np.cov(fit_x, rowvar=False, bias=True) - \
            np.cov(fit_y, rowvar=False, bias=True)
        lam, vec = np.linalg.eigh(np.atleast_2d(cov_diff))
        order = np.argsort(-np.abs(lam))
        rows.extend(vec[:, i] for i in order[:k])
    stack = np.vstack(rows)
    # k <= d guarantees svd yields at least k right singular vectors
    _, _, vt = np.linalg.svd(stack, full_matrices=False)
    return vt[:k].T


# ---------------------------------------------------------------------------
# alternating loop
# ---------------------------------------------------------------------------


def _ot_at(fit_x, fit_y, U, warm_basis):
    """Coupling for the projected samples, plus support pairs for gradients."""
    px = fit_x @ U
    py = fit_y @ U
    if U.shape[1] == 1:
        plan = quantile_coupling(px.ravel(), py.ravel())
    else:
        plan = solve_discrete_ot(cdist(px, py), warm_basis=warm_basis)
    rows, cols, w = plan.nonzeros
    return plan, fit_x[rows] - fit_y[cols], w


def _fixed_plan_state(U, diffs, w, rho) -> ObjectiveState:
    proj = diffs @ U
    cost = float(w @ np.sqrt(np.einsum("ij,ij->i", proj, proj)))
    pen = rho * l1_norm(U)
    return ObjectiveState(total=-cost + pen, smooth=-cost, penalty=pen)


def _estimate_gamma(U0, w, diffs, eps):
    """1 / (power-iteration bound on the local gradient Lipschitz constant)."""
    proj = diffs @ U0
    denom = np.sqrt(np.einsum("ij,ij->i", proj, proj) + eps * eps)
    coef = w / denom
    x = np.ones(diffs.shape[1]) / np.sqrt(diffs.shape[1])
    lam = 0.0
    for _ in range(30):
        y = diffs.T @ (coef * (diffs @ x))
        lam = np.linalg.norm(y)
        if lam <= 1e-30:
            break
        x = y / lam
    if not np.isfinite(lam) or lam <= 1e-12:
        return 0.1
    return 1.0 / lam


def _manpg_single(fit_x, fit_y, U0, rho, opts: ManPGOptions) -> tuple[np.ndarray, ManPGTrace]:
    U = U0.copy()
    trace = ManPGTrace()
    basis = None
    eps = opts.grad_smoothing

    plan, diffs, w = _ot_at(fit_x, fit_y, U, basis)
    basis = plan.basis
    gamma = opts.step_size or _estimate_gamma(U, w, diffs, eps)
    trace.gamma = gamma

    # the coupling refreshes between steps, so the per-step descent need
    # not be monotone in the true objective; keep the best visited iterate
    best_u = U.copy()
    best_obj = -plan.value + rho * l1_norm(U)
    best_value = plan.value

    stop_reason = "max_outer"
    for it in range(opts.max_outer):
        if it > 0:
            plan, diffs, w = _ot_at(fit_x, fit_y, U, basis)
            basis = plan.basis
            obj = -plan.value + rho * l1_norm(U)
            if obj < best_obj:
                best_u, best_obj, best_value = U.copy(), obj, plan.value
        state = _fixed_plan_state(U, diffs, w, rho)
        if not np.isfinite(state.total):
            raise RuntimeError(
                f"non-finite objective at outer iteration {it}: {state}")
        grad = smoothed_cost_grad(U, w, diffs, eps)
        V, newton_ok = solve_descent_direction(
            U, grad, gamma, rho, opts.newton_tol, opts.newton_max)
        v_norm = float(np.linalg.norm(V))
        if v_norm <= 1e-14:
            trace.records.append(IterationRecord(
                it, state.total, state.total, state.smooth, state.penalty,
                0.0, v_norm, newton_ok))
            stop_reason = "stationary"
            trace.converged = True
            break

        r = 1.0
        accepted = False
        for _ in range(opts.max_backtracks):
            U_new = retract(U, V, r)
            new_state = _fixed_plan_state(U_new, diffs, w, rho)
            if new_state.total <= state.total - opts.armijo_slope * r * v_norm ** 2:
                accepted = True
                break
            r *= opts.armijo_shrink
        if not accepted:
            trace.records.append(IterationRecord(
                it, state.total, state.total, state.smooth, state.penalty,
                0.0, v_norm, newton_ok))
            stop_reason = "line_search_stalled"
            break

        rel_change = float(np.linalg.norm(U_new - U) / (1.0 + np.linalg.norm(U)))
        trace.records.append(IterationRecord(
            it, state.total, new_state.total, new_state.smooth,
            new_state.penalty, r, v_norm, newton_ok))
        U = U_new
        if rel_change <= opts.tol:
            stop_reason = "tol"
            trace.converged = True
            break

    final_plan, _, _ = _ot_at(fit_x, fit_y, U, basis)
    final_obj = -final_plan.value + rho * l1_norm(U)
    if final_obj < best_obj:
        best_u, best_obj, best_value = U, final_obj, final_plan.value
    trace.value = best_value
    trace.l1_norm = l1_norm(best_u)
    trace.objective = best_obj
    trace.stop_reason = stop_reason
    return best_u, trace


def _validate_fit_inputs(fit_x, fit_y, k):
    fit_x = np.atleast_2d(np.asarray(fit_x, dtype=np.float64))
    fit_y = np.atleast_2d(np.asarray(fit_y, dtype=np.float64))
    if fit_x.shape[0] < 2 or fit_y.shape[0] < 2:
        raise ValueError("need at least two fit points per sample")
    if fit_x.shape[1] != fit_y.shape[1]:
        raise ValueError("samples live in different dimensions")
    if not (np.all(np.isfinite(fit_x)) and np.all(np.isfinite(fit_y))):
        raise ValueError("fit data must be finite")
    d = fit_x.shape[1]
    if not 1 <= k <= d:
        raise ValueError(f"projection dimension k={k} must lie in [1, {d}]")
    return fit_x, fit_y


def manpg_fit_projection(fit_x, fit_y, k: int, rho: float = 0.0,
                         opts: ManPGOptions = None, seed: int = 0,
                         trace_path: str = None) -> tuple[np.ndarray, ManPGTrace]:
    """Estimate the discriminative projection by the alternating solver.

    Runs the heuristic warm start plus ``opts.n_random_restarts`` random
    orthonormal restarts and keeps the lowest penalised objective.
    """
    fit_x, fit_y = _validate_fit_inputs(fit_x, fit_y, k)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    opts = opts or ManPGOptions()
    d = fit_x.shape[1]

    inits = [heuristic_init(fit_x, fit_y, k)]
    rng = np.random.default_rng(seed)
    inits.extend(random_stiefel(d, k, rng) for _ in range(opts.n_random_restarts))

    best = None
    objectives = []
    for U0 in inits:
        U, trace = _manpg_single(fit_x, fit_y, U0, rho, opts)
        objectives.append(trace.objective)
        if best is None or trace.objective < best[1].objective - 1e-15:
            best = (U, trace)
    best[1].restart_objectives = objectives
    if trace_path is not None:
        best[1].dump(trace_path)
    return best


# ---------------------------------------------------------------------------
# l0 variant: penalty ladder plus pruning
# ---------------------------------------------------------------------------


def _keep_top_entries(U: np.ndarray, budget: int) -> np.ndarray:
    d, k = U.shape
    flat = np.abs(U).ravel()
    rows, cols = np.divmod(np.arange(flat.size), k)
    order = np.lexsort((cols, rows, -flat))
    out = np.zeros_like(U).ravel()
    keep = order[:budget]
    out[keep] = U.ravel()[keep]
    return out.reshape(d, k)


def _qr_with_retry(M: np.ndarray) -> np.ndarray:
    for attempt in range(2):
        qf, rf = np.linalg.qr(M)
        diag = np.diag(rf)
        if np.all(np.abs(diag) > 1e-10 * max(1.0, float(np.abs(M).max()))):
            return qf * np.where(diag < 0.0, -1.0, 1.0)
        # deterministic tie-break perturbation, then retry once
        d, k = M.shape
        bump = 1e-12 * (1.0 + np.arange(d * k).reshape(d, k))
        M = M + bump
    raise ValueError("pruned matrix is persistently rank deficient")


def _disjoint_support_projection(U: np.ndarray, budget: int) -> np.ndarray:
    """Exact-feasibility pass: per-column disjoint row supports, renormalised."""
    d, k = U.shape
    flat = np.abs(U).ravel()
    rows, cols = np.divmod(np.arange(flat.size), k)
    order = np.lexsort((cols, rows, -flat))
    row_owner = np.full(d, -1)
    col_filled = np.zeros(k, dtype=bool)
    chosen = []
    count = 0
    for idx in order:
        r, c = int(rows[idx]), int(cols[idx])
        if row_owner[r] not in (-1, c):
            continue
        empty_after = int(np.sum(~col_filled)) - (0 if col_filled[c] else 1)
        if count + 1 + empty_after > budget:
            continue
        row_owner[r] = c
        col_filled[c] = True
        chosen.append((r, c))
        count += 1
        if count == budget:
            break
    out = np.zeros_like(U)
    for r, c in chosen:
        out[r, c] = U[r, c]
    for c in range(k):
        norm = np.linalg.norm(out[:, c])
        if norm > 0:
            out[:, c] /= norm
        else:
            free = np.nonzero(row_owner == -1)[0]
            if free.size == 0:
                raise ValueError("no disjoint support available for every column")
            out[free[0], c] = 1.0
            row_owner[free[0]] = c
    return out


def prune_and_orthonormalize(U: np.ndarray, budget: int,
                             rounds: int = 5) -> np.ndarray:
    """Sparsify to at most ``budget`` nonzeros while staying orthonormal.

    Alternates hard thresholding with QR re-orthonormalisation; if the QR
    step keeps re-densifying past the budget, finishes with a disjoint
    per-column support selection that is orthonormal by construction.
    """
    U = np.asarray(U, dtype=np.float64)
    d, k = U.shape
    if not k <= budget <= k * d:
        raise ValueError(f"budget must lie in [{k}, {k * d}]")
    if budget == k * d:
        return U.copy()
    work = U.copy()
    for _ in range(rounds):
        try:
            work = _qr_with_retry(_keep_top_entries(work, budget))
        except ValueError:
            # budget too tight for QR to see full rank; the disjoint pass
            # below assigns every column its own row support
            break
        dense = np.count_nonzero(np.abs(work) > 0.0)
        if dense <= budget:
            return work
    return _disjoint_support_projection(work, budget)


def default_rho_ladder(fit_x: np.ndarray, fit_y: np.ndarray,
                       count: int = 8) -> np.ndarray:
    """Log-spaced penalties from 1e-3 up to the largest pair distance."""
    fit_x = np.atleast_2d(fit_x)
    fit_y = np.atleast_2d(fit_y)
    top = float(cdist(fit_x, fit_y).max())
    return np.geomspace(1e-3, max(top, 1e-2), count)


@dataclass
class L0Trace:
    rho_ladder: list
    candidate_values: list     # projected W1 on fit data per pruned candidate
    chosen_index: int
    fallback: bool = False


def l0_fit_projection(fit_x, fit_y, k: int, budget: int,
                      rho_ladder=None, opts: ManPGOptions = None, seed: int = 0,
                      prune_rounds: int = 5,
                      fit_cache: dict = None) -> tuple[np.ndarray, L0Trace]:
    """Hard-sparsity estimate via an l1 ladder followed by pruning.

    ``fit_cache`` (rho -> fitted projection) lets callers share the ladder
    solves across several budgets at the same k.
    """
    fit_x, fit_y = _validate_fit_inputs(fit_x, fit_y, k)
    d = fit_x.shape[1]
    if not k <= budget <= k * d:
        raise ValueError(f"budget must lie in [{k}, {k * d}]")
    if rho_ladder is None:
        rho_ladder = default_rho_ladder(fit_x, fit_y)
    rho_ladder = [float(r) for r in rho_ladder]
    if not rho_ladder:
        raise ValueError("rho ladder must be nonempty")
    opts = opts or ManPGOptions()

    values = []
    candidates = []
    for rho in rho_ladder:
        if fit_cache is not None and rho in fit_cache:
            U_rho = fit_cache[rho]
        else:
            U_rho, _ = manpg_fit_projection(fit_x, fit_y, k, rho=rho,
                                            opts=opts, seed=seed)
            if fit_cache is not None:
                fit_cache[rho] = U_rho
        try:
            pruned = prune_and_orthonormalize(U_rho, budget, rounds=prune_rounds)
            value = empirical_projected_w1(fit_x, fit_y, pruned)
        except ValueError:
            pruned, value = None, -np.inf
        candidates.append(pruned)
        values.append(value)

    best = int(np.argmax(values))
    if candidates[best] is None:
        warnings.warn("every pruned candidate was infeasible; "
                      "falling back to a coordinate-selection projection")
        fallback = prune_and_orthonormalize(
            heuristic_init(fit_x, fit_y, k), k, rounds=prune_rounds)
        return fallback, L0Trace(rho_ladder, values, -1, fallback=True)
    return candidates[best], L0Trace(rho_ladder, values, best)
