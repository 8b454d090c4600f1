"""Manifold solver: subproblem oracles, retraction, fits, pruning."""

import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nwtest.stiefel import (ManPGOptions, default_rho_ladder, heuristic_init,
                            l0_fit_projection, l1_norm, manpg_fit_projection,
                            prune_and_orthonormalize, random_stiefel, retract,
                            smoothed_cost_grad, soft_threshold,
                            solve_descent_direction)
from nwtest.transport import empirical_projected_w1, projected_w1_bruteforce


def tangent_project(U, V):
    sym = 0.5 * (U.T @ V + V.T @ U)
    return V - U @ sym


# ---------------------------------------------------------------------------
# soft threshold
# ---------------------------------------------------------------------------


def test_soft_threshold_values():
    assert soft_threshold(np.zeros((2, 2)), 3.0) == pytest.approx(np.zeros((2, 2)))
    assert soft_threshold(np.array([3.0]), 1.0) == pytest.approx([2.0])
    assert soft_threshold(np.array([-0.5]), 1.0) == pytest.approx([0.0])
    b = np.array([[1.5, -2.5]])
    assert soft_threshold(b, 0.0) == pytest.approx(b)
    with pytest.raises(ValueError):
        soft_threshold(b, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(0, 100))
def test_soft_threshold_shrinks_towards_zero(b, t):
    out = float(soft_threshold(np.array([b]), t)[0])
    assert abs(out) == pytest.approx(max(abs(b) - t, 0.0), abs=1e-12)
    assert out * b >= 0.0


# ---------------------------------------------------------------------------
# gradient of the smoothed transport cost
# ---------------------------------------------------------------------------


def test_grad_single_aligned_pair():
    U = np.array([[1.0], [0.0]])
    z = np.array([[1.0, 0.0]])
    g = smoothed_cost_grad(U, np.array([1.0]), z, eps=1e-300)
    assert g == pytest.approx(np.array([[-1.0], [0.0]]), abs=1e-12)


def test_grad_zero_plan_is_zero(rng):
    U = random_stiefel(4, 2, rng)
    g = smoothed_cost_grad(U, np.zeros(6), rng.normal(size=(6, 4)))
    assert g == pytest.approx(np.zeros((4, 2)))


def test_grad_matches_finite_differences(rng):
    eps = 1e-12

    def smooth_part(U, w, diffs):
        proj = diffs @ U
        return -float(w @ np.sqrt(np.einsum("ij,ij->i", proj, proj) + eps * eps))

    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 6))
        k = int(rng.integers(1, min(3, d) + 1))
        diffs = rng.normal(size=(int(rng.integers(3, 10)), d))
        w = rng.uniform(0.05, 1.0, size=diffs.shape[0])
        U = random_stiefel(d, k, rng)
        grad = smoothed_cost_grad(U, w, diffs, eps)
        h = 1e-6
        for _ in range(5):
            i, j = int(rng.integers(d)), int(rng.integers(k))
            up, dn = U.copy(), U.copy()
            up[i, j] += h
            dn[i, j] -= h
            fd = (smooth_part(up, w, diffs) - smooth_part(dn, w, diffs)) / (2 * h)
            denom = max(abs(fd), abs(grad[i, j]), 1e-3)
            worst = max(worst, abs(fd - grad[i, j]) / denom)
    assert worst < 1e-5


# ---------------------------------------------------------------------------
# descent direction subproblem
# ---------------------------------------------------------------------------


def test_direction_zero_gradient_smooth_case(rng):
    U = random_stiefel(5, 2, rng)
    V, ok = solve_descent_direction(U, np.zeros((5, 2)), 0.5, rho=0.0)
    assert ok and V == pytest.approx(np.zeros((5, 2)), abs=1e-12)


def test_direction_smooth_case_closed_form(rng):
    for _ in range(15):
        d = int(rng.integers(2, 8))
        k = int(rng.integers(1, min(4, d) + 1))
        U = random_stiefel(d, k, rng)
        g = rng.normal(size=(d, k))
        gamma = float(rng.uniform(0.05, 1.0))
        V, ok = solve_descent_direction(U, g, gamma, rho=0.0)
        sym = 0.5 * (U.T @ g + g.T @ U)
        assert ok
        assert V == pytest.approx(-gamma * (g - U @ sym), abs=1e-9)


def test_direction_matches_grid_on_tangent_line(rng):
    # k=1, d=2: the tangent space is one-dimensional, so grid-search it
    for _ in range(8):
        U = random_stiefel(2, 1, rng)
        g = rng.normal(size=(2, 1))
        gamma, rho = 0.4, float(rng.uniform(0.1, 1.5))
        V, _ = solve_descent_direction(U, g, gamma, rho)
        perp = np.array([[-U[1, 0]], [U[0, 0]]])
        ts = np.linspace(-3.0, 3.0, 200001)
        cand = U + ts[None, :] * perp
        vals = (g.T @ perp).item() * ts + ts ** 2 / (2 * gamma) \
            + rho * np.abs(cand).sum(axis=0)
        t_best = ts[np.argmin(vals)]
        assert V == pytest.approx(t_best * perp, abs=1e-3)


# ---------------------------------------------------------------------------
# retraction
# ---------------------------------------------------------------------------


def test_retract_zero_step_is_identity(rng):
    U = random_stiefel(6, 3, rng)
    assert retract(U, np.zeros((6, 3)), 0.0) == pytest.approx(U)
    assert retract(U, rng.normal(size=(6, 3)), 0.0) == pytest.approx(U)


def test_retract_two_vector_normalisation():
    U = np.array([[1.0], [0.0]])
    V = np.array([[0.0], [1.0]])
    out = retract(U, V, 0.3)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
    assert out[0, 0] > 0 and out[1, 0] > 0


@pytest.mark.parametrize("method", ["qr", "exp"])
def test_retract_first_order_property(rng, method):
    U = random_stiefel(5, 2, rng)
    V = tangent_project(U, rng.normal(size=(5, 2)))
    errors = []
    for r in (1e-1, 1e-2, 1e-3, 1e-4):
        out = retract(U, V, r, method=method)
        assert np.linalg.norm(out.T @ out - np.eye(2)) <= 1e-10
        errors.append(np.linalg.norm(out - (U + r * V)))
    for a, b in zip(errors, errors[1:]):
        assert a / max(b, 1e-300) > 50.0  # quadratic decay across halvings


def test_retract_rank_deficient_falls_back_to_polar():
    U = np.eye(2)
    V = np.diag([-1.0, 0.0])
    out = retract(U, V, 1.0)  # U + V = diag(0, 1): rank deficient
    assert np.linalg.norm(out.T @ out - np.eye(2)) <= 1e-10


def test_retract_unknown_method():
    with pytest.raises(ValueError):
        retract(np.eye(2), np.zeros((2, 2)), 1.0, method="cayley")


# ---------------------------------------------------------------------------
# the alternating fit
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def shifted_clusters():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 2))
    Y = rng.normal(size=(40, 2))
    Y[:, 0] += 3.0
    return X, Y


def test_fit_mean_shift_matches_bruteforce(shifted_clusters):
    X, Y = shifted_clusters
    U, trace = manpg_fit_projection(X, Y, k=1, rho=0.0, seed=1)
    oracle, _ = projected_w1_bruteforce(X, Y, 1, resolution=2000)
    assert trace.value >= oracle - 1e-3
    assert abs(U[0, 0]) >= 0.99


def test_fit_huge_penalty_gives_coordinate_vectors(shifted_clusters):
    X, Y = shifted_clusters
    ladder_top = default_rho_ladder(X, Y)[-1]
    U, _ = manpg_fit_projection(X, Y, k=1, rho=float(ladder_top) * 2, seed=1)
    assert l1_norm(U) <= 1 + 1e-6


def test_fit_identical_samples_gives_zero(shifted_clusters):
    X, _ = shifted_clusters
    _, trace = manpg_fit_projection(X, X.copy(), k=1, rho=0.0, seed=1)
    assert trace.value == pytest.approx(0.0, abs=1e-12)


def test_l1_norm_reference_values():
    assert l1_norm(np.eye(5)[:, :3]) == pytest.approx(3.0)  # coordinate columns
    d = 9
    dense = np.full((d, 1), 1.0 / np.sqrt(d))
    assert l1_norm(dense) == pytest.approx(np.sqrt(d))


def test_fit_trace_invariants(shifted_clusters):
    X, Y = shifted_clusters
    opts = ManPGOptions(max_outer=60)
    U, trace = manpg_fit_projection(X, Y, k=2, rho=0.05, opts=opts, seed=3)
    assert np.linalg.norm(U.T @ U - np.eye(2)) <= 1e-8
    for rec in trace.records:
        if rec.step > 0:
            # accepted Armijo steps decrease F at fixed plan
            assert rec.f_after <= rec.f_before - \
                opts.armijo_slope * rec.step * rec.v_norm ** 2 + 1e-12
        assert rec.f_after <= rec.f_before + 1e-12
    assert trace.l1_norm == pytest.approx(l1_norm(U), abs=1e-12)
    assert trace.objective == pytest.approx(-trace.value + 0.05 * trace.l1_norm,
                                            abs=1e-9)


def test_fit_trace_dump_format(shifted_clusters, tmp_path):
    X, Y = shifted_clusters
    path = os.path.join(tmp_path, "trace.tsv")
    manpg_fit_projection(X, Y, k=1, rho=0.1, seed=0,
                         opts=ManPGOptions(max_outer=20), trace_path=path)
    lines = open(path).read().splitlines()
    assert lines[0].split("\t") == ["iter", "F", "l", "h", "step", "V_norm"]
    assert len(lines) >= 2
    first = lines[1].split("\t")
    assert len(first) == 6
    assert float(first[1]) == pytest.approx(float(first[2]) + float(first[3]),
                                            abs=1e-9)


def test_penalised_value_no_better_than_unpenalised(shifted_clusters):
    X, Y = shifted_clusters
    _, t0 = manpg_fit_projection(X, Y, k=1, rho=0.0, seed=5)
    _, t1 = manpg_fit_projection(X, Y, k=1, rho=0.5, seed=5)
    assert t0.value >= t1.value - 1e-6


def test_fit_validates_inputs():
    X = np.zeros((1, 3))
    with pytest.raises(ValueError):
        manpg_fit_projection(X, X, k=1)
    X = np.zeros((5, 3))
    with pytest.raises(ValueError):
        manpg_fit_projection(X, X, k=4)
    with pytest.raises(ValueError):
        manpg_fit_projection(X, X, k=1, rho=-0.1)


def test_heuristic_init_is_orthonormal(rng):
    X = rng.normal(size=(30, 6))
    Y = rng.normal(size=(25, 6)) + 0.2
    for k in (1, 3, 6):
        U = heuristic_init(X, Y, k)
        assert U.shape == (6, k)
        assert np.linalg.norm(U.T @ U - np.eye(k)) <= 1e-10


# ---------------------------------------------------------------------------
# pruning and the l0 variant
# ---------------------------------------------------------------------------


def test_prune_full_budget_is_identity(rng):
    U = random_stiefel(6, 2, rng)
    assert prune_and_orthonormalize(U, 12) == pytest.approx(U)


def test_prune_minimal_budget_gives_coordinate_columns(rng):
    for _ in range(10):
        U = random_stiefel(7, 3, rng)
        P = prune_and_orthonormalize(U, 3)
        assert np.count_nonzero(P) == 3
        rows = {int(np.nonzero(P[:, c])[0][0]) for c in range(3)}
        assert len(rows) == 3
        assert sorted(np.abs(P[P != 0.0])) == pytest.approx([1.0, 1.0, 1.0])


@pytest.mark.parametrize("d,k,budget", [(5, 1, 2), (8, 2, 5), (10, 3, 7),
                                        (12, 4, 30), (6, 2, 12)])
def test_prune_contract(rng, d, k, budget):
    U = random_stiefel(d, k, rng)
    P = prune_and_orthonormalize(U, budget)
    assert np.count_nonzero(P) <= budget
    assert np.linalg.norm(P.T @ P - np.eye(k)) <= 1e-8


def test_prune_rejects_bad_budget(rng):
    U = random_stiefel(5, 2, rng)
    with pytest.raises(ValueError):
        prune_and_orthonormalize(U, 1)
    with pytest.raises(ValueError):
        prune_and_orthonormalize(U, 11)


def test_l0_full_budget_zero_ladder_equals_manpg(shifted_clusters):
    X, Y = shifted_clusters
    U_l0, _ = l0_fit_projection(X, Y, k=1, budget=2, rho_ladder=[0.0], seed=2)
    U_pg, _ = manpg_fit_projection(X, Y, k=1, rho=0.0, seed=2)
    assert U_l0 == pytest.approx(U_pg)


def test_l0_unit_budget_selects_shift_axis(shifted_clusters):
    X, Y = shifted_clusters
    U, trace = l0_fit_projection(X, Y, k=1, budget=1, seed=2)
    assert np.count_nonzero(U) == 1
    assert abs(U[0, 0]) == pytest.approx(1.0)
    assert np.linalg.norm(U.T @ U - np.eye(1)) <= 1e-8
    assert not trace.fallback


def test_l0_returns_argmax_candidate(shifted_clusters):
    X, Y = shifted_clusters
    U, trace = l0_fit_projection(X, Y, k=1, budget=1, seed=2)
    chosen = trace.candidate_values[trace.chosen_index]
    assert chosen == max(trace.candidate_values)
    assert chosen == pytest.approx(empirical_projected_w1(X, Y, U), abs=1e-9)
