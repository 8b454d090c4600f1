"""Witness networks: forward contract, gradients, normalisation, training."""

import json

import numpy as np
import pytest

from nwtest.witness import (NetworkArchitecture, TrainOptions, WitnessNetwork,
                            default_hidden_width, default_output_bound,
                            mlp_forward, spectral_normalize, train_witness,
                            witness_gradients, witness_objective)


def make_net(widths, bound=50.0, seed=0):
    return WitnessNetwork(NetworkArchitecture(widths=widths, output_bound=bound),
                          seed=seed)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def test_forward_zero_network_outputs_zero(rng):
    net = make_net((3, 5, 1))
    for w in net.weights:
        w[:] = 0.0
    for z in rng.normal(size=(10, 3)):
        assert net.forward(z) == 0.0


def test_forward_affine_identity():
    net = make_net((1, 1), bound=10.0)
    net.weights[0][:] = 1.0
    net.biases[0][:] = 0.0
    assert mlp_forward(net, np.array([3.0])) == pytest.approx(3.0)


def test_forward_respects_clamp(rng):
    net = make_net((2, 8, 1), bound=0.5, seed=1)
    net.biases[-1][:] = 100.0  # force saturation
    out = net.forward(rng.normal(size=(50, 2)))
    assert np.all(np.abs(out) <= 0.5)


def test_forward_dimension_mismatch():
    net = make_net((3, 4, 1))
    with pytest.raises(ValueError):
        net.forward(np.zeros(2))


def test_default_widths_follow_anchors():
    assert default_hidden_width(1) == 50
    assert default_hidden_width(5) == 150
    assert default_hidden_width(10) == 250
    assert 50 < default_hidden_width(3) < 150


def test_default_output_bound_scales_with_range():
    proj = np.array([[2.0], [-3.0]])
    assert default_output_bound(proj) == pytest.approx(12.0)


# ---------------------------------------------------------------------------
# spectral normalisation
# ---------------------------------------------------------------------------


def test_spectral_fixed_point_after_warmup(rng):
    net = make_net((3, 3, 1), seed=2)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    net.weights[0] = q.copy()  # exactly norm 1
    for _ in range(25):
        spectral_normalize(net)
    assert np.abs(net.weights[0] - q).max() <= 1e-6


def test_spectral_diagonal_example():
    net = make_net((2, 2, 1), seed=3)
    net.weights[0] = np.diag([4.0, 1.0])
    for _ in range(30):
        spectral_normalize(net)
    assert np.diag(net.weights[0]) == pytest.approx([1.0, 0.25], abs=1e-6)


def test_spectral_rectangular_vs_svd(rng):
    net = WitnessNetwork(NetworkArchitecture((2, 3, 1), 10.0), seed=4)
    net.weights[0] = rng.normal(size=(3, 2))
    for _ in range(50):
        spectral_normalize(net)
    top = np.linalg.svd(net.weights[0], compute_uv=False)[0]
    assert 0.999 <= top <= 1.001


# ---------------------------------------------------------------------------
# objective and gradients
# ---------------------------------------------------------------------------


def test_objective_identical_samples_is_zero(rng):
    net = make_net((2, 6, 1), seed=5)
    z = rng.normal(size=(20, 2))
    assert witness_objective(net, z, z.copy()) == pytest.approx(0.0, abs=1e-15)


def test_objective_constant_network_is_zero(rng):
    net = make_net((2, 4, 1), seed=6)
    for w in net.weights:
        w[:] = 0.0
    net.biases[-1][:] = 3.0
    assert witness_objective(net, rng.normal(size=(9, 2)),
                             rng.normal(size=(7, 2))) == pytest.approx(0.0)


def test_objective_identity_witness_mean_difference():
    net = make_net((1, 1), bound=10.0)
    net.weights[0][:] = 1.0
    px = np.array([[1.0], [3.0]])
    py = np.array([[0.0], [2.0]])
    assert witness_objective(net, px, py) == pytest.approx(1.0)


def test_gradients_match_finite_differences(rng):
    h = 1e-5
    worst = 0.0
    for seed in range(10):
        r = np.random.default_rng(seed)
        net = make_net((3, 7, 5, 1), bound=50.0, seed=seed)
        px = r.normal(size=(6, 3))
        py = r.normal(size=(5, 3))
        _, gw, gb = witness_gradients(net, px, py)
        for li in range(len(net.weights)):
            for arr, grads in ((net.weights, gw), (net.biases, gb)):
                flat = arr[li].ravel()
                for idx in range(0, flat.size, max(1, flat.size // 11)):
                    orig = flat[idx]
                    flat[idx] = orig + h
                    up = witness_objective(net, px, py)
                    flat[idx] = orig - h
                    dn = witness_objective(net, px, py)
                    flat[idx] = orig
                    fd = (up - dn) / (2 * h)
                    g = grads[li].ravel()[idx]
                    worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-3))
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_training_two_point_problem_approaches_w1():
    fx = np.full((20, 1), 1.0)
    fy = np.full((20, 1), -1.0)
    net = train_witness(fx, fy, np.array([[1.0]]),
                        arch=NetworkArchitecture.default(1, 4.0),
                        opts=TrainOptions(epochs=1500, seed=5))
    obj = witness_objective(net, fx, fy)
    assert 1.8 <= obj <= 2.0


def test_training_identical_multisets_near_zero(rng):
    z = rng.normal(size=(500, 2))
    net = train_witness(z, z.copy(), np.eye(2), opts=TrainOptions(epochs=40, seed=1))
    assert abs(witness_objective(net, z, z.copy())) <= 0.05


def test_training_best_iterate_no_worse_than_initial(rng):
    fx = rng.normal(size=(40, 2)) + 0.8
    fy = rng.normal(size=(40, 2))
    opts = TrainOptions(epochs=60, seed=11)
    trained = train_witness(fx, fy, np.eye(2), opts=opts)
    fresh = WitnessNetwork(trained.arch, seed=opts.seed)
    for _ in range(opts.warmup_iterations):
        spectral_normalize(fresh)
    assert witness_objective(trained, fx, fy) >= \
        witness_objective(fresh, fx, fy) - 1e-9


def test_training_is_deterministic(rng):
    fx = rng.normal(size=(30, 2))
    fy = rng.normal(size=(30, 2)) + 0.3
    a = train_witness(fx, fy, np.eye(2), opts=TrainOptions(epochs=30, seed=9))
    b = train_witness(fx, fy, np.eye(2), opts=TrainOptions(epochs=30, seed=9))
    for wa, wb in zip(a.weights, b.weights):
        assert (wa == wb).all()
    for ba, bb in zip(a.biases, b.biases):
        assert (ba == bb).all()


def test_training_minibatch_path(rng):
    fx = rng.normal(size=(600, 1)) + 1.0
    fy = rng.normal(size=(600, 1))
    net = train_witness(fx, fy, np.array([[1.0]]),
                        opts=TrainOptions(epochs=5, seed=2))
    assert witness_objective(net, fx, fy) > 0.0


def test_trained_network_is_lipschitz(rng):
    fx = rng.normal(size=(60, 2)) + 1.0
    fy = rng.normal(size=(60, 2))
    net = train_witness(fx, fy, np.eye(2), opts=TrainOptions(epochs=120, seed=3))
    for w in net.weights:
        assert np.linalg.norm(w, 2) <= 1.001
    lo = min(fx.min(), fy.min())
    hi = max(fx.max(), fy.max())
    z1 = rng.uniform(lo, hi, size=(1000, 2))
    z2 = rng.uniform(lo, hi, size=(1000, 2))
    gaps = np.abs(net.forward(z1) - net.forward(z2))
    dists = np.linalg.norm(z1 - z2, axis=1)
    assert np.all(gaps <= (1.0 + 1e-2) * dists + 1e-12)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_save_load_round_trip_is_bit_exact(rng, tmp_path):
    fx = rng.normal(size=(20, 2))
    fy = rng.normal(size=(20, 2)) + 0.5
    net = train_witness(fx, fy, np.eye(2), opts=TrainOptions(epochs=20, seed=8))
    path = tmp_path / "net.json"
    net.save(str(path))
    loaded = WitnessNetwork.load(str(path))
    for wa, wb in zip(net.weights, loaded.weights):
        assert (wa == wb).all()
    for ba, bb in zip(net.biases, loaded.biases):
        assert (ba == bb).all()
    assert loaded.arch == net.arch
    # a second encode round trips identically
    assert json.dumps(net.to_json_dict()) == json.dumps(loaded.to_json_dict())


def test_architecture_validation():
    with pytest.raises(ValueError):
        NetworkArchitecture(widths=(3,), output_bound=1.0)
    with pytest.raises(ValueError):
        NetworkArchitecture(widths=(3, 4, 2), output_bound=1.0)
    with pytest.raises(ValueError):
        NetworkArchitecture(widths=(3, 4, 1), output_bound=0.0)
    with pytest.raises(ValueError):
        TrainOptions(epochs=0)
