"""ReLU witness networks trained to maximise a projected mean difference.

The network is a plain multilayer perceptron with hand-written reverse-mode
gradients, an adaptive-moment ascent loop, and spectral normalisation of
every weight matrix (one persistent-vector power iteration per update) so
the learned score stays close to 1-Lipschitz.  Outputs are clamped to
[-B, B].

The training objective for projected samples PX, PY is

    mean_i f(PX_i) - mean_j f(PY_j),

maximised over the network parameters; the returned network is the best
iterate seen, not the last one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NetworkArchitecture",
    "TrainOptions",
    "WitnessNetwork",
    "default_hidden_width",
    "default_output_bound",
    "mlp_forward",
    "spectral_normalize",
    "witness_objective",
    "witness_gradients",
    "train_witness",
]

# hidden-width anchors: (input dim, width) pairs interpolated piecewise
_WIDTH_ANCHORS = ((1, 50), (5, 150), (10, 250))


def default_hidden_width(k: int) -> int:
    """Hidden-layer width for projection dimension k (piecewise linear)."""
    if k <= 1:
        return 50
    for (k0, w0), (k1, w1) in zip(_WIDTH_ANCHORS, _WIDTH_ANCHORS[1:]):
        if k <= k1:
            return round(w0 + (w1 - w0) * (k - k0) / (k1 - k0))
    k1, w1 = _WIDTH_ANCHORS[-1]
    return round(w1 + 20 * (k - k1))


def default_output_bound(proj_fit: np.ndarray) -> float:
    """Output clamp level: 4 * sqrt(k) * largest projected coordinate."""
    proj_fit = np.atleast_2d(proj_fit)
    k = proj_fit.shape[1]
    peak = float(np.max(np.abs(proj_fit))) if proj_fit.size else 1.0
    return 4.0 * math.sqrt(k) * max(peak, 1e-12)


@dataclass(frozen=True)
class NetworkArchitecture:
    """Layer widths (p0, ..., p_{D+1}) and the output clamp B."""

    widths: tuple
    output_bound: float

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("architecture needs input and output widths")
        if widths[-1] != 1:
            raise ValueError("output width must be 1")
        if any(w < 1 for w in widths):
            raise ValueError("every width must be >= 1")
        if not self.output_bound > 0:
            raise ValueError("output bound must be positive")
        object.__setattr__(self, "widths", widths)

    @property
    def depth(self) -> int:
        """Number of hidden layers."""
        return len(self.widths) - 2

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @classmethod
    def default(cls, k: int, output_bound: float, depth: int = 3) -> "NetworkArchitecture":
        w = default_hidden_width(k)
        return cls(widths=(k,) + (w,) * depth + (1,), output_bound=output_bound)


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 300
    batch_size: int = None  # None: full batch up to 512 fit points, else 128
    learning_rate: float = 1e-3
    seed: int = 0
    power_iterations: int = 1
    warmup_iterations: int = 20

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


class WitnessNetwork:
    """MLP parameters plus the persistent spectral-normalisation state."""

    def __init__(self, arch: NetworkArchitecture, seed: int = 0):
        self.arch = arch
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        self.sn_vectors = []
        for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
            u = rng.standard_normal(fan_out)
            self.sn_vectors.append(u / np.linalg.norm(u))

    @property
    def output_bound(self) -> float:
        return self.arch.output_bound

    # -- forward ------------------------------------------------------------

    def forward(self, z: np.ndarray) -> np.ndarray:
        """Evaluate the clamped network; accepts a vector or a batch."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        h = z[None, :] if single else z
        if h.shape[1] != self.arch.input_dim:
            raise ValueError(
                f"input has dimension {h.shape[1]}, network expects {self.arch.input_dim}")
        for a, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ a.T + b, 0.0)
        out = (h @ self.weights[-1].T + self.biases[-1]).ravel()
        out = np.clip(out, -self.output_bound, self.output_bound)
        return float(out[0]) if single else out

    # -- persistence ----------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "widths": list(self.arch.widths),
            "output_bound": self.arch.output_bound,
            "seed": self.seed,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "sn_vectors": [u.tolist() for u in self.sn_vectors],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "WitnessNetwork":
        arch = NetworkArchitecture(widths=tuple(payload["widths"]),
                                   output_bound=payload["output_bound"])
        net = cls(arch, seed=payload["seed"])
        net.weights = [np.array(w, dtype=np.float64) for w in payload["weights"]]
        net.biases = [np.array(b, dtype=np.float64) for b in payload["biases"]]
        net.sn_vectors = [np.array(u, dtype=np.float64) for u in payload["sn_vectors"]]
        return net

    def save(self, path: str) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_json_dict(), handle)

    @classmethod
    def load(cls, path: str) -> "WitnessNetwork":
        with open(path) as handle:
            return cls.from_json_dict(json.load(handle))


def mlp_forward(net: WitnessNetwork, z: np.ndarray):
    """Functional alias for ``net.forward``."""
    return net.forward(z)


def spectral_normalize(net: WitnessNetwork) -> None:
    """Divide each weight matrix by its estimated top singular value.

    One power-iteration update per call; the left vectors persist on the
    network, so repeated calls sharpen the estimate.
    """
    for idx, a in enumerate(net.weights):
        u = net.sn_vectors[idx]
        v = a.T @ u
        nv = np.linalg.norm(v)
        if nv <= 0.0:
            continue  # zero matrix: nothing to normalise
        v /= nv
        au = a @ v
        nu = np.linalg.norm(au)
        if nu <= 0.0:
            continue
        u = au / nu
        sigma = float(u @ a @ v)
        if sigma > 0.0:
            net.weights[idx] = a / sigma
        net.sn_vectors[idx] = u


def _exact_spectral_clip(net: WitnessNetwork, slack: float = 1e-9) -> None:
    # final tightening: the power-iteration estimate can lag a whisker
    # behind the true norm, so rescale against exact SVD once at the end
    for idx, a in enumerate(net.weights):
        sigma = float(np.linalg.norm(a, 2))
        if sigma > 1.0 + slack:
            net.weights[idx] = a / sigma


def witness_objective(net: WitnessNetwork, proj_x: np.ndarray, proj_y: np.ndarray) -> float:
    """Mean network output over projected X minus the mean over projected Y."""
    proj_x = np.atleast_2d(proj_x)
    proj_y = np.atleast_2d(proj_y)
    if proj_x.shape[0] == 0 or proj_y.shape[0] == 0:
        raise ValueError("both projected samples must be nonempty")
    return float(np.mean(net.forward(proj_x)) - np.mean(net.forward(proj_y)))


def witness_gradients(net: WitnessNetwork, proj_x: np.ndarray, proj_y: np.ndarray):
    """Objective value and its reverse-mode parameter gradients.

    Returns (objective, weight_grads, bias_grads).  The clamp contributes a
    zero gradient outside (-B, B); ReLU uses the right derivative at 0.
    """
    px = np.atleast_2d(np.asarray(proj_x, dtype=np.float64))
    py = np.atleast_2d(np.asarray(proj_y, dtype=np.float64))
    z = np.vstack([px, py])
    w = np.concatenate([np.full(px.shape[0], 1.0 / px.shape[0]),
                        np.full(py.shape[0], -1.0 / py.shape[0])])

    hs = [z]
    pre = []
    h = z
    for a, b in zip(net.weights[:-1], net.biases[:-1]):
        s = h @ a.T + b
        pre.append(s)
        h = np.maximum(s, 0.0)
        hs.append(h)
    raw = (h @ net.weights[-1].T + net.biases[-1]).ravel()
    clipped = np.clip(raw, -net.output_bound, net.output_bound)
    objective = float(w @ clipped)

    g = (w * (np.abs(raw) < net.output_bound))[:, None]
    weight_grads = [None] * len(net.weights)
    bias_grads = [None] * len(net.biases)
    weight_grads[-1] = g.T @ hs[-1]
    bias_grads[-1] = g.sum(axis=0)
    for ell in range(len(net.weights) - 2, -1, -1):
        g = (g @ net.weights[ell + 1]) * (pre[ell] > 0.0)
        weight_grads[ell] = g.T @ hs[ell]
        bias_grads[ell] = g.sum(axis=0)
    return objective, weight_grads, bias_grads


def _snapshot(net: WitnessNetwork) -> tuple:
    return ([w.copy() for w in net.weights], [b.copy() for b in net.biases],
            [u.copy() for u in net.sn_vectors])


def _restore(net: WitnessNetwork, snap: tuple) -> None:
    net.weights, net.biases, net.sn_vectors = (
        [w.copy() for w in snap[0]], [b.copy() for b in snap[1]],
        [u.copy() for u in snap[2]])


def _train_once(px, py, arch, opts) -> WitnessNetwork:
    net = WitnessNetwork(arch, seed=opts.seed)
    for _ in range(opts.warmup_iterations):
        spectral_normalize(net)

    n_fit = px.shape[0] + py.shape[0]
    if opts.batch_size is not None:
        batch = opts.batch_size
    else:
        batch = None if n_fit <= 512 else 128

    lr = opts.learning_rate
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_w = [np.zeros_like(w) for w in net.weights]
    v_w = [np.zeros_like(w) for w in net.weights]
    m_b = [np.zeros_like(b) for b in net.biases]
    v_b = [np.zeros_like(b) for b in net.biases]
    step = 0

    rng = np.random.default_rng(opts.seed + 1)
    best_val = witness_objective(net, px, py)
    best = _snapshot(net)

    for _ in range(opts.epochs):
        if batch is None:
            chunks = [(px, py)]
        else:
            ix = rng.permutation(px.shape[0])
            iy = rng.permutation(py.shape[0])
            n_chunks = max(int(np.ceil(px.shape[0] / batch)),
                           int(np.ceil(py.shape[0] / batch)))
            chunks = []
            for c in range(n_chunks):
                # the shorter sample cycles through its permutation
                sel_x = ix[np.arange(c * batch, (c + 1) * batch) % px.shape[0]]
                sel_y = iy[np.arange(c * batch, (c + 1) * batch) % py.shape[0]]
                chunks.append((px[sel_x], py[sel_y]))
        for bx, by in chunks:
            val, gw, gb = witness_gradients(net, bx, by)
            if not math.isfinite(val):
                raise FloatingPointError("non-finite training objective")
            step += 1
            corr1 = 1.0 - beta1 ** step
            corr2 = 1.0 - beta2 ** step
            for i in range(len(net.weights)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * gw[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * gw[i] ** 2
                net.weights[i] += lr * (m_w[i] / corr1) / (np.sqrt(v_w[i] / corr2) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * gb[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * gb[i] ** 2
                net.biases[i] += lr * (m_b[i] / corr1) / (np.sqrt(v_b[i] / corr2) + eps)
            for _ in range(opts.power_iterations):
                spectral_normalize(net)
        epoch_val = witness_objective(net, px, py)
        if not math.isfinite(epoch_val):
            raise FloatingPointError("non-finite training objective")
        if epoch_val > best_val:
            best_val = epoch_val
            best = _snapshot(net)

    _restore(net, best)
    for _ in range(30):
        spectral_normalize(net)
    _exact_spectral_clip(net)
    return net


def train_witness(fit_x: np.ndarray, fit_y: np.ndarray, projection: np.ndarray,
                  arch: NetworkArchitecture = None,
                  opts: TrainOptions = None) -> WitnessNetwork:
    """Project the fit data through ``projection`` and train a witness on it.

    The best-objective iterate is returned.  A non-finite objective during
    training triggers one retry from a shifted seed before giving up.
    """
    fit_x = np.atleast_2d(np.asarray(fit_x, dtype=np.float64))
    fit_y = np.atleast_2d(np.asarray(fit_y, dtype=np.float64))
    if fit_x.shape[0] < 2 or fit_y.shape[0] < 2:
        raise ValueError("need at least two fit points per sample")
    projection = np.asarray(projection, dtype=np.float64)
    if projection.ndim == 1:
        projection = projection[:, None]
    px = fit_x @ projection
    py = fit_y @ projection
    opts = opts or TrainOptions()
    if arch is None:
        bound = default_output_bound(np.vstack([px, py]))
        arch = NetworkArchitecture.default(projection.shape[1], bound)
    try:
        return _train_once(px, py, arch, opts)
    except FloatingPointError:
        retry = TrainOptions(epochs=opts.epochs, batch_size=opts.batch_size,
                             learning_rate=opts.learning_rate,
                             seed=opts.seed + 0x9E3779B9,
                             power_iterations=opts.power_iterations,
                             warmup_iterations=opts.warmup_iterations)
        try:
            return _train_once(px, py, arch, retry)
        except FloatingPointError as exc:
            raise RuntimeError(
                "witness training produced a non-finite objective twice; "
                f"widths={arch.widths}, bound={arch.output_bound:.3g}") from exc
