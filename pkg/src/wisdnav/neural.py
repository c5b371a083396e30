"""Small numpy MLPs with exact reverse-mode gradients, Adam, and a tanh-squashed
Gaussian policy head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatch
from .kinematics import BodyTwist, RobotGeometry

LOG_2PI = math.log(2.0 * math.pi)
SIGMA_MIN, SIGMA_MAX = 1e-3, 2.0
TANH_EPS = 1e-6

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class MlpParams:
    """Weights are stored (fan_in, fan_out) so a layer is ``x @ W + b``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeMismatch(f"layer {i} input {w.shape[0]} != previous output")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list, weights and biases interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        names = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            names[f"{prefix}.W{i}"] = w
            names[f"{prefix}.b{i}"] = b
        return names

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.activation)

    @classmethod
    def from_arrays(cls, arrays, activation="relu") -> "MlpParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2], activation)


def init_mlp(sizes, rng: np.random.Generator, activation="relu", last_scale=1.0) -> MlpParams:
    """He-style uniform init scaled by fan-in; the output layer is shrunk by
    ``last_scale``."""
    weights, biases = [], []
    n = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        if i == n - 1:
            w *= last_scale
        weights.append(w)
        biases.append(b)
    return MlpParams(weights, biases, activation)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z, h, kind):
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, list]:
    """Hidden layers use ``params.activation``; the output layer is linear.

    Returns the output and the per-layer cache of (input, pre-activation).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ShapeMismatch(f"input dim {x.shape[-1]} != {params.weights[0].shape[0]}")
    cache = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        cache.append((h, z))
        h = z if i == last else _act(z, params.activation)
    return (h[0] if squeeze else h), cache


def mlp_backward(params: MlpParams, cache, grad_out) -> tuple[MlpParams, np.ndarray]:
    """Reverse pass: gradients w.r.t. every parameter and w.r.t. the input."""
    g = np.asarray(grad_out, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if len(cache) != len(params.weights) or g.shape != cache[-1][1].shape:
        raise ShapeMismatch("cache does not match the parameters or output gradient")
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        h_in, z = cache[i]
        if i != last:
            g = g * _act_grad(z, _act(z, params.activation), params.activation)
        gw[i] = h_in.T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return MlpParams(gw, gb, params.activation), g


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam, updating ``params`` and ``state`` in place."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GaussianHead:
    """Pre-squash mean and standard deviation of the action distribution."""

    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray | None = None  # softplus argument, kept for the backward pass

    @classmethod
    def from_outputs(cls, out: np.ndarray) -> "GaussianHead":
        k = out.shape[-1] // 2
        rho = out[..., k:]
        return cls(out[..., :k], np.clip(softplus(rho), SIGMA_MIN, SIGMA_MAX), rho)

    @property
    def mean_action(self) -> np.ndarray:
        return np.tanh(self.mu)

    def sigma_grad(self) -> np.ndarray:
        """d sigma / d rho, zero where the clamp is active."""
        raw = softplus(self.rho)
        return np.where((raw > SIGMA_MIN) & (raw < SIGMA_MAX), sigmoid(self.rho), 0.0)


def squashed_log_prob(eps: np.ndarray, sigma: np.ndarray, action: np.ndarray) -> np.ndarray:
    """log pi of ``tanh(mu + sigma * eps)`` summed over action dims."""
    gauss = -0.5 * eps * eps - np.log(sigma) - 0.5 * LOG_2PI
    return (gauss - np.log(1.0 - action * action + TANH_EPS)).sum(axis=-1)


def policy_sample(head: GaussianHead, noise) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reparameterized sample.

    ``noise`` is either a generator or a standard-normal array shaped like
    ``head.mu``. Returns ``(action, log_prob, eps)``.
    """
    if isinstance(noise, np.random.Generator):
        eps = noise.standard_normal(np.shape(head.mu))
    else:
        eps = np.asarray(noise, dtype=float)
    u = head.mu + head.sigma * eps
    a = np.tanh(u)
    return a, squashed_log_prob(eps, head.sigma, a), eps


def policy_sample_backward(head: GaussianHead, eps, action, grad_action, grad_logp):
    """Gradient of ``grad_logp * log_pi + grad_action . a`` w.r.t. the raw head
    outputs ``(mu, rho)``, concatenated like the network output."""
    grad_logp = np.asarray(grad_logp, dtype=float)[..., None]
    one_m_a2 = 1.0 - action * action
    # d/du of -log(1 - tanh(u)^2 + eps)
    dcorr_du = 2.0 * action * one_m_a2 / (one_m_a2 + TANH_EPS)
    g_u = grad_logp * dcorr_du + grad_action * one_m_a2
    g_sigma = g_u * eps - grad_logp / head.sigma
    return np.concatenate([g_u, g_sigma * head.sigma_grad()], axis=-1)


def scale_action(action, geo: RobotGeometry) -> BodyTwist:
    """Affine map from [-1, 1]^3 to the symmetric body-velocity limits."""
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    lo = -np.array([geo.vx_max, geo.vy_max, geo.wz_max])
    hi = -lo
    v = lo + (a + 1.0) / 2.0 * (hi - lo)
    return BodyTwist(float(v[0]), float(v[1]), float(v[2]))
