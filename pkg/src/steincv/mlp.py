"""Multilayer-perceptron control functions.

The forward pass propagates, for every hidden unit, the triple
(value, input Jacobian, input Laplacian) so that applying the Langevin operator
to the network output is exact rather than approximated. A matching manual
reverse pass accumulates gradients of weighted sums of the operator output with
respect to every weight and bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MlpControlFunction",
    "forward_with_derivatives",
    "cv_values",
    "cv_values_with_cache",
    "cv_param_vjp",
]


def _activation_derivatives(preact: np.ndarray, kind: str):
    """Values and first three derivatives of the activation at the preactivation.

    For relu the second and third derivatives are zero almost everywhere and the
    subgradient at 0 is taken as 0.
    """
    if kind == "tanh":
        t = np.tanh(preact)
        one_m_t2 = 1.0 - t * t
        s1 = one_m_t2
        s2 = -2.0 * t * one_m_t2
        s3 = one_m_t2 * (6.0 * t * t - 2.0)
        return t, s1, s2, s3
    if kind == "relu":
        on = (preact > 0).astype(np.float64)
        return preact * on, on, np.zeros_like(preact), np.zeros_like(preact)
    raise ValueError(f"unknown activation: {kind!r}")


@dataclass
class MlpControlFunction:
    """Fully connected network R^d -> R with a linear output layer.

    ``widths`` is the full layer list [d, h_1, ..., h_L, 1]; activations are
    applied after every affine layer except the last.
    """

    widths: list[int]
    activation: str = "tanh"
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.widths) < 2 or self.widths[-1] != 1:
            raise ValueError("widths must be [d, h_1, ..., 1]")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation: {self.activation!r}")
        if not self.weights:
            self.weights = [
                np.zeros((o, i)) for i, o in zip(self.widths[:-1], self.widths[1:])
            ]
            self.biases = [np.zeros(o) for o in self.widths[1:]]
        for w, b, i, o in zip(self.weights, self.biases, self.widths[:-1], self.widths[1:]):
            if w.shape != (o, i) or b.shape != (o,):
                raise ValueError("weight/bias shapes inconsistent with widths")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("network parameters must be finite")

    @classmethod
    def initialize(
        cls, widths: list[int], activation: str = "tanh", seed: int = 0
    ) -> "MlpControlFunction":
        """Seeded fan-based uniform init: W ~ U(+-sqrt(6/(fan_in+fan_out))), b = 0."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(widths), activation, weights, biases)

    @property
    def dim(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def save(self, path) -> None:
        payload = {
            "widths": self.widths,
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "MlpControlFunction":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            payload["widths"],
            payload["activation"],
            [np.asarray(w, dtype=np.float64) for w in payload["weights"]],
            [np.asarray(b, dtype=np.float64) for b in payload["biases"]],
        )

    def __call__(self, states: np.ndarray, scores: np.ndarray) -> np.ndarray:
        return cv_values(self, states, scores)


def _forward(net: MlpControlFunction, states: np.ndarray):
    """Layer-wise propagation of h (n, w), J = dh/dx (n, w, d), L = lap h (n, w).

    Affine layer:      h' = W h + b,  J' = W J,          L' = W L
    Activation layer:  h' = s(h),     J' = s'(h) . J,    L' = s''(h) |J|^2_row + s'(h) L
    Returns the cache of intermediates needed by the reverse pass.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    n, d = states.shape
    if d != net.dim:
        raise ValueError(f"input dimension {d} != network dimension {net.dim}")
    h = states
    jac = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    lap = np.zeros((n, d))
    n_affine = len(net.weights)
    cache = {"states": states, "layers": []}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        layer = {"h_in": h, "jac_in": jac, "lap_in": lap}
        h = h @ w.T + b
        jac = np.einsum("ow,nwd->nod", w, jac)
        lap = lap @ w.T
        if i < n_affine - 1:
            val, s1, s2, s3 = _activation_derivatives(h, net.activation)
            rowsq = np.einsum("nwd,nwd->nw", jac, jac)
            layer["act"] = {
                "pre": h, "jac_pre": jac, "lap_pre": lap,
                "s1": s1, "s2": s2, "s3": s3, "rowsq": rowsq,
            }
            jac = s1[:, :, None] * jac
            lap = s2 * rowsq + s1 * lap
            h = val
        cache["layers"].append(layer)
    cache["out"] = (h[:, 0], jac[:, 0, :], lap[:, 0])
    return cache


def forward_with_derivatives(
    net: MlpControlFunction, states: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Network value, input gradient and input Laplacian at each sample row."""
    return _forward(net, states)["out"]


def cv_values(
    net: MlpControlFunction, states: np.ndarray, scores: np.ndarray
) -> np.ndarray:
    """Langevin operator output lap u + grad u . score at each sample row."""
    _, grad, lap = forward_with_derivatives(net, states)
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    return lap + np.einsum("nd,nd->n", grad, scores)


def cv_values_with_cache(net: MlpControlFunction, states: np.ndarray, scores: np.ndarray):
    cache = _forward(net, states)
    _, grad, lap = cache["out"]
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    cache["scores"] = scores
    return lap + np.einsum("nd,nd->n", grad, scores), cache


def cv_param_vjp(
    net: MlpControlFunction, cache: dict, upstream: np.ndarray
) -> np.ndarray:
    """Gradient of sum_i upstream_i * g(x_i) with respect to the flat parameters,
    accumulated by reversing the extended forward pass."""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    scores = cache["scores"]
    n, d = scores.shape
    # g depends on the output only through (grad, lap); the value adjoint is 0
    h_bar = np.zeros((n, 1))
    jac_bar = upstream[:, None, None] * scores[:, None, :]
    lap_bar = upstream[:, None].copy()
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        layer = cache["layers"][i]
        if "act" in layer:
            act = layer["act"]
            s1, s2, s3 = act["s1"], act["s2"], act["s3"]
            jac_pre, lap_pre, rowsq = act["jac_pre"], act["lap_pre"], act["rowsq"]
            pre_bar = (
                h_bar * s1
                + np.einsum("nwd,nwd->nw", jac_bar, jac_pre) * s2
                + lap_bar * (s3 * rowsq + s2 * lap_pre)
            )
            jac_bar = s1[:, :, None] * jac_bar + 2.0 * (lap_bar * s2)[:, :, None] * jac_pre
            lap_bar = s1 * lap_bar
            h_bar = pre_bar
        w = net.weights[i]
        h_in, jac_in, lap_in = layer["h_in"], layer["jac_in"], layer["lap_in"]
        grads_w[i] = (
            h_bar.T @ h_in
            + np.einsum("nod,nwd->ow", jac_bar, jac_in)
            + lap_bar.T @ lap_in
        )
        grads_b[i] = h_bar.sum(axis=0)
        h_bar = h_bar @ w
        jac_bar = np.einsum("nod,ow->nwd", jac_bar, w)
        lap_bar = lap_bar @ w
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    flat = np.concatenate(parts)
    if not np.all(np.isfinite(flat)):
        raise ValueError("non-finite parameter gradient (exploding parameters)")
    return flat
