"""Minimal dense-network kernel for the actor and critic.

Float64 forward/backward passes with cached activations, softmax output
groups, Adam, finite-difference gradient checking, and flat named-tensor
save/load. No batching: every pass maps one input vector to one output
vector, which is all on-policy single-sample training needs.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity", "softmax")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax, renormalized so the outputs sum to exactly 1."""
    z = np.asarray(logits, dtype=float)
    y = np.exp(z - z.max())
    y /= y.sum()
    return y


class DenseLayer:
    """One affine map plus activation. `softmax_groups` is a list of
    (start, end) slices that each get an independent softmax."""

    def __init__(self, n_in: int, n_out: int, activation: str = "relu",
                 rng=None, weight_scale=None, softmax_groups=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        if activation == "softmax":
            self.softmax_groups = softmax_groups or [(0, n_out)]
        else:
            self.softmax_groups = None
        if weight_scale is None:
            weight_scale = math.sqrt(2.0 / (n_in + n_out))
        if rng is None:
            self.weights = np.zeros((n_in, n_out))
        else:
            self.weights = rng.normal(0.0, weight_scale, size=(n_in, n_out))
        self.bias = np.zeros(n_out)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None
        self._z = None
        self._y = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_in,):
            raise ValueError(f"expected input of shape ({self.n_in},), got {x.shape}")
        z = x @ self.weights + self.bias
        if self.activation == "relu":
            y = np.maximum(z, 0.0)
        elif self.activation == "tanh":
            y = np.tanh(z)
        elif self.activation == "identity":
            y = z
        else:
            y = np.empty_like(z)
            for lo, hi in self.softmax_groups:
                y[lo:hi] = softmax(z[lo:hi])
        self._x, self._z, self._y = x, z, y
        return y

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        dout = np.asarray(dout, dtype=float)
        if self.activation == "relu":
            dz = dout * (self._z > 0.0)
        elif self.activation == "tanh":
            dz = dout * (1.0 - self._y ** 2)
        elif self.activation == "identity":
            dz = dout
        else:
            dz = np.empty_like(dout)
            for lo, hi in self.softmax_groups:
                y = self._y[lo:hi]
                g = dout[lo:hi]
                dz[lo:hi] = y * (g - g @ y)
        self.grad_weights += np.outer(self._x, dz)
        self.grad_bias += dz
        return dz @ self.weights.T


class DenseNet:
    """Ordered stack of DenseLayers behaving as one differentiable map."""

    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer dims mismatch: {a.n_out} -> {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients; returns the input gradient."""
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.weight"] = layer.weights
            out[f"{i}.bias"] = layer.bias
        return out

    def gradients(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.weight"] = layer.grad_weights
            out[f"{i}.bias"] = layer.grad_bias
        return out

    def zero_grad(self):
        for layer in self.layers:
            layer.grad_weights[:] = 0.0
            layer.grad_bias[:] = 0.0

    def load_parameters(self, named: Dict[str, np.ndarray]):
        own = self.parameters()
        if set(named) != set(own):
            raise ValueError("parameter names do not match this network")
        for name, value in named.items():
            if own[name].shape != value.shape:
                raise ValueError(f"shape mismatch for {name}")
            own[name][...] = value


def mlp(sizes: Sequence[int], rng, hidden_activation: str = "relu",
        output_activation: str = "identity", output_scale=None,
        softmax_groups=None) -> DenseNet:
    """Fully-connected stack: hidden activations between all but the last pair."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(DenseLayer(
            a, b,
            activation=output_activation if last else hidden_activation,
            rng=rng,
            weight_scale=output_scale if last else None,
            softmax_groups=softmax_groups if last else None,
        ))
    return DenseNet(layers)


class AdamState:
    """Per-parameter moment accumulators for one named parameter dict."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(state: AdamState, params: Dict[str, np.ndarray],
              grads: Dict[str, np.ndarray], maximize: bool = False):
    """One in-place Adam update; `maximize` flips descent into ascent."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if maximize:
            g = -g
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def save_params(path, named: Dict[str, np.ndarray]):
    """Flat named-tensor checkpoint (numpy archive, row-major values)."""
    np.savez(path, **named)


def load_params(path) -> Dict[str, np.ndarray]:
    with np.load(path) as data:
        return {k: data[k].copy() for k in data.files}


def finite_difference_gradient(f: Callable[[], float], value: np.ndarray,
                               h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() with respect to `value`, in place."""
    grad = np.zeros_like(value)
    flat = value.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        hi = f()
        flat[idx] = orig - h
        lo = f()
        flat[idx] = orig
        gflat[idx] = (hi - lo) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-6) -> float:
    """Worst-coordinate relative disagreement, with an absolute floor so
    near-zero gradients do not blow up the ratio."""
    a = np.asarray(analytic, dtype=float).reshape(-1)
    n = np.asarray(numeric, dtype=float).reshape(-1)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0
