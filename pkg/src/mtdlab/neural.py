"""Minimal dense feed-forward network core shared by the detector and agent.

Hidden layers use the exact-erf GELU, the output layer is identity (the
detector reconstructs standardized reals, the agent emits unbounded action
values). Everything is float64 so analytic gradients can be checked against
central finite differences tightly.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

FORMAT_VERSION = 1

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU: x * Phi(x) with Phi the standard normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    """d/dx of the exact GELU: Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


@dataclass(frozen=True)
class ForwardCache:
    """Intermediate activations kept for one backward pass."""

    net_id: int
    inputs: tuple  # activation entering each layer, shape (batch, fan_in)
    pre: tuple  # pre-activation of each layer, shape (batch, fan_out)
    single: bool  # input was a single vector, not a batch


@dataclass
class Mlp:
    layer_sizes: tuple
    weights: list  # per layer, shape (fan_out, fan_in)
    biases: list  # per layer, shape (fan_out,)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            raise ValueError(f"layer_sizes must be >= 2 positive entries, got {self.layer_sizes}")
        expect = len(self.layer_sizes) - 1
        if len(self.weights) != expect or len(self.biases) != expect:
            raise ValueError("one weight matrix and bias vector per layer required")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            want = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != want or b.shape != (want[0],):
                raise ValueError(f"layer {l}: weight shape {w.shape} / bias shape {b.shape}, expected {want}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {l}: non-finite parameters")
            self.weights[l] = w
            self.biases[l] = b

    @classmethod
    def initialize(cls, layer_sizes, rng: np.random.Generator) -> "Mlp":
        """Seeded Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_sizes), weights, biases)

    @classmethod
    def zeros(cls, layer_sizes) -> "Mlp":
        weights = [
            np.zeros((fan_out, fan_in))
            for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:])
        ]
        biases = [np.zeros(fan_out) for fan_out in layer_sizes[1:]]
        return cls(tuple(layer_sizes), weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list:
        """Live references, interleaved [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def forward(self, x):
        """Run the network and keep activations; returns (output, cache)."""
        a = np.asarray(x, dtype=np.float64)
        single = a.ndim == 1
        if single:
            a = a.reshape(1, -1)
        if a.ndim != 2 or a.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"input shape {np.shape(x)} does not match input size {self.layer_sizes[0]}")
        inputs, pre = [], []
        for l in range(self.n_layers):
            inputs.append(a)
            z = a @ self.weights[l].T + self.biases[l]
            pre.append(z)
            a = gelu(z) if l < self.n_layers - 1 else z
        out = a[0] if single else a
        return out, ForwardCache(id(self), tuple(inputs), tuple(pre), single)

    def predict(self, x):
        return self.forward(x)[0]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": "gelu",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        if doc.get("activation", "gelu") != "gelu":
            raise ValueError(f"unsupported activation {doc.get('activation')!r}")
        return cls(
            tuple(doc["layer_sizes"]),
            [np.asarray(w) for w in doc["weights"]],
            [np.asarray(b) for b in doc["biases"]],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_grad(pred, target) -> np.ndarray:
    """Gradient of mse_loss with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return 2.0 * (pred - target) / pred.size


def backward(net: Mlp, cache: ForwardCache, grad_out) -> list:
    """Exact loss gradients for every parameter, interleaved like parameters().

    ``grad_out`` is dLoss/dOutput from the matching forward call; a cache
    produced by a different network or with a different shape is rejected.
    """
    if cache.net_id != id(net):
        raise ValueError("cache does not belong to this network")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.single:
        g = g.reshape(1, -1)
    if g.shape != cache.pre[-1].shape:
        raise ValueError(f"grad_out shape {np.shape(grad_out)} does not match cached output {cache.pre[-1].shape}")

    grads = [None] * (2 * net.n_layers)
    dz = g  # identity output activation
    for l in reversed(range(net.n_layers)):
        grads[2 * l] = dz.T @ cache.inputs[l]
        grads[2 * l + 1] = dz.sum(axis=0)
        if l > 0:
            da = dz @ net.weights[l]
            dz = da * gelu_grad(cache.pre[l - 1])
    return grads


def finite_difference_grads(net: Mlp, x, target, h: float = 1e-5) -> list:
    """Central-difference gradients of the MSE loss; the slow oracle.

    Touches parameters only through forward passes, so it is independent of
    backward() and usable to verify it.
    """
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = mse_loss(net.predict(x), target)
            p[idx] = orig - h
            down = mse_loss(net.predict(x), target)
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def _check_shapes(params, grads) -> None:
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"parameter {i}: shape {np.shape(p)} vs gradient {np.shape(g)}")


@dataclass
class SgdMomentum:
    """Classic momentum: v <- mu*v + g; w <- w - lr*v."""

    learning_rate: float = 1e-4
    momentum: float = 0.9
    velocities: list = field(default=None, repr=False)

    def step(self, params, grads) -> None:
        _check_shapes(params, grads)
        if self.velocities is None:
            self.velocities = [np.zeros_like(p) for p in params]
        _check_shapes(params, self.velocities)
        for p, g, v in zip(params, grads, self.velocities):
            v *= self.momentum
            v += g
            p -= self.learning_rate * v


@dataclass
class Adam:
    """Adam with bias correction; step count and moments are serializable."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default=None, repr=False)
    v: list = field(default=None, repr=False)

    def step(self, params, grads) -> None:
        _check_shapes(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        _check_shapes(params, self.m)
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": [a.tolist() for a in self.m] if self.m is not None else None,
            "v": [a.tolist() for a in self.v] if self.v is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Adam":
        opt = cls(
            learning_rate=doc["learning_rate"],
            beta1=doc["beta1"],
            beta2=doc["beta2"],
            eps=doc["eps"],
            t=doc["t"],
        )
        if doc.get("m") is not None:
            opt.m = [np.asarray(a) for a in doc["m"]]
            opt.v = [np.asarray(a) for a in doc["v"]]
        return opt
