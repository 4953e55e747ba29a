"""Small exact-gradient numeric substrate.

Dense layers and two-layer ReLU networks over float64 numpy arrays, each with
a hand-written backward pass that accumulates into a :class:`ParamStore`.
Inputs are batch-first: ``x`` has shape ``(n, in)`` (a 1-D vector is treated
as ``n = 1``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mba.errors import ConfigurationError, DegenerateDistributionError, NumericError, ParameterError


class ParamStore:
    """Named parameters with same-shaped gradient accumulators."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for k, v in self.params.items():
            other.add(k, v)
        return other

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()]) if self.params else np.zeros(0)

    def equal(self, other: "ParamStore") -> bool:
        return self.params.keys() == other.params.keys() and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items()
        )

    # checkpoint format: {"params": {name: {"shape": [...], "data": [...]}}, "meta": {...}}

    def to_json(self, meta: dict | None = None) -> str:
        from mba.world import dumps

        body = {
            name: {"shape": list(v.shape), "data": v.ravel(order="C")}
            for name, v in sorted(self.params.items())
        }
        return dumps({"meta": meta or {}, "params": body})

    @classmethod
    def from_json(cls, text: str) -> tuple["ParamStore", dict]:
        raw = json.loads(text)
        store = cls()
        for name, entry in raw["params"].items():
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            store.add(name, arr)
        return store, raw.get("meta", {})

    def load_from(self, other: "ParamStore"):
        """Copy values in place; names and shapes must match."""
        if set(self.params) != set(other.params):
            missing = set(self.params) ^ set(other.params)
            raise ConfigurationError(f"parameter sets differ: {sorted(missing)[:5]}")
        for k, v in other.params.items():
            if v.shape != self.params[k].shape:
                raise ConfigurationError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k][...] = v


BIAS_INIT = 0.01


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


class DenseLayer:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator | None = None):
        self.store, self.name = store, name
        self.d_in, self.d_out = d_in, d_out
        self.w_key, self.b_key = f"{name}.W", f"{name}.b"
        if self.w_key not in store:
            if rng is not None:
                w = glorot(rng, d_out, d_in)
                # small nonzero biases keep exact-zero inputs off the ReLU kink
                b = rng.uniform(-BIAS_INIT, BIAS_INIT, size=d_out)
            else:
                w, b = np.zeros((d_out, d_in)), np.zeros(d_out)
            store.add(self.w_key, w)
            store.add(self.b_key, b)

    @property
    def weights(self) -> np.ndarray:
        return self.store[self.w_key]

    @property
    def bias(self) -> np.ndarray:
        return self.store[self.b_key]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = _as_batch(x)
        if x.shape[1] != self.d_in:
            raise ConfigurationError(f"{self.name}: expected input dim {self.d_in}, got {x.shape[1]}")
        return x @ self.weights.T + self.bias

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients and return dL/dx."""
        x = _as_batch(x)
        dy = _as_batch(dy)
        self.store.grads[self.w_key] += dy.T @ x
        self.store.grads[self.b_key] += dy.sum(axis=0)
        return dy @ self.weights


@dataclass
class FFNCache:
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray


class FeedForwardNet:
    """y = W2 relu(W1 x + b1) + b2."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_hidden: int, d_out: int,
                 rng: np.random.Generator | None = None):
        self.name = name
        self.l1 = DenseLayer(store, f"{name}.l1", d_in, d_hidden, rng)
        self.l2 = DenseLayer(store, f"{name}.l2", d_hidden, d_out, rng)

    @property
    def d_in(self) -> int:
        return self.l1.d_in

    @property
    def d_out(self) -> int:
        return self.l2.d_out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, FFNCache]:
        x = _as_batch(x)
        pre = self.l1.forward(x)
        h = np.maximum(pre, 0.0)
        return self.l2.forward(h), FFNCache(x, pre, h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: FFNCache, dy: np.ndarray) -> np.ndarray:
        dh = self.l2.backward(cache.hidden, dy)
        dpre = dh * (cache.pre > 0.0)
        return self.l1.backward(cache.x, dpre)


def ffn_forward(net: FeedForwardNet, x: np.ndarray) -> np.ndarray:
    return net(x)


def ffn_backward(net: FeedForwardNet, x: np.ndarray, dy: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients of <dy, net(x)> without touching the store's accumulators."""
    store = net.l1.store
    keys = [net.l1.w_key, net.l1.b_key, net.l2.w_key, net.l2.b_key]
    saved = {k: store.grads[k].copy() for k in keys}
    for k in keys:
        store.grads[k].fill(0.0)
    _, cache = net.forward(x)
    dx = net.backward(cache, dy)
    dparams = {k: store.grads[k].copy() for k in keys}
    for k in keys:
        store.grads[k][...] = saved[k]
    return dx, dparams


# ---------------------------------------------------------------------------
# distributions


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis; -inf entries get exactly zero mass."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise DegenerateDistributionError("softmax of an empty vector")
    m = np.max(z, axis=-1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise DegenerateDistributionError("all logits are masked")
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy(p: np.ndarray, target: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= target < p.shape[-1]:
        raise ParameterError(f"target index {target} out of range for {p.shape[-1]} classes")
    pt = p[target]
    if pt <= 0.0:
        return math.inf
    return -math.log(pt)


def normalize(x: np.ndarray) -> np.ndarray:
    s = x.sum()
    if not s > 0:
        raise DegenerateDistributionError("cannot normalise a zero-mass vector")
    return x / s


def normalize_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    s = x.sum()
    y = x / s
    return (dy - np.dot(dy, y)) / s


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class GradCheckReport:
    rel_errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self):
        rows = [f"{k}: {v:.3e}" for k, v in self.rel_errors.items()]
        return "\n".join(rows + [f"max={self.max_rel_error:.3e} tol={self.tol:g} {'PASS' if self.passed else 'FAIL'}"])


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """||a - b|| / max(||a||, ||b||, floor).

    The floor keeps identically-zero gradients (parameters the loss is
    invariant to) from turning round-off in the differences into large ratios.
    """
    a, b = np.ravel(a), np.ravel(b)
    if a.size == 0:
        return 0.0
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(num / den)


def finite_diff_check(
    store: ParamStore,
    loss_fn: Callable[[], float],
    h: float = 1e-5,
    tol: float = 1e-4,
    analytic: dict[str, np.ndarray] | None = None,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, per parameter.

    ``loss_fn`` must be deterministic; if ``analytic`` is omitted it is called
    once after zeroing the store and expected to fill ``store.grads``.
    """
    if analytic is None:
        store.zero_grad()
        base = loss_fn()
        if not math.isfinite(base):
            raise NumericError(f"non-finite loss {base}")
        analytic = {k: v.copy() for k, v in store.grads.items()}
    report = GradCheckReport(tol=tol)
    for name in names or store.names():
        theta = store.params[name]
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn()
            flat[i] = old - h
            lm = loss_fn()
            flat[i] = old
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            nflat[i] = (lp - lm) / (2 * h)
        report.rel_errors[name] = rel_error(analytic[name], numeric)
    store.zero_grad()
    return report
