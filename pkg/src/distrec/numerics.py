"""Deterministic numerics: rng streams, init, Adam, gradient checking.

All randomness flows from a single 64-bit seed through counter-based
Philox streams, so a fixed seed and call sequence reproduces every draw
bit-for-bit. Default precision is 64-bit; float32 is opt-in at init.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, InvalidShapeError, NumericError


def make_rng(seed):
    """Counter-based generator for one 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def spawn_rngs(seed, n):
    """n independent child streams derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def xavier_uniform(rows, cols, rng, dtype=np.float64):
    if rows < 1 or cols < 1:
        raise InvalidShapeError(f"xavier init needs positive dims, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype, copy=False)


def _shape_of(x):
    return x.data.shape if isinstance(x, Tensor) else np.shape(x)


def affine_tanh_forward(x, w, b, activation="tanh"):
    """x @ w + b followed by the requested activation ("tanh" or "identity")."""
    xs, ws, bs = _shape_of(x), _shape_of(w), _shape_of(b)
    if xs[-1] != ws[0] or ws[1] != bs[-1]:
        raise InvalidShapeError(f"affine shapes do not chain: {xs} @ {ws} + {bs}")
    out = x @ w + b
    if activation == "tanh":
        return out.tanh() if isinstance(out, Tensor) else np.tanh(out)
    if activation == "identity":
        return out
    raise ConfigError(f"unknown activation {activation!r}")


@dataclass
class ParameterBlock:
    """Named parameter tensors with per-tensor Adam moment state."""

    values: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name, array):
        self.values[name] = array
        self.m[name] = np.zeros_like(array)
        self.v[name] = np.zeros_like(array)

    def leaves(self):
        """Fresh gradient-tracked Tensors viewing the current values."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.values.items()}

    def copy(self):
        out = ParameterBlock(step=self.step)
        out.values = {k: v.copy() for k, v in self.values.items()}
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        return out


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, hyper):
    """One bias-corrected Adam update; rejects non-finite gradients untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
    params.step += 1
    t = params.step
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for name, g in grads.items():
        m = params.m[name]
        v = params.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * (g * g)
        params.values[name] -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)


def evaluate_with_gradients(loss_fn, params):
    """Evaluate a scalar loss built from the operator set; return (value, grads).

    loss_fn receives {name: Tensor} leaves and must return a scalar Tensor.
    Parameters the loss does not touch get zero gradients.
    """
    leaves = params.leaves()
    loss = loss_fn(leaves)
    if loss.data.shape != ():
        raise InvalidShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.backward()
    grads = {}
    for name, leaf in leaves.items():
        grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return float(loss.data), grads


@dataclass
class FiniteDifferenceReport:
    max_rel_error: dict
    tol: float
    passed: bool


def finite_difference_check(loss_fn, params, step=1e-5, tol=1e-4):
    """Compare analytic gradients against central differences, per parameter."""
    _, analytic = evaluate_with_gradients(loss_fn, params)

    def value_at(values):
        leaves = {k: Tensor(v, requires_grad=True) for k, v in values.items()}
        return float(loss_fn(leaves).data)

    errors = {}
    for name in params.values:
        base = params.values[name]
        numeric = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = value_at(params.values)
            flat[i] = keep - step
            lo = value_at(params.values)
            flat[i] = keep
            num_flat[i] = (hi - lo) / (2.0 * step)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6)
        errors[name] = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
    passed = all(e <= tol for e in errors.values())
    return FiniteDifferenceReport(max_rel_error=errors, tol=tol, passed=passed)
