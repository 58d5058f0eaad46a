"""Model forward passes: variational encoder/decoder and the meta network.

The encoder maps a normalized (and, in training, dropout-thinned) binary
interaction row to a diagonal Gaussian over the latent space. The decoder
maps a latent sample to item logits scored by the multinomial likelihood.
The meta network maps a per-user semantic signal, built from precomputed
embeddings, to a second Gaussian over the same latent space.

All forwards accept either plain arrays or gradient-tracked Tensors for
the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import log_softmax, sum_last, tanh
from .errors import ConfigError
from .gaussians import DiagonalGaussian
from .numerics import ParameterBlock, xavier_uniform


@dataclass
class ModelDims:
    n_items: int
    hidden: int = 600
    latent: int = 200
    semantic: int = 0
    meta_hidden: int = 0
    dropout: float = 0.5

    def __post_init__(self):
        if self.meta_hidden == 0:
            self.meta_hidden = 2 * self.latent
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("n_items", "hidden", "latent"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def as_dict(self):
        return {"n_items": self.n_items, "hidden": self.hidden, "latent": self.latent,
                "semantic": self.semantic, "meta_hidden": self.meta_hidden,
                "dropout": self.dropout}


def init_params(dims, rng, dtype=np.float64):
    """Xavier-uniform weights, zero biases, in a fixed draw order."""
    block = ParameterBlock()
    shapes = [
        ("enc_w1", dims.n_items, dims.hidden),
        ("enc_w2", dims.hidden, 2 * dims.latent),
        ("dec_w1", dims.latent, dims.hidden),
        ("dec_w2", dims.hidden, dims.n_items),
    ]
    if dims.semantic > 0:
        shapes += [
            ("meta_w1", dims.semantic, dims.meta_hidden),
            ("meta_w2", dims.meta_hidden, 2 * dims.latent),
        ]
    for name, rows, cols in shapes:
        block.add(name, xavier_uniform(rows, cols, rng, dtype))
        block.add(name.replace("w", "b"), np.zeros(cols, dtype=dtype))
    return block


def normalize_rows(x):
    """L2-normalize interaction rows; all-zero rows stay zero."""
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def prepare_input(x_raw, dropout=0.0, rng=None):
    """Normalize rows, then (training only) apply rescaled element dropout.

    Passing an rng selects train mode: entries drop with probability
    `dropout` and survivors are rescaled by 1/(1-dropout). Without an rng
    the input is only normalized (eval mode).
    """
    x = normalize_rows(x_raw)
    if rng is not None and dropout > 0.0:
        keep = rng.random(x.shape) >= dropout
        x = x * (keep.astype(x.dtype) / (1.0 - dropout))
    return x


def _two_layer(p, x, w1, b1, w2, b2):
    hidden = tanh(x @ p[w1] + p[b1])
    return hidden @ p[w2] + p[b2]


def _split_gaussian(out, latent):
    return DiagonalGaussian(out[:, :latent], out[:, latent:])


def encode(p, x_in, dims):
    """Posterior q(z | x) from a prepared input row block."""
    out = _two_layer(p, x_in, "enc_w1", "enc_b1", "enc_w2", "enc_b2")
    return _split_gaussian(out, dims.latent)


def decode(p, z):
    """Item logits for latent rows z."""
    return _two_layer(p, z, "dec_w1", "dec_b1", "dec_w2", "dec_b2")


def multinomial_log_likelihood(logits, x_raw):
    """Per-user sum of x * log softmax(logits); log-sum-exp is max-shifted."""
    return sum_last(x_raw * log_softmax(logits, axis=-1))


def semantic_signal(x_raw, table, users, use_items=True):
    """Per-user semantic signal g = W_I^T x_u + w_u (raw binary x_u).

    With use_items=False the interacted-items term is dropped and g is the
    user row alone.
    """
    rows = table.user_matrix[users]
    if use_items:
        rows = x_raw @ table.item_matrix + rows
    return rows


def meta_forward(p, g, dims):
    """Semantic-side Gaussian from the per-user signal g."""
    out = _two_layer(p, g, "meta_w1", "meta_b1", "meta_w2", "meta_b2")
    return _split_gaussian(out, dims.latent)
