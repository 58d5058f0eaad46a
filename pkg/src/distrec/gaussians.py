"""Diagonal Gaussians and the divergences used for distribution matching.

All functions accept means/log-variances of shape (d,) or batched (B, d)
and reduce over the last axis, returning a scalar or a (B,) vector. They
work on plain arrays or on gradient-tracked Tensors, so the same closed
forms serve evaluation and the training graph.

Conventions: q is the collaborative posterior, p the semantic-side
posterior. The composite reference is the density mixture
p_com = alpha * q + (1 - alpha) * p.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, clamp, data_of, exp, log, mean_last, sum_last
from .errors import ConfigError, InvalidShapeError, NumericError

LOG_TWO_PI = float(np.log(2.0 * np.pi))
LOG_VAR_BOUND = 10.0


class DiagonalGaussian:
    """Mean and log-variance; the log-variance is clamped to [-10, 10]."""

    __slots__ = ("mean", "log_variance")

    def __init__(self, mean, log_variance):
        m, lv = data_of(mean), data_of(log_variance)
        if m.shape != lv.shape:
            raise InvalidShapeError(
                f"mean shape {m.shape} != log_variance shape {lv.shape}")
        if not isinstance(mean, Tensor) and not np.all(np.isfinite(m)):
            raise NumericError("non-finite Gaussian mean")
        if not isinstance(log_variance, Tensor) and not np.all(np.isfinite(lv)):
            raise NumericError("non-finite Gaussian log-variance")
        self.mean = mean
        self.log_variance = clamp(log_variance, -LOG_VAR_BOUND, LOG_VAR_BOUND)

    @property
    def dim(self):
        return data_of(self.mean).shape[-1]

    def std(self):
        return exp(self.log_variance * 0.5)

    def variance(self):
        return exp(self.log_variance)


def _check_pair(a, b):
    if data_of(a.mean).shape != data_of(b.mean).shape:
        raise InvalidShapeError(
            f"Gaussian shapes differ: {data_of(a.mean).shape} vs {data_of(b.mean).shape}")


def sample_reparam(dist, rng):
    """Reparameterized draw z = mean + std * eps, differentiable in both fields."""
    eps = rng.standard_normal(data_of(dist.mean).shape)
    eps = eps.astype(data_of(dist.mean).dtype, copy=False)
    return dist.mean + dist.std() * eps


def log_density(dist, z):
    """Exact log density of z under the Gaussian, summed over the last axis."""
    diff = z - dist.mean
    quad = diff * diff * exp(-dist.log_variance)
    return sum_last(dist.log_variance + quad + LOG_TWO_PI) * -0.5


def kl_to_standard(q):
    """KL(q || N(0, I))."""
    mu, lv = q.mean, q.log_variance
    return sum_last(exp(lv) + mu * mu - 1.0 - lv) * 0.5


def kl_between(q, p):
    """KL(q || p) for two diagonal Gaussians of equal dimension."""
    _check_pair(q, p)
    dlv = q.log_variance - p.log_variance
    diff = p.mean - q.mean
    quad = diff * diff * exp(-p.log_variance)
    return sum_last(exp(dlv) + quad - 1.0 - dlv) * 0.5


def wasserstein2_sq(p, q):
    """Squared 2-Wasserstein distance: |mu_p - mu_q|^2 + sum (std_p - std_q)^2."""
    _check_pair(p, q)
    dmu = p.mean - q.mean
    dstd = p.std() - q.std()
    return sum_last(dmu * dmu + dstd * dstd)


def _expand_mid(dist, batched):
    # insert a sample axis: (B, d) -> (B, 1, d) so draws broadcast against it
    if not batched:
        return dist
    m, lv = dist.mean, dist.log_variance
    b, d = data_of(m).shape
    new = (b, 1, d)
    m = m.reshape(*new) if isinstance(m, Tensor) else m.reshape(new)
    lv = lv.reshape(*new) if isinstance(lv, Tensor) else lv.reshape(new)
    return DiagonalGaussian(m, lv)


def _log_mixture(lq, lp, alpha):
    # degenerate weights reduce to one component; the other term could
    # underflow exp() to zero and poison the log
    if alpha == 0.0:
        return lp
    if alpha == 1.0:
        return lq
    # stable two-component log density; the shift is a constant so the
    # gradient is exact
    shift = np.maximum(data_of(lq), data_of(lp))
    mixed = alpha * exp(lq - shift) + (1.0 - alpha) * exp(lp - shift)
    return log(mixed) + shift


def _mc_kl_to_mixture(outer, q, p, alpha, sample_count, rng):
    batched = data_of(outer.mean).ndim == 2
    shape = data_of(outer.mean).shape
    size = (shape[0], sample_count, shape[1]) if batched else (sample_count, shape[-1])
    eps = rng.standard_normal(size).astype(data_of(outer.mean).dtype, copy=False)
    outer_e = _expand_mid(outer, batched)
    q_e = _expand_mid(q, batched)
    p_e = _expand_mid(p, batched)
    z = outer_e.mean + outer_e.std() * eps
    lq = log_density(q_e, z)
    lp = log_density(p_e, z)
    lo = lq if outer is q else lp
    return mean_last(lo - _log_mixture(lq, lp, alpha))


def composite_divergence(p, q, alpha=0.5, mode="moment", sample_count=64, rng=None):
    """KL(p || p_com) + KL(q || p_com) against the mixture p_com = alpha*q + (1-alpha)*p.

    mode "moment" replaces the mixture with its moment-matched diagonal
    Gaussian (closed form); mode "monte_carlo" estimates both terms by
    reparameterized sampling against the exact mixture density.
    """
    _check_pair(p, q)
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if mode == "moment":
        mix_mean = alpha * q.mean + (1.0 - alpha) * p.mean
        second = alpha * (q.variance() + q.mean * q.mean) \
            + (1.0 - alpha) * (p.variance() + p.mean * p.mean)
        var = second - mix_mean * mix_mean
        com = DiagonalGaussian(mix_mean, log(var))
        return kl_between(p, com) + kl_between(q, com)
    if mode == "monte_carlo":
        if sample_count < 1:
            raise ConfigError(f"sample_count must be >= 1, got {sample_count}")
        if rng is None:
            raise ConfigError("monte_carlo mode needs an rng")
        term_p = _mc_kl_to_mixture(p, q, p, alpha, sample_count, rng)
        term_q = _mc_kl_to_mixture(q, q, p, alpha, sample_count, rng)
        return term_p + term_q
    raise ConfigError(f"unknown composite mode {mode!r}")
