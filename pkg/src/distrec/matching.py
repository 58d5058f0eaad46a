"""Distribution-matching strategies between the two latent Gaussians.

Each strategy scores, per user, how the collaborative posterior q should
be regularized given the semantic-side posterior p:

  godm: KL(q || N(0,I)) + beta * W2^2(p, q)
  cpdm: KL(q || N(0,I)) + beta * [KL(p || p_com) + KL(q || p_com)]
  mddm: beta * KL(q || N(0,I)) + (1 - beta) * KL(q || p)

mddm interpolates its two terms, so beta is confined to [0, 1] there.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import log
from .errors import ConfigError
from .gaussians import (
    DiagonalGaussian,
    composite_divergence,
    kl_between,
    kl_to_standard,
    wasserstein2_sq,
)

STRATEGIES = ("none", "godm", "cpdm", "mddm")
ABLATIONS = ("off", "no_pmn", "add", "no_mixing")
COMPOSITE_MODES = ("moment", "monte_carlo")
DEFAULT_BETA = {"godm": 0.1, "cpdm": 0.1, "mddm": 0.5}


@dataclass
class MatchingConfig:
    strategy: str = "none"
    beta: float = None
    alpha: float = 0.5
    mode: str = "moment"
    sample_count: int = 64
    ablation: str = "off"

    def resolved_beta(self):
        if self.beta is None:
            return DEFAULT_BETA.get(self.strategy, 0.0)
        return float(self.beta)

    def uses_meta(self):
        """Whether this configuration ever evaluates the meta network."""
        return self.strategy != "none" or self.ablation == "add"


def validate_matching(cfg):
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {cfg.strategy!r}; pick from {STRATEGIES}")
    if cfg.ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {cfg.ablation!r}; pick from {ABLATIONS}")
    if cfg.mode not in COMPOSITE_MODES:
        raise ConfigError(f"unknown composite mode {cfg.mode!r}")
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {cfg.alpha}")
    beta = cfg.resolved_beta()
    if cfg.strategy == "mddm" and not 0.0 <= beta <= 1.0:
        raise ConfigError(f"mddm beta must lie in [0, 1], got {beta}")
    if beta < 0.0:
        raise ConfigError(f"beta must be non-negative, got {beta}")
    if cfg.sample_count < 1:
        raise ConfigError(f"sample_count must be >= 1, got {cfg.sample_count}")
    if cfg.ablation == "no_mixing" and cfg.strategy != "mddm":
        raise ConfigError("ablation no_mixing only applies to the mddm strategy")
    return cfg


def ablation_distribution(q, p, kind="add"):
    """Sum of the two independent Gaussians: N(mu_q + mu_p, var_q + var_p)."""
    if kind != "add":
        raise ConfigError(f"unknown ablation distribution {kind!r}")
    return DiagonalGaussian(q.mean + p.mean, log(q.variance() + p.variance()))


def matching_loss(q, p, cfg, rng=None):
    """Per-user matching loss for the configured strategy."""
    beta = cfg.resolved_beta()
    if cfg.strategy == "godm":
        return kl_to_standard(q) + beta * wasserstein2_sq(p, q)
    if cfg.strategy == "cpdm":
        div = composite_divergence(p, q, cfg.alpha, cfg.mode, cfg.sample_count, rng)
        return kl_to_standard(q) + beta * div
    if cfg.strategy == "mddm":
        if cfg.ablation == "no_mixing":
            return kl_to_standard(q) + beta * kl_between(q, p)
        return beta * kl_to_standard(q) + (1.0 - beta) * kl_between(q, p)
    raise ConfigError(f"matching_loss is undefined for strategy {cfg.strategy!r}")
