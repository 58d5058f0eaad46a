"""Generative recommender with latent distribution matching.

A multinomial variational autoencoder over implicit feedback whose latent
user posterior is matched against a second Gaussian derived from
precomputed semantic embeddings, via interchangeable matching losses
(godm, cpdm, mddm), with full-ranking evaluation and diagnostics.
"""

from .data import (
    InteractionMatrix,
    MetaKnowledgeTable,
    SyntheticSpec,
    build_table,
    load_embeddings,
    load_interactions,
    split_ratio,
    synth_generate,
    write_embeddings_emb1,
)
from .errors import (
    ConfigError,
    DataError,
    DistrecError,
    InvalidShapeError,
    NumericError,
)
from .evaluation import (
    EvalReport,
    distribution_activity,
    evaluate_model,
    ndcg_at,
    rank_topn,
    recall_at,
    sparsity_report,
)
from .gaussians import (
    DiagonalGaussian,
    composite_divergence,
    kl_between,
    kl_to_standard,
    log_density,
    sample_reparam,
    wasserstein2_sq,
)
from .matching import MatchingConfig, ablation_distribution, matching_loss
from .model import ModelDims, decode, encode, init_params, meta_forward
from .numerics import (
    AdamConfig,
    ParameterBlock,
    adam_step,
    evaluate_with_gradients,
    finite_difference_check,
    make_rng,
    spawn_rngs,
    xavier_uniform,
)
from .training import (
    Checkpoint,
    FitResult,
    TrainConfig,
    fit,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train_epoch,
)

__version__ = "0.1.0"
