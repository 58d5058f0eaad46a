"""Training loop: per-batch Adam on the reconstruction + matching objective.

The per-user objective is -log-likelihood of the user's training row under
the decoded sample plus the configured matching loss; the batch loss is
its mean. Strategy "none" falls back to the annealed KL-to-standard
regularizer. All stochastic draws (batch order, dropout masks, latent
noise, matching samples) come from one seeded Philox stream per fit, so a
seed fixes the whole trajectory bit-for-bit in 64-bit mode.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluation
from .data import batch_iter, user_rows
from .errors import ConfigError, MagicError, TruncatedError, VersionError
from .gaussians import kl_to_standard, sample_reparam
from .matching import MatchingConfig, ablation_distribution, matching_loss, validate_matching
from .model import (
    ModelDims,
    decode,
    encode,
    init_params,
    meta_forward,
    multinomial_log_likelihood,
    prepare_input,
    semantic_signal,
)
from .numerics import AdamConfig, ParameterBlock, adam_step, spawn_rngs


@dataclass
class TrainConfig:
    hidden: int = 600
    latent: int = 200
    meta_hidden: int = 0
    dropout: float = 0.5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1024
    epochs_max: int = 200
    patience: int = 20
    eval_every: int = 1
    anneal_cap: float = 0.2
    anneal_steps: int = 0
    precision: str = "float64"
    seed: int = 0


def validate_train(cfg):
    for name in ("hidden", "latent", "batch_size", "epochs_max", "patience", "eval_every"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError(f"dropout must lie in [0, 1), got {cfg.dropout}")
    if cfg.lr < 0.0:
        raise ConfigError(f"lr must be non-negative, got {cfg.lr}")
    if cfg.anneal_cap < 0.0 or cfg.anneal_steps < 0:
        raise ConfigError("anneal_cap and anneal_steps must be non-negative")
    if cfg.precision not in ("float64", "float32"):
        raise ConfigError(f"precision must be float64 or float32, got {cfg.precision}")
    return cfg


def model_dims(matrix, tcfg, table=None):
    semantic = table.width if table is not None else 0
    return ModelDims(n_items=matrix.n_items, hidden=tcfg.hidden, latent=tcfg.latent,
                     semantic=semantic, meta_hidden=tcfg.meta_hidden, dropout=tcfg.dropout)


def anneal_weight(step, tcfg):
    """Regularizer weight for strategy none: linear ramp to the cap."""
    if tcfg.anneal_steps > 0:
        return tcfg.anneal_cap * min(1.0, step / tcfg.anneal_steps)
    return tcfg.anneal_cap


def precompute_signals(matrix, table, mcfg, dtype=np.float64, chunk=1024):
    """Per-user semantic signal rows, computed once per fit."""
    use_items = mcfg.ablation != "no_pmn"
    parts = []
    for start in range(0, matrix.n_users, chunk):
        users = np.arange(start, min(start + chunk, matrix.n_users))
        x_raw = user_rows(matrix, users, "train", dtype)
        parts.append(semantic_signal(x_raw, table, users, use_items))
    return np.concatenate(parts, axis=0).astype(dtype, copy=False)


def graph_loss(leaves, dims, x_raw, x_in, g_rows, tcfg, mcfg, weight, rng):
    """Scalar loss tensor for one batch. Draw order: latent eps, then any
    matching-strategy samples (the dropout mask was drawn by the caller)."""
    q = encode(leaves, x_in, dims)
    p = meta_forward(leaves, g_rows, dims) if mcfg.uses_meta() else None
    source = ablation_distribution(q, p) if mcfg.ablation == "add" else q
    z = sample_reparam(source, rng)
    ll = multinomial_log_likelihood(decode(leaves, z), x_raw)
    if mcfg.strategy == "none" or mcfg.ablation == "add":
        dm = kl_to_standard(q) * weight
    else:
        dm = matching_loss(q, p, mcfg, rng)
    return (dm - ll).mean()


def total_loss(users, matrix, table, params, dims, tcfg, mcfg, rng, signals=None):
    """Train-mode batch loss value (no parameter update)."""
    dtype = np.float32 if tcfg.precision == "float32" else np.float64
    x_raw = user_rows(matrix, users, "train", dtype)
    x_in = prepare_input(x_raw, tcfg.dropout, rng)
    g_rows = None
    if mcfg.uses_meta():
        if signals is None:
            signals = precompute_signals(matrix, table, mcfg, dtype)
        g_rows = signals[users]
    leaves = params.leaves()
    loss = graph_loss(leaves, dims, x_raw, x_in, g_rows, tcfg, mcfg,
                      anneal_weight(params.step, tcfg), rng)
    return float(loss.data)


def train_epoch(matrix, params, dims, tcfg, mcfg, rng, signals=None):
    """One pass over all users in shuffled batches; returns mean user loss."""
    dtype = np.float32 if tcfg.precision == "float32" else np.float64
    hyper = AdamConfig(lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.adam_eps)
    total, seen = 0.0, 0
    for users in batch_iter(matrix.n_users, tcfg.batch_size, rng, shuffle=True):
        x_raw = user_rows(matrix, users, "train", dtype)
        x_in = prepare_input(x_raw, tcfg.dropout, rng)
        g_rows = signals[users] if mcfg.uses_meta() else None
        leaves = params.leaves()
        loss = graph_loss(leaves, dims, x_raw, x_in, g_rows, tcfg, mcfg,
                          anneal_weight(params.step, tcfg), rng)
        loss.backward()
        grads = {name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
                 for name, leaf in leaves.items()}
        adam_step(params, grads, hyper)
        total += float(loss.data) * len(users)
        seen += len(users)
    return total / seen


@dataclass
class Checkpoint:
    dims: dict
    config: dict
    values: dict
    best_metric: float
    best_epoch: int


@dataclass
class FitResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)
    params: ParameterBlock = None


HISTORY_HEADER = "epoch,loss,val_recall@20,val_ndcg@20"


def fit(matrix, table, tcfg, mcfg=None, threads=1):
    """Train to convergence; returns the best-validation checkpoint and history.

    Early stopping: validation Recall@20 every eval_every epochs; training
    stops after `patience` consecutive non-improving evaluations.
    """
    mcfg = mcfg if mcfg is not None else MatchingConfig()
    validate_train(tcfg)
    validate_matching(mcfg)
    if mcfg.uses_meta() and table is None:
        raise ConfigError(f"strategy {mcfg.strategy!r} needs an embedding table")
    if not any(len(v) > 0 for v in matrix.val):
        raise ConfigError("fit needs validation interactions for at least one user")
    dtype = np.float32 if tcfg.precision == "float32" else np.float64
    dims = model_dims(matrix, tcfg, table if mcfg.uses_meta() else None)
    init_rng, epoch_rng = spawn_rngs(tcfg.seed, 2)
    params = init_params(dims, init_rng, dtype)
    signals = precompute_signals(matrix, table, mcfg, dtype) if mcfg.uses_meta() else None

    best_metric, best_epoch, bad_evals = -np.inf, 0, 0
    best_values = {k: v.copy() for k, v in params.values.items()}
    history = []
    last_recall, last_ndcg = float("nan"), float("nan")
    for epoch in range(1, tcfg.epochs_max + 1):
        loss = train_epoch(matrix, params, dims, tcfg, mcfg, epoch_rng, signals)
        if epoch % tcfg.eval_every == 0:
            report = evaluation.evaluate_model(params.values, dims, matrix,
                                               split="val", cutoffs=(20,), threads=threads)
            last_recall = report.means["recall@20"]
            last_ndcg = report.means["ndcg@20"]
            if last_recall > best_metric:
                best_metric = last_recall
                best_epoch = epoch
                best_values = {k: v.copy() for k, v in params.values.items()}
                bad_evals = 0
            else:
                bad_evals += 1
        history.append((epoch, loss, last_recall, last_ndcg))
        if bad_evals >= tcfg.patience:
            break
    ckpt = Checkpoint(
        dims=dims.as_dict(),
        config={"train": asdict(tcfg), "matching": asdict(mcfg)},
        values={k: v.astype(np.float64) for k, v in best_values.items()},
        best_metric=float(best_metric),
        best_epoch=best_epoch,
    )
    return FitResult(checkpoint=ckpt, history=history, params=params)


def write_history(path, history):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for epoch, loss, recall, ndcg in history:
            fh.write(f"{epoch},{float(loss)!r},{float(recall)!r},{float(ndcg)!r}\n")


CKPT_MAGIC = b"DMCKPT1"
CKPT_VERSION = 1


def save_checkpoint(path, ckpt):
    """Binary layout: magic line, version byte, length-prefixed JSON
    metadata, then per-tensor ASCII shape headers with float64 LE payloads."""
    meta = json.dumps({
        "dims": ckpt.dims, "config": ckpt.config,
        "best_metric": ckpt.best_metric, "best_epoch": ckpt.best_epoch,
        "tensors": list(ckpt.values),
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + b"\n")
        fh.write(bytes([CKPT_VERSION]))
        fh.write(f"{len(meta)}\n".encode("ascii"))
        fh.write(meta)
        for name, arr in ckpt.values.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} {arr.ndim}{' ' + dims if dims else ''}\n".encode("ascii"))
            fh.write(arr.tobytes())
        fh.write(b"END\n")


def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"{path}: checkpoint ends early")
    return buf


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.readline() != CKPT_MAGIC + b"\n":
            raise MagicError(f"{path}: not a DMCKPT1 checkpoint")
        version = _read_exact(fh, 1, path)[0]
        if version != CKPT_VERSION:
            raise VersionError(f"{path}: unsupported checkpoint version {version}")
        try:
            meta_len = int(fh.readline().strip() or b"-1")
        except ValueError:
            raise TruncatedError(f"{path}: bad metadata length") from None
        if meta_len < 0:
            raise TruncatedError(f"{path}: bad metadata length")
        meta = json.loads(_read_exact(fh, meta_len, path).decode("utf-8"))
        values = {}
        for name in meta["tensors"]:
            header = fh.readline().decode("ascii", errors="replace").split()
            if len(header) < 2 or header[0] != name:
                raise TruncatedError(f"{path}: bad tensor header for {name!r}")
            ndim = int(header[1])
            shape = tuple(int(d) for d in header[2:2 + ndim])
            if len(shape) != ndim:
                raise TruncatedError(f"{path}: bad tensor header for {name!r}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, count * 8, path)
            values[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        if fh.readline() != b"END\n":
            raise TruncatedError(f"{path}: missing end marker")
    return Checkpoint(dims=meta["dims"], config=meta["config"], values=values,
                      best_metric=meta["best_metric"], best_epoch=meta["best_epoch"])
