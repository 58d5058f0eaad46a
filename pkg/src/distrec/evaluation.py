"""Full-catalog ranking evaluation and diagnostics.

Scores are decoder logits at the posterior mean. Training items are
masked to -inf before ranking; score ties break toward the lower item
index (stable sort on descending score). Users whose target split is
empty are excluded from the per-user rows and the aggregates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import user_rows
from .errors import ConfigError
from .model import decode, encode, prepare_input

LOG_ACTIVITY_FLOOR = -30.0


def scores_for_users(values, dims, matrix, users, dtype=np.float64):
    """Posterior-mean decoder logits for the given users (eval mode)."""
    x_in = prepare_input(user_rows(matrix, users, "train", dtype))
    q = encode(values, x_in, dims)
    return decode(values, q.mean)


def rank_topn(scores, train_items=None, n=20, mask_train=True):
    """Top-n item indices for one score row, highest score first.

    Ties resolve toward the lower item index. With mask_train, the user's
    training items are removed from consideration.
    """
    scores = np.array(scores, dtype=np.float64, copy=True)
    if mask_train and train_items is not None and len(train_items):
        scores[train_items] = -np.inf
    order = np.argsort(-scores, kind="stable")
    if mask_train and train_items is not None:
        order = order[: max(0, scores.size - len(train_items))]
    return order[:n]


def recall_at(ranked, relevant, n):
    """|top-n intersect relevant| / |relevant|."""
    if len(relevant) == 0:
        return 0.0
    hits = np.isin(ranked[:n], relevant).sum()
    return float(hits) / len(relevant)


def ndcg_at(ranked, relevant, n):
    """Binary NDCG with 1/log2(k+1) gains at 1-based hit positions."""
    if len(relevant) == 0:
        return 0.0
    hits = np.isin(ranked[:n], relevant)
    positions = np.flatnonzero(hits) + 2  # 1-based rank + 1
    dcg = (1.0 / np.log2(positions)).sum()
    ideal = min(n, len(relevant))
    idcg = (1.0 / np.log2(np.arange(2, ideal + 2))).sum()
    return float(dcg / idcg)


@dataclass
class EvalReport:
    split: str
    cutoffs: tuple
    user_indices: np.ndarray
    per_user: dict
    means: dict
    groups: list = field(default_factory=list)

    def metric_names(self):
        return [f"{kind}@{c}" for kind in ("recall", "ndcg") for c in self.cutoffs]


def _evaluate_chunk(values, dims, matrix, users, cutoffs, targets):
    max_n = max(cutoffs)
    scores = scores_for_users(values, dims, matrix, users)
    rows = np.zeros((len(users), 2 * len(cutoffs)))
    for i, u in enumerate(users):
        ranked = rank_topn(scores[i], matrix.train[u], max_n)
        rel = targets[u]
        for j, c in enumerate(cutoffs):
            rows[i, j] = recall_at(ranked, rel, c)
            rows[i, len(cutoffs) + j] = ndcg_at(ranked, rel, c)
    return rows


def evaluate_model(values, dims, matrix, split="test", cutoffs=(10, 20),
                   threads=1, chunk=1024):
    """Rank the full catalog for every user with a nonempty target split."""
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    if not cutoffs or min(cutoffs) < 1:
        raise ConfigError(f"bad cutoffs {cutoffs}")
    targets = getattr(matrix, split)
    users = np.array([u for u in range(matrix.n_users) if len(targets[u])],
                     dtype=np.int64)
    chunks = [users[s:s + chunk] for s in range(0, len(users), chunk)]
    work = (lambda us: _evaluate_chunk(values, dims, matrix, us, cutoffs, targets))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(us) for us in chunks]
    rows = np.concatenate(parts, axis=0) if parts else np.zeros((0, 2 * len(cutoffs)))
    per_user, means = {}, {}
    for j, c in enumerate(cutoffs):
        per_user[f"recall@{c}"] = rows[:, j]
        per_user[f"ndcg@{c}"] = rows[:, len(cutoffs) + j]
    for name, col in per_user.items():
        means[name] = float(col.mean()) if len(col) else float("nan")
    return EvalReport(split=split, cutoffs=tuple(cutoffs), user_indices=users,
                      per_user=per_user, means=means)


def default_group_edges(degrees):
    """Strictly ascending quartile boundaries of a training-degree sample."""
    qs = np.quantile(degrees.astype(np.float64), [0.25, 0.5, 0.75])
    edges = [float(qs[0])]
    for q in qs[1:]:
        edges.append(max(float(q), edges[-1] + 0.5))
    return tuple(edges)


def sparsity_report(report, matrix, edges=None):
    """Bucket evaluated users by training degree and aggregate metrics.

    edges are three ascending boundaries; group g holds users whose degree
    lies in (edges[g-1], edges[g]], with open ends below and above.
    """
    degrees = matrix.degrees("train")[report.user_indices]
    if edges is None:
        if len(degrees) == 0:
            raise ConfigError("cannot derive group edges without evaluated users")
        edges = default_group_edges(degrees)
    edges = tuple(float(e) for e in edges)
    if len(edges) != 3 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"group edges must be 3 strictly ascending values, got {edges}")
    which = np.searchsorted(edges, degrees, side="left")
    total = len(degrees)
    groups = []
    bounds = [(-np.inf, edges[0]), (edges[0], edges[1]), (edges[1], edges[2]),
              (edges[2], np.inf)]
    key_r = f"recall@{max(report.cutoffs)}"
    key_n = f"ndcg@{max(report.cutoffs)}"
    for g, (lo, hi) in enumerate(bounds):
        members = which == g
        count = int(members.sum())
        groups.append({
            "low": lo, "high": hi, "count": count,
            "proportion": count / total if total else 0.0,
            key_r: float(report.per_user[key_r][members].mean()) if count else float("nan"),
            key_n: float(report.per_user[key_n][members].mean()) if count else float("nan"),
        })
    return groups


def distribution_activity(values, dims, matrix, chunk=4096):
    """ln of the per-dimension population variance of posterior means.

    Variances below e^-30 (including inactive all-constant dims) clamp to
    a log-activity of -30.
    """
    if matrix.n_users < 2:
        raise ConfigError("distribution activity needs at least 2 users")
    parts = []
    for start in range(0, matrix.n_users, chunk):
        users = np.arange(start, min(start + chunk, matrix.n_users))
        x_in = prepare_input(user_rows(matrix, users, "train"))
        parts.append(np.asarray(encode(values, x_in, dims).mean, dtype=np.float64))
    var = np.concatenate(parts, axis=0).var(axis=0)
    out = np.full(dims.latent, LOG_ACTIVITY_FLOOR)
    alive = var > np.exp(LOG_ACTIVITY_FLOOR)
    out[alive] = np.log(var[alive])
    return out
