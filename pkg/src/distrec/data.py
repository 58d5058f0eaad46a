"""Datasets: interaction loading, splits, embedding tables, synthetic corpora.

Interactions arrive as TSV rows `user<TAB>item[<TAB>rating]`. Embedding
tables arrive either as EMB1 binary (magic line, ASCII `<rows> <cols>`
header, little-endian float32 row-major payload) or as plain CSV. External
ids are remapped to contiguous indices in first-appearance order, with the
mapping persisted as a JSON sidecar.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    InvalidShapeError,
    MagicError,
    NonFiniteError,
    ParseError,
    TruncatedError,
)

EMB1_MAGIC = b"DMEMB1"


@dataclass
class InteractionMatrix:
    """Per-user sorted item-index arrays for the train/val/test splits."""

    n_users: int
    n_items: int
    user_ids: list
    item_ids: list
    train: list
    val: list
    test: list

    def degrees(self, split="train"):
        return np.array([len(items) for items in getattr(self, split)], dtype=np.int64)


@dataclass
class MetaKnowledgeTable:
    """Precomputed semantic embeddings: one row per user and per item."""

    user_matrix: np.ndarray
    item_matrix: np.ndarray

    @property
    def width(self):
        return self.item_matrix.shape[1]


@dataclass
class SyntheticSpec:
    users: int = 400
    items: int = 200
    clusters: int = 5
    p_in: float = 0.08
    p_out: float = 0.005
    embedding_dim: int = 32
    noise: float = 0.1
    informative: bool = True


def _empty_splits(n_users):
    empty = np.zeros(0, dtype=np.int64)
    return [empty.copy() for _ in range(n_users)]


def load_interactions(path, min_rating=None):
    """Parse a TSV interaction file into an unsplit InteractionMatrix.

    Rows below min_rating are dropped (rows without a rating column are
    always kept). Duplicate (user, item) pairs collapse to one.
    """
    user_index, item_index = {}, {}
    user_ids, item_ids = [], []
    pairs = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ParseError(path, line_no, f"expected 2 or 3 fields, got {len(fields)}")
            if len(fields) == 3:
                try:
                    rating = float(fields[2])
                except ValueError:
                    raise ParseError(path, line_no, f"bad rating {fields[2]!r}") from None
                if min_rating is not None and rating < min_rating:
                    continue
            uid, iid = fields[0], fields[1]
            if uid not in user_index:
                user_index[uid] = len(user_ids)
                user_ids.append(uid)
            if iid not in item_index:
                item_index[iid] = len(item_ids)
                item_ids.append(iid)
            pairs.add((user_index[uid], item_index[iid]))
    if not pairs:
        raise EmptyDatasetError(f"no interactions survive in {path}")
    train = [[] for _ in user_ids]
    for u, i in pairs:
        train[u].append(i)
    train = [np.array(sorted(items), dtype=np.int64) for items in train]
    n_users, n_items = len(user_ids), len(item_ids)
    return InteractionMatrix(n_users, n_items, user_ids, item_ids,
                             train, _empty_splits(n_users), _empty_splits(n_users))


def save_mapping(path, matrix):
    """Persist the id -> index mapping as a JSON sidecar."""
    payload = {
        "users": {uid: idx for idx, uid in enumerate(matrix.user_ids)},
        "items": {iid: idx for idx, iid in enumerate(matrix.item_ids)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_mapping(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def split_ratio(matrix, ratio=(0.6, 0.2, 0.2), rng=None):
    """Redistribute each user's items into train/val/test by the given ratio.

    Counts per user: train = ceil(r0*n), val = ceil((n-train)*r1/(r1+r2)),
    test = remainder; users with fewer than 3 interactions stay train-only.
    """
    if rng is None:
        raise ConfigError("split_ratio needs an rng")
    r0, r1, r2 = ratio
    if min(ratio) < 0 or r0 <= 0 or (r1 + r2) <= 0:
        raise ConfigError(f"bad split ratio {ratio}")
    train, val, test = [], [], []
    for u in range(matrix.n_users):
        items = np.concatenate([matrix.train[u], matrix.val[u], matrix.test[u]])
        n = len(items)
        perm = items[rng.permutation(n)]
        n_train = min(n, math.ceil(r0 / (r0 + r1 + r2) * n))
        n_val = math.ceil((n - n_train) * r1 / (r1 + r2))
        train.append(np.sort(perm[:n_train]))
        val.append(np.sort(perm[n_train:n_train + n_val]))
        test.append(np.sort(perm[n_train + n_val:]))
    return InteractionMatrix(matrix.n_users, matrix.n_items,
                             matrix.user_ids, matrix.item_ids, train, val, test)


def write_embeddings_emb1(path, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise InvalidShapeError(f"embedding table must be 2-D, got {arr.ndim}-D")
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC + b"\n")
        fh.write(f"{arr.shape[0]} {arr.shape[1]}\n".encode("ascii"))
        fh.write(arr.tobytes())


def _check_finite_rows(arr, path):
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise NonFiniteError(f"{path}: non-finite embedding entry at row {row}")


def load_embeddings(path, expected_rows=None):
    """Read an embedding table (EMB1 binary by magic, CSV otherwise) as float64."""
    with open(path, "rb") as fh:
        head = fh.read(len(EMB1_MAGIC) + 1)
        if head == EMB1_MAGIC + b"\n":
            header = fh.readline().decode("ascii", errors="replace").strip()
            parts = header.split()
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise ParseError(path, 2, f"bad EMB1 header {header!r}")
            rows, cols = int(parts[0]), int(parts[1])
            payload = fh.read(rows * cols * 4)
            if len(payload) != rows * cols * 4:
                raise TruncatedError(f"{path}: EMB1 payload ends early")
            arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
        elif head[:len(EMB1_MAGIC)] == EMB1_MAGIC or str(path).endswith(".emb1"):
            raise MagicError(f"{path}: missing or malformed EMB1 magic line")
        else:
            try:
                arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
            except ValueError as exc:
                raise ParseError(path, 0, f"bad CSV embedding table: {exc}") from None
    if expected_rows is not None and arr.shape[0] != expected_rows:
        raise InvalidShapeError(
            f"{path}: expected {expected_rows} embedding rows, found {arr.shape[0]}")
    _check_finite_rows(arr, path)
    return arr


def build_table(matrix, user_matrix, item_matrix):
    """Assemble and validate the semantic table against the dataset shape."""
    user_matrix = np.asarray(user_matrix, dtype=np.float64)
    item_matrix = np.asarray(item_matrix, dtype=np.float64)
    if user_matrix.shape[0] != matrix.n_users:
        raise InvalidShapeError(
            f"user table has {user_matrix.shape[0]} rows for {matrix.n_users} users")
    if item_matrix.shape[0] != matrix.n_items:
        raise InvalidShapeError(
            f"item table has {item_matrix.shape[0]} rows for {matrix.n_items} items")
    if user_matrix.shape[1] != item_matrix.shape[1]:
        raise InvalidShapeError(
            f"user width {user_matrix.shape[1]} != item width {item_matrix.shape[1]}")
    _check_finite_rows(user_matrix, "<user table>")
    _check_finite_rows(item_matrix, "<item table>")
    return MetaKnowledgeTable(user_matrix=user_matrix, item_matrix=item_matrix)


MAX_RESAMPLE_ROUNDS = 20


def synth_generate(spec, rng):
    """Clustered synthetic corpus plus embeddings keyed to the clusters.

    Interactions are Bernoulli draws: p_in for same-cluster (user, item)
    pairs, p_out otherwise. Zero-interaction users are redrawn a bounded
    number of rounds, then dropped. Informative embeddings are the cluster
    one-hot plus Gaussian noise; non-informative ones are pure noise with
    the same expected norm.
    """
    if spec.clusters < 2 or spec.clusters > spec.embedding_dim:
        raise ConfigError(
            f"clusters must lie in [2, embedding_dim], got {spec.clusters}")
    if not (0.0 <= spec.p_out < spec.p_in <= 1.0):
        raise ConfigError(f"need 0 <= p_out < p_in <= 1, got {spec.p_in}, {spec.p_out}")
    m, n, k = spec.users, spec.items, spec.clusters
    user_cluster = np.arange(m) % k
    item_cluster = np.arange(n) % k
    same = user_cluster[:, None] == item_cluster[None, :]
    prob = np.where(same, spec.p_in, spec.p_out)
    hits = rng.random((m, n)) < prob
    for _ in range(MAX_RESAMPLE_ROUNDS):
        empty = ~hits.any(axis=1)
        if not empty.any():
            break
        hits[empty] = rng.random((int(empty.sum()), n)) < prob[empty]
    keep = hits.any(axis=1)
    hits, user_cluster = hits[keep], user_cluster[keep]
    m = int(keep.sum())
    if m == 0:
        raise EmptyDatasetError("synthetic spec produced no interactions")

    def embed(clusters):
        count = len(clusters)
        if spec.informative:
            base = np.zeros((count, spec.embedding_dim))
            base[np.arange(count), clusters] = 1.0
            return base + spec.noise * rng.standard_normal((count, spec.embedding_dim))
        scale = np.sqrt((1.0 + spec.noise ** 2 * spec.embedding_dim) / spec.embedding_dim)
        return scale * rng.standard_normal((count, spec.embedding_dim))

    user_emb = embed(user_cluster)
    item_emb = embed(item_cluster)
    user_ids = [f"u{i}" for i in np.flatnonzero(keep)]
    item_ids = [f"i{j}" for j in range(n)]
    train = [np.flatnonzero(hits[u]).astype(np.int64) for u in range(m)]
    matrix = InteractionMatrix(m, n, user_ids, item_ids,
                               train, _empty_splits(m), _empty_splits(m))
    table = MetaKnowledgeTable(user_matrix=user_emb, item_matrix=item_emb)
    return matrix, table


def batch_iter(n_users, batch_size, rng=None, shuffle=True):
    """Yield user-index batches; shuffled order needs an rng."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise ConfigError("shuffled batching needs an rng")
        order = rng.permutation(n_users)
    else:
        order = np.arange(n_users)
    for start in range(0, n_users, batch_size):
        yield order[start:start + batch_size]


def user_rows(matrix, users, split="train", dtype=np.float64):
    """Dense binary interaction rows for the given users."""
    lists = getattr(matrix, split)
    out = np.zeros((len(users), matrix.n_items), dtype=dtype)
    for row, u in enumerate(users):
        out[row, lists[u]] = 1.0
    return out
