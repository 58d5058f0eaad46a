"""Interaction parsing, splits, EMB1 files, and the synthetic generator."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distrec.data import (
    EMB1_MAGIC,
    SyntheticSpec,
    batch_iter,
    build_table,
    load_embeddings,
    load_interactions,
    load_mapping,
    save_mapping,
    split_ratio,
    synth_generate,
    user_rows,
    write_embeddings_emb1,
)
from distrec.errors import (
    ConfigError,
    EmptyDatasetError,
    InvalidShapeError,
    MagicError,
    NonFiniteError,
    ParseError,
    TruncatedError,
)
from distrec.numerics import make_rng


def write_tsv(tmp_path, rows, name="data.tsv"):
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return str(path)


# -- interaction parsing --------------------------------------------------------

def test_single_row_file(tmp_path):
    m = load_interactions(write_tsv(tmp_path, ["a\tb"]))
    assert (m.n_users, m.n_items) == (1, 1)
    assert m.user_ids == ["a"] and m.item_ids == ["b"]
    np.testing.assert_array_equal(m.train[0], [0])


def test_min_rating_filters_to_empty(tmp_path):
    path = write_tsv(tmp_path, ["a\tb\t2"])
    with pytest.raises(EmptyDatasetError):
        load_interactions(path, min_rating=3)


def test_rows_without_rating_survive_any_threshold(tmp_path):
    m = load_interactions(write_tsv(tmp_path, ["a\tb", "a\tc\t5"]), min_rating=3)
    assert m.n_items == 2


def test_first_appearance_order_and_duplicate_collapse(tmp_path):
    m = load_interactions(write_tsv(tmp_path, ["u2\tia", "u1\tib", "u2\tia", "u1\tia"]))
    assert m.user_ids == ["u2", "u1"]
    assert m.item_ids == ["ia", "ib"]
    np.testing.assert_array_equal(m.train[0], [0])
    np.testing.assert_array_equal(m.train[1], [0, 1])


def test_bad_field_count_names_the_line(tmp_path):
    path = write_tsv(tmp_path, ["a\tb", "broken"])
    with pytest.raises(ParseError, match=r"\.tsv:2:"):
        load_interactions(path)


def test_bad_rating_names_the_line(tmp_path):
    path = write_tsv(tmp_path, ["a\tb\tx"])
    with pytest.raises(ParseError, match=r"\.tsv:1: bad rating"):
        load_interactions(path)


def test_blank_lines_are_skipped(tmp_path):
    m = load_interactions(write_tsv(tmp_path, ["a\tb", "", "c\td"]))
    assert m.n_users == 2


def test_mapping_round_trip(tmp_path):
    m = load_interactions(write_tsv(tmp_path, ["u\ti", "v\tj"]))
    path = tmp_path / "map.json"
    save_mapping(str(path), m)
    got = load_mapping(str(path))
    assert got == {"users": {"u": 0, "v": 1}, "items": {"i": 0, "j": 1}}


# -- splitting ---------------------------------------------------------------------

def matrix_with_degrees(degrees):
    rows = [f"u{u}\ti{k}" for u, n in enumerate(degrees) for k in range(n)]
    return rows


def test_split_ten_interactions_is_6_2_2(tmp_path):
    m = load_interactions(write_tsv(tmp_path, matrix_with_degrees([10])))
    s = split_ratio(m, rng=make_rng(0))
    assert (len(s.train[0]), len(s.val[0]), len(s.test[0])) == (6, 2, 2)


def test_split_two_interactions_stays_train_only(tmp_path):
    m = load_interactions(write_tsv(tmp_path, matrix_with_degrees([2])))
    s = split_ratio(m, rng=make_rng(0))
    assert (len(s.train[0]), len(s.val[0]), len(s.test[0])) == (2, 0, 0)


def test_split_deterministic_under_seed(tmp_path):
    m = load_interactions(write_tsv(tmp_path, matrix_with_degrees([9, 4, 7])))
    a = split_ratio(m, rng=make_rng(3))
    b = split_ratio(m, rng=make_rng(3))
    for u in range(3):
        np.testing.assert_array_equal(a.train[u], b.train[u])
        np.testing.assert_array_equal(a.val[u], b.val[u])
        np.testing.assert_array_equal(a.test[u], b.test[u])


def test_split_requires_rng():
    with pytest.raises(ConfigError):
        split_ratio(None, rng=None)


@settings(max_examples=50, deadline=None)
@given(degrees=st.lists(st.integers(min_value=1, max_value=30), min_size=1, max_size=8),
       seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_split_partitions_each_users_items(tmp_path_factory, degrees, seed):
    tmp_path = tmp_path_factory.mktemp("split")
    m = load_interactions(write_tsv(tmp_path, matrix_with_degrees(degrees)))
    s = split_ratio(m, rng=make_rng(seed))
    for u, n in enumerate(degrees):
        parts = np.concatenate([s.train[u], s.val[u], s.test[u]])
        np.testing.assert_array_equal(np.sort(parts), np.sort(m.train[u]))
        assert len(s.train[u]) == -(-6 * n // 10)  # ceil(0.6 n)
        assert len(s.train[u]) + len(s.val[u]) + len(s.test[u]) == n
        if n < 3:
            assert len(s.val[u]) == 0 and len(s.test[u]) == 0


# -- embeddings ---------------------------------------------------------------------

def test_emb1_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    table = rng.standard_normal((7, 5)).astype(np.float32)
    path = tmp_path / "t.emb1"
    write_embeddings_emb1(str(path), table)
    got = load_embeddings(str(path))
    np.testing.assert_array_equal(got.astype(np.float32), table)
    write_embeddings_emb1(str(tmp_path / "t2.emb1"), table)
    assert (tmp_path / "t.emb1").read_bytes() == (tmp_path / "t2.emb1").read_bytes()


def test_emb1_header_2x3(tmp_path):
    path = tmp_path / "h.emb1"
    payload = np.arange(6, dtype="<f4").tobytes()
    path.write_bytes(EMB1_MAGIC + b"\n2 3\n" + payload)
    got = load_embeddings(str(path))
    np.testing.assert_array_equal(got, np.arange(6.0).reshape(2, 3))


def test_emb1_row_count_mismatch(tmp_path):
    path = tmp_path / "r.emb1"
    write_embeddings_emb1(str(path), np.zeros((4, 2), dtype=np.float32))
    with pytest.raises(InvalidShapeError):
        load_embeddings(str(path), expected_rows=5)


def test_emb1_nan_entry_names_the_row(tmp_path):
    table = np.zeros((3, 2), dtype=np.float32)
    table[1, 0] = np.nan
    path = tmp_path / "n.emb1"
    path.write_bytes(EMB1_MAGIC + b"\n3 2\n" + table.tobytes())
    with pytest.raises(NonFiniteError, match="row 1"):
        load_embeddings(str(path))


def test_emb1_truncated_payload(tmp_path):
    path = tmp_path / "t.emb1"
    path.write_bytes(EMB1_MAGIC + b"\n2 2\n" + b"\x00" * 7)
    with pytest.raises(TruncatedError):
        load_embeddings(str(path))


def test_emb1_bad_magic(tmp_path):
    path = tmp_path / "m.emb1"
    path.write_bytes(b"NOTMAGIC\n1 1\n" + b"\x00" * 4)
    with pytest.raises(MagicError):
        load_embeddings(str(path))


def test_emb1_bad_header(tmp_path):
    path = tmp_path / "b.emb1"
    path.write_bytes(EMB1_MAGIC + b"\nx y\n")
    with pytest.raises(ParseError):
        load_embeddings(str(path))


def test_csv_embeddings_fallback(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("1.0,2.0\n3.0,4.0\n", encoding="utf-8")
    got = load_embeddings(str(path))
    np.testing.assert_array_equal(got, [[1.0, 2.0], [3.0, 4.0]])


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 12), cols=st.integers(1, 6), seed=st.integers(0, 10**6))
def test_emb1_round_trip_property(tmp_path_factory, rows, cols, seed):
    table = np.random.default_rng(seed).standard_normal((rows, cols)).astype(np.float32)
    path = tmp_path_factory.mktemp("emb") / "p.emb1"
    write_embeddings_emb1(str(path), table)
    np.testing.assert_array_equal(load_embeddings(str(path)).astype(np.float32), table)


def test_build_table_shape_checks(tmp_path):
    m = load_interactions(write_tsv(tmp_path, ["a\tx", "b\ty"]))
    good = build_table(m, np.zeros((2, 3)), np.zeros((2, 3)))
    assert good.width == 3
    with pytest.raises(InvalidShapeError):
        build_table(m, np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(InvalidShapeError):
        build_table(m, np.zeros((2, 3)), np.zeros((1, 3)))
    with pytest.raises(InvalidShapeError):
        build_table(m, np.zeros((2, 3)), np.zeros((2, 4)))


# -- synthetic corpus ------------------------------------------------------------------

def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        synth_generate(SyntheticSpec(p_in=0.05, p_out=0.05), make_rng(0))
    with pytest.raises(ConfigError):
        synth_generate(SyntheticSpec(p_in=0.05, p_out=0.06), make_rng(0))
    with pytest.raises(ConfigError):
        synth_generate(SyntheticSpec(clusters=1), make_rng(0))
    with pytest.raises(ConfigError):
        synth_generate(SyntheticSpec(clusters=40, embedding_dim=32), make_rng(0))


def test_synth_is_deterministic():
    a, ta = synth_generate(SyntheticSpec(users=60, items=40), make_rng(5))
    b, tb = synth_generate(SyntheticSpec(users=60, items=40), make_rng(5))
    assert a.user_ids == b.user_ids
    for u in range(a.n_users):
        np.testing.assert_array_equal(a.train[u], b.train[u])
    np.testing.assert_array_equal(ta.user_matrix, tb.user_matrix)
    np.testing.assert_array_equal(ta.item_matrix, tb.item_matrix)


def test_synth_pure_intra_cluster_when_p_out_zero():
    spec = SyntheticSpec(users=60, items=40, clusters=4, p_in=0.5, p_out=0.0, noise=0.0)
    m, table = synth_generate(spec, make_rng(1))
    item_cluster = np.arange(m.n_items) % 4
    for u, uid in enumerate(m.user_ids):
        cluster = int(uid[1:]) % 4
        assert np.all(item_cluster[m.train[u]] == cluster)
    # noiseless informative embeddings are exact one-hots per cluster
    for j in range(m.n_items):
        want = np.zeros(spec.embedding_dim)
        want[item_cluster[j]] = 1.0
        np.testing.assert_array_equal(table.item_matrix[j], want)


def test_synth_mean_degree_matches_simulated_expectation():
    # E[degree] = 40*p_in + 160*p_out = 4.0 before conditioning on nonempty
    means = []
    for seed in range(10):
        m, _ = synth_generate(SyntheticSpec(), make_rng(seed))
        means.append(np.mean([len(t) for t in m.train]))
    assert 3.5 <= float(np.mean(means)) <= 4.6
    assert min(means) > 3.0 and max(means) < 5.0


def test_synth_non_informative_embeddings_carry_no_cluster_signal():
    spec = SyntheticSpec(informative=False)
    m, table = synth_generate(spec, make_rng(0))
    norms = np.linalg.norm(table.user_matrix, axis=1, keepdims=True)
    unit = table.user_matrix / norms
    clusters = np.array([int(uid[1:]) for uid in m.user_ids]) % spec.clusters
    sims = unit @ unit.T
    co = (clusters[:, None] == clusters[None, :]).astype(float)
    iu = np.triu_indices(m.n_users, k=1)
    r = np.corrcoef(sims[iu], co[iu])[0, 1]
    assert abs(r) < 0.05


def test_synth_non_informative_norm_is_matched():
    spec = SyntheticSpec(users=2000, items=10, p_in=0.9, p_out=0.1)
    _, informative = synth_generate(SyntheticSpec(users=2000, items=10, p_in=0.9,
                                                  p_out=0.1), make_rng(2))
    _, noise = synth_generate(SyntheticSpec(users=2000, items=10, p_in=0.9, p_out=0.1,
                                            informative=False), make_rng(2))
    a = np.mean(np.sum(informative.user_matrix ** 2, axis=1))
    b = np.mean(np.sum(noise.user_matrix ** 2, axis=1))
    assert abs(a - b) / a < 0.05


# -- batching ---------------------------------------------------------------------------

def test_batch_sizes_4_4_2():
    sizes = [len(b) for b in batch_iter(10, 4, make_rng(0))]
    assert sizes == [4, 4, 2]


def test_batches_without_shuffle_are_ascending():
    order = np.concatenate(list(batch_iter(7, 3, shuffle=False)))
    np.testing.assert_array_equal(order, np.arange(7))


def test_shuffled_batches_cover_every_user_once():
    order = np.concatenate(list(batch_iter(11, 4, make_rng(1))))
    np.testing.assert_array_equal(np.sort(order), np.arange(11))


def test_batch_iter_validation():
    with pytest.raises(ConfigError):
        list(batch_iter(5, 0, make_rng(0)))
    with pytest.raises(ConfigError):
        list(batch_iter(5, 2, rng=None, shuffle=True))


def test_user_rows_densify_the_requested_split(tmp_path):
    m = load_interactions(write_tsv(tmp_path, ["a\tx", "a\ty", "b\ty"]))
    rows = user_rows(m, np.array([0, 1]))
    np.testing.assert_array_equal(rows, [[1.0, 1.0], [0.0, 1.0]])
