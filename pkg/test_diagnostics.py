# test_diagnostics.py
import numpy as np
import pytest

from config import DEFAULT_EMBEDDINGS
from diagnostics import (
    DiagnosticsError, anisotropy_chi_square, anisotropy_profile, convergence_frame, cross_corpus_convergence,
    default_sample_points, histogram_frame, isotropic_chi_square_limit, prefix_trace, read_stream, sample_streams,
    text_stream, trace_frame,
)
from embedding_store import EmbeddingTable, UnrepresentableTextError, load_table


def _table(vectors, prefix="w"):
    vectors = np.asarray(vectors, dtype=float)
    return EmbeddingTable(tuple(f"{prefix}{i}" for i in range(len(vectors))), vectors)


def test_one_hot_table_piles_into_one_dimension():
    vectors = np.zeros((20, 5))
    vectors[:, 0] = np.arange(1, 21)
    profile = anisotropy_profile(_table(vectors))
    assert list(profile.argmax_counts) == [20, 0, 0, 0, 0]
    assert profile.argmax_counts.sum() == profile.vocab_size == 20
    assert anisotropy_chi_square(profile) == pytest.approx(80.0)
    assert anisotropy_chi_square(profile) > isotropic_chi_square_limit(5)


def test_profile_uses_magnitude_and_ignores_row_order():
    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(300, 7))
    vectors[0] = [0.1, -5.0, 0.2, 0, 0, 0, 0]
    profile = anisotropy_profile(_table(vectors))
    shuffled = anisotropy_profile(_table(vectors[rng.permutation(300)]))
    np.testing.assert_array_equal(profile.argmax_counts, shuffled.argmax_counts)
    assert profile.argmax_counts.sum() == 300
    single = anisotropy_profile(_table(vectors[:1]))
    assert list(single.argmax_counts) == [0, 1, 0, 0, 0, 0, 0]


def test_isotropic_table_is_near_uniform():
    rng = np.random.default_rng(1)
    profile = anisotropy_profile(_table(rng.normal(size=(10000, 10))))
    # multinomial with p = 0.1: every bin within 4 standard deviations of 1000
    sigma = np.sqrt(10000 * 0.1 * 0.9)
    assert np.all(np.abs(profile.argmax_counts - 1000) <= 4 * sigma)
    frame = histogram_frame(profile)
    assert list(frame.columns) == ["dim", "count"]
    assert list(frame["dim"]) == list(range(10))


def test_empty_table_profile():
    with pytest.raises(DiagnosticsError):
        anisotropy_profile(EmbeddingTable((), np.zeros((0, 3))))


def test_default_sample_points():
    assert default_sample_points(5000) == [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000]
    assert default_sample_points(7) == [1, 2, 5]


def test_repeated_word_trace_is_flat():
    table = _table([[0.5, -2.0, 1.5], [1.0, 1.0, 1.0]])
    trace = prefix_trace(table, ["w0"] * 60)
    assert list(trace.positions) == [1, 2, 5, 10, 20, 50]
    np.testing.assert_array_equal(trace.max_mean, np.full(6, 1.5))
    np.testing.assert_array_equal(trace.min_mean, np.full(6, -2.0))
    np.testing.assert_array_equal(trace.max_raw, trace.max_mean)


def test_incremental_means_match_direct_means():
    rng = np.random.default_rng(2)
    table = _table(rng.normal(size=(500, 6)))
    stream = [f"w{i}" for i in rng.integers(0, 500, size=300)]
    points = [1, 3, 17, 100, 299, 300]
    trace = prefix_trace(table, stream, points, retain_means=True)
    vectors = np.array([table.vector(t) for t in stream])
    for row, n in enumerate(points):
        np.testing.assert_allclose(trace.means[row], vectors[:n].mean(axis=0), atol=1e-10)
        np.testing.assert_array_equal(trace.max_raw[row], vectors[n - 1].max())
    assert trace.max_mean[0] == trace.max_raw[0]
    assert trace.min_mean[0] == trace.min_raw[0]
    assert prefix_trace(table, stream, points).means is None


def test_sample_points_past_the_stream_are_dropped():
    table = _table(np.eye(3))
    trace = prefix_trace(table, ["w0", "w1", "w2"], [1, 2, 5, 10])
    assert list(trace.positions) == [1, 2]
    assert list(trace_frame(trace).columns) == ["n", "max_raw", "min_raw", "max_mean", "min_mean"]


def test_out_of_vocabulary_tokens_are_skipped():
    table = _table(np.eye(3))
    trace = prefix_trace(table, ["w0", "unknown", "w1"], [1, 2])
    np.testing.assert_allclose(trace.max_mean, [1.0, 0.5])
    with pytest.raises(UnrepresentableTextError):
        prefix_trace(table, ["unknown", "other"])


def test_text_stream_keeps_stopwords(tmp_path):
    table = EmbeddingTable(("the", "river", "water"), np.eye(3))
    assert text_stream(table, "The river’s water and the sea") == ["the", "river", "water", "the"]
    path = tmp_path / "text.txt"
    path.write_text("water the river", encoding="utf-8")
    assert read_stream(table, path) == ["water", "the", "river"]
    with pytest.raises(FileNotFoundError):
        read_stream(table, tmp_path / "missing.txt")


def test_identical_streams_converge_at_once():
    rng = np.random.default_rng(3)
    table = _table(rng.normal(size=(200, 8)))
    stream = [f"w{i}" for i in rng.integers(0, 200, size=120)]
    values = cross_corpus_convergence(table, stream, stream)
    assert [n for n, _ in values] == [1, 2, 5, 10, 20, 50, 100]
    assert all(c == pytest.approx(1.0, abs=1e-12) for _, c in values)


def test_convergence_matches_naive_oracle():
    rng = np.random.default_rng(4)
    table = _table(rng.normal(size=(300, 5)))
    a, b = sample_streams(table, 100, seed=4)
    values = cross_corpus_convergence(table, a, b, [1, 10, 100])
    va = np.array([table.vector(t) for t in a])
    vb = np.array([table.vector(t) for t in b])
    for n, c in values:
        u, v = va[:n].mean(axis=0), vb[:n].mean(axis=0)
        assert c == pytest.approx(float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v))), abs=1e-9)


def test_zero_norm_prefix_mean_is_empty():
    table = EmbeddingTable(("up", "down", "x"), np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]))
    values = cross_corpus_convergence(table, ["up", "down"], ["x", "x"], [1, 2])
    assert values == [(1, 0.0), (2, None)]
    frame = convergence_frame(values)
    assert frame["cosine"].isna().tolist() == [False, True]


def test_sample_streams_are_disjoint():
    table = _table(np.eye(50))
    a, b = sample_streams(table, 20, seed=1)
    assert len(a) == len(b) == 20
    assert not set(a) & set(b)
    assert sample_streams(table, 20, seed=1) == [a, b]
    with pytest.raises(DiagnosticsError):
        sample_streams(table, 30, seed=1)


def test_anisotropic_table_converges_with_length():
    rng = np.random.default_rng(5)
    vectors = 0.5 * np.ones((20000, 50)) + rng.normal(size=(20000, 50))
    table = _table(vectors)
    early, late = [], []
    for seed in range(20):
        a, b = sample_streams(table, 5000, seed=seed)
        (_, c100), (_, c5000) = cross_corpus_convergence(table, a, b, [100, 5000])
        early.append(c100)
        late.append(c5000)
    assert np.median(late) > np.median(early)


@pytest.mark.skipif(not DEFAULT_EMBEDDINGS, reason="MEDIATION_EMBEDDINGS is not set")
def test_real_table_is_anisotropic_and_converges():
    table = load_table(DEFAULT_EMBEDDINGS, max_terms=100_000)
    profile = anisotropy_profile(table)
    assert anisotropy_chi_square(profile) > isotropic_chi_square_limit(table.dim)
    wins = 0
    for seed in range(20):
        a, b = sample_streams(table, 5000, seed=seed)
        (_, c100), (_, c5000) = cross_corpus_convergence(table, a, b, [100, 5000])
        wins += c5000 > c100
    assert wins >= 18
