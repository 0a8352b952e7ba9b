# test_party_distance.py
import numpy as np
import pytest

from conftest import TOY_VECTORS, make_corpus
from corpus_ingest import Comment, Corpus
from embedding_store import ContextualBackend, DocVector, EmbeddingTable, StaticBackend, ZeroNormError, cosine
from party_distance import (
    DistanceError, PartyPosition, PositionError, activity_counts, distance_frame, distance_lines,
    _perturbation_units, _perturbed_position, equal_width_bounds, estimate_uncertainty, pairwise_frame,
    pairwise_matrix, party_position, period_key, reference_average, similarity_levels,
)
from utils import Tokenizer

PLAIN = Tokenizer(stopwords=set())
WORDS = list(TOY_VECTORS)


def _position(party, vector):
    return PartyPosition(party, None, None, np.asarray(vector, dtype=float), 1, 1)


def _token_mean(texts):
    tokens = [t for text in texts for t in text.split() if t in TOY_VECTORS]
    return np.mean([TOY_VECTORS[t] for t in tokens], axis=0)


def _random_corpus(rng, parties, n=40, years=(2019,)):
    rows = [(str(rng.choice(parties)), " ".join(rng.choice(WORDS, size=int(rng.integers(1, 8)))),
             int(rng.choice(years))) for _ in range(n)]
    return make_corpus(rows)


def test_period_key():
    comment = Comment(0, "x", "f.txt", 2019, 6, "A", "B")
    assert period_key(comment) == "2019"
    assert period_key(comment, "year-month") == "2019-06"
    with pytest.raises(ValueError):
        period_key(comment, "week")


def test_single_comment_position_is_its_vector(static_backend):
    corpus = make_corpus([("A", "water river")])
    position = party_position(corpus, static_backend, "A")
    np.testing.assert_array_equal(position.vector, static_backend.doc_vector(corpus.comments[0]).vector)
    assert position.comment_count == 1
    assert position.word_count == 2


def test_equal_length_comments_give_midpoint(static_backend):
    corpus = make_corpus([("A", "water"), ("A", "army")])
    np.testing.assert_allclose(party_position(corpus, static_backend, "A").vector, [0.5, 0.5, 0.0])


def test_position_is_mean_over_all_tokens(static_backend):
    corpus = make_corpus([("A", "water water river"), ("A", "army"), ("B", "budget")])
    position = party_position(corpus, static_backend, "A")
    np.testing.assert_allclose(position.vector, _token_mean(["water water river", "army"]), atol=1e-12)


def test_comment_weighting(static_backend):
    corpus = make_corpus([("A", "water water water"), ("A", "army")])
    position = party_position(corpus, static_backend, "A", weighting="comment")
    np.testing.assert_allclose(position.vector, [0.5, 0.5, 0.0], atol=1e-12)


def test_party_without_comments(static_backend):
    corpus = make_corpus([("A", "water")])
    with pytest.raises(PositionError) as error:
        party_position(corpus, static_backend, "B", issue="Water")
    assert error.value.party == "B"
    assert error.value.issue == "Water"


def test_reference_average():
    identical = reference_average([_position("A", [1.0, 2.0]), _position("B", [1.0, 2.0])])
    np.testing.assert_array_equal(identical.vector, [1.0, 2.0])
    assert identical.parties_included == ("A", "B")

    opposite = reference_average([_position("A", [1.0, 0.0]), _position("B", [-1.0, 0.0])])
    np.testing.assert_array_equal(opposite.vector, [0.0, 0.0])
    with pytest.raises(ZeroNormError):
        cosine([1.0, 0.0], opposite.vector)

    rng = np.random.default_rng(0)
    vectors = rng.normal(size=(4, 6))
    average = reference_average([_position(p, v) for p, v in zip("ABCD", vectors)])
    np.testing.assert_allclose(average.vector, vectors.mean(axis=0), atol=1e-12)


def test_reference_average_errors():
    with pytest.raises(DistanceError):
        reference_average([_position("A", [1.0, 0.0])])
    with pytest.raises(DistanceError):
        reference_average([_position("A", [1.0, 0.0]), _position("B", [1.0, 0.0, 0.0])])


def test_identical_text_gives_similarity_one(static_backend):
    corpus = make_corpus([("A", "water army"), ("B", "water army"), ("C", "water army")])
    report = distance_lines(corpus, static_backend, ["A", "B", "C"], {"All": None})
    assert len(report.entries) == 3
    assert all(e.similarity == pytest.approx(1.0, abs=1e-12) for e in report.entries)


def test_baseline_reference(static_backend):
    corpus = make_corpus([("A", "water"), ("B", "army"), ("C", "water river")])
    report = distance_lines(corpus, static_backend, ["B", "C"], {"All": None}, reference_kind="baseline",
                            baseline_party="A")
    by_party = {e.party: e.similarity for e in report.entries}
    assert by_party["A"] == pytest.approx(1.0)
    assert by_party["B"] == pytest.approx(0.0, abs=1e-12)
    assert report.references[("All", "2019")].kind == "baseline(A)"

    hidden = distance_lines(corpus, static_backend, ["B", "C"], {"All": None}, reference_kind="baseline",
                            baseline_party="A", show_baseline_line=False)
    assert [e.party for e in hidden.entries] == ["B", "C"]
    with pytest.raises(DistanceError):
        distance_lines(corpus, static_backend, ["B"], {"All": None}, reference_kind="baseline")


def test_missing_party_is_a_gap(static_backend):
    corpus = make_corpus([("A", "water"), ("B", "army"), ("C", "budget", 2020)])
    report = distance_lines(corpus, static_backend, ["A", "B", "C"], {"All": None})
    gaps = {(e.party, e.period) for e in report.entries if e.similarity is None}
    # a single position in 2020 cannot form an average reference, so even C is a gap there
    assert gaps == {("C", "2019"), ("A", "2020"), ("B", "2020"), ("C", "2020")}
    gap = next(e for e in report.entries if (e.party, e.period) == ("C", "2019"))
    assert gap.word_count == 0
    assert ("All", "2020") not in report.references
    frame = distance_frame(report)
    assert list(frame.columns) == ["party", "issue", "period", "similarity", "uncertainty", "word_count", "backend"]
    assert frame["similarity"].isna().sum() == 4


def test_distance_lines_match_brute_force(static_backend):
    rng = np.random.default_rng(1)
    parties = ["A", "B", "C", "D"]
    corpus = _random_corpus(rng, parties, n=60, years=(2019, 2020))
    members = frozenset(c.comment_id for c in corpus if c.comment_id % 3)
    report = distance_lines(corpus, static_backend, parties, {"Some": members})
    for period in ("2019", "2020"):
        texts = {p: [c.text for c in corpus
                     if c.participant_org == p and c.comment_id in members and str(c.year) == period]
                 for p in parties}
        positions = {p: _token_mean(t) for p, t in texts.items() if t}
        reference = np.mean(list(positions.values()), axis=0)
        for entry in report.entries:
            if entry.period != period:
                continue
            if entry.party in positions:
                oracle = cosine(positions[entry.party], reference)
                assert entry.similarity == pytest.approx(oracle, abs=1e-9)
            else:
                assert entry.similarity is None


def test_zero_norm_reference_gives_gaps():
    table = EmbeddingTable(("up", "down"), np.array([[1.0, 0.0], [-1.0, 0.0]]))
    backend = StaticBackend(table, PLAIN)
    corpus = make_corpus([("A", "up"), ("B", "down")])
    report = distance_lines(corpus, backend, ["A", "B"], {"All": None})
    assert [e.similarity for e in report.entries] == [None, None]
    assert [e.word_count for e in report.entries] == [1, 1]


def test_uncertainty_is_independent_of_worker_count(static_backend):
    rng = np.random.default_rng(2)
    corpus = _random_corpus(rng, ["A", "B", "C"], n=60)
    kwargs = dict(n_resamples=20, seed=5)
    serial = distance_lines(corpus, static_backend, ["A", "B", "C"], {"All": None}, max_workers=1, **kwargs)
    parallel = distance_lines(corpus, static_backend, ["A", "B", "C"], {"All": None}, max_workers=4, **kwargs)
    assert [e.uncertainty for e in serial.entries] == [e.uncertainty for e in parallel.entries]
    assert all(e.uncertainty is not None and e.uncertainty >= 0 for e in serial.entries)


def test_uncertainty_of_repeated_word_is_zero(static_backend):
    corpus = make_corpus([("A", " ".join(["water"] * 100))])
    assert estimate_uncertainty(corpus, static_backend, "A", n_resamples=30) == pytest.approx(0.0, abs=1e-12)


def test_tiny_fraction_removes_nothing(static_backend):
    rng = np.random.default_rng(3)
    corpus = make_corpus([("A", " ".join(rng.choice(WORDS, size=100)))])
    assert estimate_uncertainty(corpus, static_backend, "A", fraction=0.001, n_resamples=30) == 0.0


def test_uncertainty_is_reproducible(static_backend):
    rng = np.random.default_rng(4)
    corpus = make_corpus([("A", " ".join(rng.choice(WORDS, size=60))), ("A", " ".join(rng.choice(WORDS, size=40)))])
    first = estimate_uncertainty(corpus, static_backend, "A", n_resamples=50, seed=9)
    second = estimate_uncertainty(corpus, static_backend, "A", n_resamples=50, seed=9)
    assert first == second
    assert first > 0


def test_uncertainty_with_too_little_text(static_backend):
    corpus = make_corpus([("A", "water")])
    with pytest.raises(PositionError, match="insufficient data"):
        estimate_uncertainty(corpus, static_backend, "A", fraction=0.9, n_resamples=10)
    with pytest.raises(ValueError):
        estimate_uncertainty(corpus, static_backend, "A", fraction=1.0)


def test_uncertainty_on_contextual_backend():
    rng = np.random.default_rng(5)
    corpus = make_corpus([("A", "one two three four")] * 6)
    vectors = {i: DocVector(i, rng.normal(size=8), 1.0) for i in range(6)}
    backend = ContextualBackend(vectors, PLAIN)
    first = estimate_uncertainty(corpus, backend, "A", fraction=0.2, n_resamples=40, seed=1)
    assert first == estimate_uncertainty(corpus, backend, "A", fraction=0.2, n_resamples=40, seed=1)
    assert np.isfinite(first) and first >= 0


def test_pairwise_identical_text(static_backend):
    corpus = make_corpus([("A", "oil army"), ("B", "oil army"), ("C", "oil army")])
    matrix = pairwise_matrix(corpus, static_backend, ["A", "B", "C"])
    np.testing.assert_allclose(matrix.sims, 1.0, atol=1e-12)
    assert np.all(matrix.levels == 0)


def test_pairwise_matches_double_loop(static_backend):
    rng = np.random.default_rng(6)
    parties = ["A", "B", "C", "D"]
    corpus = _random_corpus(rng, parties, n=50)
    matrix = pairwise_matrix(corpus, static_backend, parties)
    positions = [_token_mean([c.text for c in corpus if c.participant_org == p]) for p in parties]
    for i in range(4):
        assert matrix.sims[i, i] == 1.0
        for j in range(4):
            assert matrix.sims[i, j] == matrix.sims[j, i]
            if i != j:
                assert matrix.sims[i, j] == pytest.approx(cosine(positions[i], positions[j]), abs=1e-9)
    assert set(np.unique(matrix.levels)) <= {0, 1, 2, 3}
    off = matrix.sims[~np.eye(4, dtype=bool)]
    assert matrix.levels[np.unravel_index(np.argmax(np.where(np.eye(4, dtype=bool), -2, matrix.sims)), (4, 4))] == 0
    assert matrix.bounds == pytest.approx(equal_width_bounds(matrix.sims))
    assert min(matrix.bounds) >= off.min() and max(matrix.bounds) <= off.max()


def test_pairwise_names_missing_party(static_backend):
    corpus = make_corpus([("A", "water"), ("B", "army")])
    with pytest.raises(PositionError) as error:
        pairwise_matrix(corpus, static_backend, ["A", "Z", "B"])
    assert error.value.party == "Z"


def test_similarity_levels_with_explicit_bounds():
    levels = similarity_levels(np.array([0.95, 0.9, 0.8, 0.5, 0.1]), (0.3, 0.6, 0.9))
    assert list(levels) == [0, 0, 1, 2, 3]


def test_pairwise_frame_layout(static_backend):
    corpus = make_corpus([("A", "water"), ("B", "army"), ("C", "oil")])
    frame = pairwise_frame(pairwise_matrix(corpus, static_backend, ["A", "B", "C"], bucket_bounds=(0.2, 0.4, 0.6)))
    assert list(frame.columns) == ["kind", "party", "A", "B", "C"]
    assert list(frame["kind"]) == ["similarity"] * 3 + ["level"] * 3 + ["bounds"]
    assert frame.iloc[-1]["party"] == "0.2;0.4;0.6"


def test_activity_counts_multi_issue():
    corpus = make_corpus([("A", "one two three four five six seven eight nine ten")])
    frame = activity_counts(corpus, {0: ["X", "Y"]}, issues=["X", "Y", "Z"])
    assert list(frame.itertuples(index=False, name=None)) == [("X", 10, 1), ("Y", 10, 1), ("Z", 0, 0)]


def test_activity_counts_multi_party_counts_for_each():
    corpus = make_corpus([("A", "one two three", 2019, 6, ("A", "B")), ("C", "four")])
    frame = activity_counts(corpus, {0: ["X"], 1: ["X"]}, group_by="issue-party")
    assert list(frame.itertuples(index=False, name=None)) == [("X", "A", 3, 1), ("X", "B", 3, 1), ("X", "C", 1, 1)]


def test_activity_counts_match_brute_force():
    rng = np.random.default_rng(7)
    corpus = _random_corpus(rng, ["A", "B", "C"], n=80, years=(2018, 2019, 2020))
    issues = ["X", "Y", "Z"]
    assignments = {c.comment_id: list(rng.choice(issues, size=int(rng.integers(0, 3)), replace=False))
                   for c in corpus}
    frame = activity_counts(corpus, assignments, group_by="issue-period", issues=issues)
    for row in frame.itertuples(index=False):
        words = sum(c.word_count for c in corpus
                    if row.issue in assignments[c.comment_id] and period_key(c) == row.period)
        assert row.words == words
    with pytest.raises(ValueError):
        activity_counts(corpus, assignments, group_by="party")


def test_empty_corpus_activity():
    frame = activity_counts(Corpus(), {}, issues=["X"])
    assert list(frame.itertuples(index=False, name=None)) == [("X", 0, 0)]


def test_other_positions_are_unchanged_by_new_comments(static_backend):
    rng = np.random.default_rng(7)
    corpus = _random_corpus(rng, ["A", "B", "C"], n=50)
    before = {p: party_position(corpus, static_backend, p).vector for p in ("B", "C")}
    extra = [(c.participant_org, c.text, c.year, c.month) for c in corpus]
    extra += [("A", " ".join(rng.choice(WORDS, size=6)))] * 10
    grown = make_corpus(extra)
    for party, vector in before.items():
        np.testing.assert_array_equal(party_position(grown, static_backend, party).vector, vector)


def test_uncertainty_matches_independent_resampler(static_backend):
    rng = np.random.default_rng(6)
    texts = [" ".join(rng.choice(WORDS, size=40)) for _ in range(3)]
    corpus = make_corpus([("A", text) for text in texts])
    estimate = estimate_uncertainty(corpus, static_backend, "A", fraction=0.1, n_resamples=1000, seed=11)

    # every comment holds over 1% of the tokens, so each resample deletes exactly 12 single tokens
    vectors = np.array([TOY_VECTORS[t] for text in texts for t in text.split()])
    reference = vectors.mean(axis=0)
    other = np.random.default_rng(12345)
    sims = []
    for _ in range(4000):
        kept = vectors[np.sort(other.choice(len(vectors), size=len(vectors) - 12, replace=False))]
        mean = kept.mean(axis=0)
        sims.append(mean @ reference / (np.linalg.norm(mean) * np.linalg.norm(reference)))
    assert estimate == pytest.approx(np.std(sims, ddof=1), rel=0.10)


def test_perturbation_keeps_original_chunk_boundaries(toy_table, tokenizer):
    backend = StaticBackend(toy_table, tokenizer, chunk_limit=4)
    corpus = make_corpus([("A", "water unknown unknown army budget oil unknown river salary")])
    units, docs, token_lists, total = _perturbation_units(corpus.comments, backend, None)
    assert total == 6
    assert [positions for _, positions in units] == [(0,), (3,), (4,), (5,), (7,), (8,)]

    keep = np.ones(len(units), dtype=bool)
    np.testing.assert_allclose(_perturbed_position(units, docs, token_lists, keep, backend, "token"),
                               docs[0].vector, atol=1e-12)

    keep[1] = False  # army, the last token of the first chunk
    v = {t: np.array(TOY_VECTORS[t]) for t in ("water", "budget", "oil", "river", "salary")}
    chunks = [v["water"], (v["budget"] + v["oil"] + v["river"]) / 3, v["salary"]]
    np.testing.assert_allclose(_perturbed_position(units, docs, token_lists, keep, backend, "token"),
                               np.mean(chunks, axis=0), atol=1e-12)
