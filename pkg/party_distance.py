# party_distance.py
import zlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Collection, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from corpus_ingest import Comment, Corpus
from embedding_store import DocVector, UnrepresentableTextError, ZeroNormError, cosine
from utils import DataError

LEVELS = 4


class DistanceError(DataError):
    """A party or reference position could not be used."""


class PositionError(DistanceError):
    """No position is computable for a party on an issue and period."""

    def __init__(self, party: str, issue: Optional[str] = None, period: Optional[str] = None, reason: str = "no position computable"):
        self.party = party
        self.issue = issue
        self.period = period
        super().__init__(f"{reason} for party '{party}' (issue={issue}, period={period})")


@dataclass(frozen=True, eq=False)
class PartyPosition:
    party: str
    issue: Optional[str]
    period: Optional[str]
    vector: np.ndarray
    word_count: int
    comment_count: int


@dataclass(frozen=True, eq=False)
class ReferencePosition:
    kind: str
    parties_included: Tuple[str, ...]
    vector: np.ndarray


@dataclass(frozen=True)
class DistanceEntry:
    party: str
    issue: str
    period: str
    # None marks a gap: no position or no usable reference
    similarity: Optional[float]
    uncertainty: Optional[float]
    word_count: int


@dataclass(eq=False)
class DistanceReport:
    entries: List[DistanceEntry]
    references: Dict[Tuple[str, str], ReferencePosition]
    reference_kind: str
    backend: str


@dataclass(frozen=True, eq=False)
class PairwiseMatrix:
    parties: Tuple[str, ...]
    sims: np.ndarray
    levels: np.ndarray
    bounds: Tuple[float, float, float]


def period_key(comment: Comment, bucketing: str = "year") -> str:
    """``2019`` for yearly buckets, ``2019-06`` for monthly ones."""
    if bucketing == "year":
        return f"{comment.year:04d}"
    if bucketing == "year-month":
        return f"{comment.year:04d}-{comment.month:02d}"
    raise ValueError(f"unknown period bucketing '{bucketing}'")


def issue_members(labels_by_comment: Mapping[int, Iterable[str]]) -> Dict[str, frozenset]:
    """Inverts comment -> issue labels into issue -> comment ids."""
    members: Dict[str, set] = {}
    for comment_id, labels in labels_by_comment.items():
        for label in labels:
            members.setdefault(label, set()).add(comment_id)
    return {issue: frozenset(ids) for issue, ids in members.items()}


def doc_vectors(corpus: Corpus, backend) -> Dict[int, Optional[DocVector]]:
    """Document vector per comment; unrepresentable comments map to None."""
    vectors: Dict[int, Optional[DocVector]] = {}
    skipped = 0
    for comment in corpus:
        try:
            vectors[comment.comment_id] = backend.doc_vector(comment)
        except UnrepresentableTextError:
            vectors[comment.comment_id] = None
            skipped += 1
    if skipped:
        logging.warning(f"{skipped} of {len(corpus)} comments have no document vector and are ignored")
    return vectors


def _matching_comments(
    corpus: Corpus,
    party: str,
    issue_filter: Optional[Collection[int]],
    period: Optional[str],
    bucketing: str,
) -> List[Comment]:
    return [
        c for c in corpus
        if party in c.parties
        and (issue_filter is None or c.comment_id in issue_filter)
        and (period is None or period_key(c, bucketing) == period)
    ]


def _weight(doc: DocVector, weighting: str) -> float:
    if weighting == "comment":
        return 1.0
    return float(doc.n_tokens if doc.n_tokens is not None else 1)


def _mean_position(docs: Sequence[DocVector], weighting: str) -> np.ndarray:
    weights = np.array([_weight(d, weighting) for d in docs], dtype=np.float64)
    stacked = np.vstack([d.vector for d in docs])
    return weights @ stacked / weights.sum()


def party_position(
    corpus: Corpus,
    backend,
    party: str,
    issue_filter: Optional[Collection[int]] = None,
    period: Optional[str] = None,
    bucketing: str = "year",
    weighting: str = "token",
    vectors: Optional[Mapping[int, Optional[DocVector]]] = None,
    issue: Optional[str] = None,
) -> PartyPosition:
    """
    Token-weighted mean of a party's document vectors on an issue and period.

    Each document vector is weighted by the number of tokens behind it, so on
    the static backend the position equals the mean over every token (or chunk)
    representation the party contributed. ``weighting="comment"`` gives every
    comment the same weight instead.

    Args:
        corpus (Corpus): Comments to draw from.
        backend: StaticBackend or ContextualBackend.
        party (str): Canonical organisation name.
        issue_filter (Collection[int]): Comment ids assigned to the issue, or None for all.
        period (str): Period key (see ``period_key``), or None for all.
        vectors (Mapping): Precomputed document vectors, keyed by comment id.
        issue (str): Issue name recorded on the position.

    Raises:
        PositionError: If no matching comment is representable.
    """
    docs: List[DocVector] = []
    words = 0
    for comment in _matching_comments(corpus, party, issue_filter, period, bucketing):
        if vectors is not None:
            doc = vectors.get(comment.comment_id)
        else:
            try:
                doc = backend.doc_vector(comment)
            except UnrepresentableTextError:
                doc = None
        if doc is None:
            continue
        docs.append(doc)
        words += comment.word_count
    if not docs:
        raise PositionError(party, issue, period)
    return PartyPosition(party, issue, period, _mean_position(docs, weighting), words, len(docs))


def reference_average(positions: Sequence[PartyPosition]) -> ReferencePosition:
    """Unweighted mean of party vectors; every party counts once whatever its word count."""
    if len(positions) < 2:
        raise DistanceError(f"an average reference needs at least 2 positions, got {len(positions)}")
    dims = {p.vector.shape for p in positions}
    if len(dims) > 1:
        raise DistanceError(f"dimension mismatch between party positions: {sorted(dims)}")
    vector = np.mean(np.vstack([p.vector for p in positions]), axis=0)
    return ReferencePosition("average", tuple(p.party for p in positions), vector)


def reference_baseline(position: PartyPosition) -> ReferencePosition:
    return ReferencePosition(f"baseline({position.party})", (position.party,), position.vector)


def _job_seed(seed: int, *key: str) -> List[int]:
    return [seed] + [zlib.crc32(part.encode("utf-8")) for part in key]


def _perturbation_units(
    comments: Sequence[Comment],
    backend,
    vectors: Optional[Mapping[int, Optional[DocVector]]],
) -> Tuple[List[Tuple[int, Tuple[int, ...]]], List[Optional[DocVector]], List[List[str]], int]:
    """
    Splits a party's text into droppable units.

    On a token-level backend every in-vocabulary token is a unit, except that a
    comment holding less than 1% of the party's tokens is dropped whole. A
    precomputed (contextual) backend only allows whole comments.

    Returns:
        tuple: (units as (comment index, token positions), unperturbed doc vectors,
        full token list per comment, total tokens).
    """
    docs = []
    token_lists: List[Sequence[str]] = []
    for comment in comments:
        doc = vectors.get(comment.comment_id) if vectors is not None else None
        if vectors is None:
            try:
                doc = backend.doc_vector(comment)
            except UnrepresentableTextError:
                doc = None
        docs.append(doc)
        token_lists.append(list(backend.tokens(comment.text)) if doc is not None and backend.token_level else [])
    if backend.token_level:
        in_vocab = [[p for p, t in enumerate(tokens) if t in backend.table] for tokens in token_lists]
        total = sum(len(positions) for positions in in_vocab)
        units = []
        for i, positions in enumerate(in_vocab):
            if not positions:
                continue
            if len(positions) < 0.01 * total:
                units.append((i, tuple(positions)))
            else:
                units.extend((i, (p,)) for p in positions)
        return units, docs, token_lists, total
    total = sum(int(d.n_tokens or 1) for d in docs if d is not None)
    units = [(i, tuple(range(int(d.n_tokens or 1)))) for i, d in enumerate(docs) if d is not None]
    return units, docs, token_lists, total


def _perturbed_position(
    units: Sequence[Tuple[int, Tuple[int, ...]]],
    docs: Sequence[Optional[DocVector]],
    token_lists: Sequence[Sequence[str]],
    keep: np.ndarray,
    backend,
    weighting: str,
) -> Optional[np.ndarray]:
    if backend.token_level:
        kept_positions: Dict[int, set] = {}
        for (i, positions), kept in zip(units, keep):
            if kept:
                kept_positions.setdefault(i, set()).update(positions)
        # deleted tokens become "" (never in a table) so chunk boundaries stay where they were
        rebuilt = [
            backend.embed_tokens([t if p in positions else "" for p, t in enumerate(token_lists[i])], i)
            for i, positions in sorted(kept_positions.items())
        ]
    else:
        rebuilt = [docs[i] for (i, _), kept in zip(units, keep) if kept]
    if not rebuilt:
        return None
    return _mean_position(rebuilt, weighting)


def estimate_uncertainty(
    corpus: Corpus,
    backend,
    party: str,
    issue_filter: Optional[Collection[int]] = None,
    period: Optional[str] = None,
    fraction: float = 0.10,
    n_resamples: int = 200,
    seed: Union[int, Sequence[int]] = 0,
    reference: Optional[np.ndarray] = None,
    bucketing: str = "year",
    weighting: str = "token",
    vectors: Optional[Mapping[int, Optional[DocVector]]] = None,
    issue: Optional[str] = None,
) -> float:
    """
    Spread of a party's similarity to a fixed reference when part of its text is removed.

    Each resample deletes a uniformly random ``fraction`` of the party's
    tokens, recomputes the position and its cosine to the unperturbed
    ``reference`` (the party's own unperturbed position when omitted). The
    result is the sample standard deviation of those similarities.

    Raises:
        PositionError: If the party has no position, or more than half of the
            resamples leave nothing to compute a position from.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    comments = _matching_comments(corpus, party, issue_filter, period, bucketing)
    units, docs, token_lists, total = _perturbation_units(comments, backend, vectors)
    if not units:
        raise PositionError(party, issue, period)
    if reference is None:
        reference = _mean_position([d for d in docs if d is not None], weighting)
    sizes = np.array([len(positions) for _, positions in units])
    target = int(round(fraction * total))
    rng = np.random.default_rng(seed)

    sims = []
    failures = 0
    for _ in range(n_resamples):
        keep = np.ones(len(units), dtype=bool)
        dropped = 0
        for u in rng.permutation(len(units)):
            if dropped >= target:
                break
            if dropped + sizes[u] <= target:
                keep[u] = False
                dropped += sizes[u]
        position = _perturbed_position(units, docs, token_lists, keep, backend, weighting)
        if position is None or not np.any(position):
            failures += 1
            continue
        sims.append(cosine(position, reference))
    if failures > n_resamples / 2:
        logging.error(f"Uncertainty for '{party}' failed in {failures} of {n_resamples} resamples")
        raise PositionError(party, issue, period, reason="insufficient data")
    if len(sims) < 2 or np.ptp(sims) == 0:
        return 0.0
    return float(np.std(sims, ddof=1))


def _similarity_or_gap(position: np.ndarray, reference: ReferencePosition, label: str) -> Optional[float]:
    try:
        return cosine(position, reference.vector)
    except ZeroNormError:
        logging.warning(f"{label}: reference {reference.kind} has zero norm; emitting a gap")
        return None


def distance_lines(
    corpus: Corpus,
    backend,
    parties: Sequence[str],
    issues: Mapping[str, Optional[Collection[int]]],
    period_buckets: Optional[Sequence[str]] = None,
    reference_kind: str = "average",
    baseline_party: Optional[str] = None,
    show_baseline_line: bool = True,
    bucketing: str = "year",
    weighting: str = "token",
    fraction: float = 0.10,
    n_resamples: int = 0,
    seed: int = 0,
    max_workers: int = 4,
    vectors: Optional[Mapping[int, Optional[DocVector]]] = None,
) -> DistanceReport:
    """
    Similarity of each party's position to a reference, per issue and period.

    The reference is either the unweighted average of the listed parties that
    have a position, or the position of ``baseline_party``. Missing positions
    and unusable references become gap entries (similarity None) rather than
    zeros. With ``n_resamples > 0`` each entry also carries the perturbation
    uncertainty, computed in parallel with per-entry seeds.

    Args:
        issues (Mapping): Issue name -> comment ids assigned to it (None for every comment).
        period_buckets (Sequence[str]): Period keys; defaults to every period in the corpus.
    """
    if reference_kind not in ("average", "baseline"):
        raise ValueError(f"unknown reference kind '{reference_kind}'")
    if reference_kind == "baseline" and not baseline_party:
        raise DistanceError("a baseline reference needs baseline_party")
    if period_buckets is None:
        period_buckets = sorted({period_key(c, bucketing) for c in corpus})
    line_parties = list(parties)
    if reference_kind == "baseline" and baseline_party not in line_parties:
        line_parties.append(baseline_party)
    if reference_kind == "baseline" and not show_baseline_line:
        line_parties = [p for p in line_parties if p != baseline_party]

    if vectors is None:
        vectors = doc_vectors(corpus, backend)
    entries: List[DistanceEntry] = []
    references: Dict[Tuple[str, str], ReferencePosition] = {}
    jobs = []
    for issue, members in issues.items():
        for period in period_buckets:
            positions: Dict[str, PartyPosition] = {}
            for party in dict.fromkeys(list(parties) + ([baseline_party] if baseline_party else [])):
                try:
                    positions[party] = party_position(corpus, backend, party, members, period, bucketing,
                                                      weighting, vectors, issue)
                except PositionError:
                    pass
            reference = None
            try:
                if reference_kind == "average":
                    reference = reference_average([positions[p] for p in parties if p in positions])
                elif baseline_party in positions:
                    reference = reference_baseline(positions[baseline_party])
            except DistanceError as e:
                logging.warning(f"issue '{issue}', period {period}: {e}")
            if reference is not None:
                references[(issue, period)] = reference
            for party in line_parties:
                position = positions.get(party)
                if position is None or reference is None:
                    entries.append(DistanceEntry(party, issue, period, None, None, position.word_count if position else 0))
                    continue
                similarity = _similarity_or_gap(position.vector, reference, f"issue '{issue}', period {period}")
                entries.append(DistanceEntry(party, issue, period, similarity, None, position.word_count))
                if similarity is not None and n_resamples > 0:
                    jobs.append((len(entries) - 1, party, issue, members, period, reference.vector))

    if jobs:
        def _run(job):
            _, party, issue, members, period, ref = job
            try:
                return estimate_uncertainty(corpus, backend, party, members, period, fraction, n_resamples,
                                            _job_seed(seed, party, issue, period), ref, bucketing, weighting,
                                            vectors, issue)
            except PositionError as e:
                logging.warning(f"{e}; uncertainty left empty")
                return None

        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            results = list(tqdm(executor.map(_run, jobs), total=len(jobs), desc="Resampling"))
        for (index, *_), value in zip(jobs, results):
            entry = entries[index]
            entries[index] = DistanceEntry(entry.party, entry.issue, entry.period, entry.similarity, value, entry.word_count)

    gaps = sum(1 for e in entries if e.similarity is None)
    logging.info(f"Distance report: {len(entries)} entries ({gaps} gaps) against {reference_kind} reference")
    return DistanceReport(entries, references, reference_kind, getattr(backend, "name", "static"))


def equal_width_bounds(sims: np.ndarray) -> Tuple[float, float, float]:
    """Three inner bounds splitting the observed off-diagonal similarity range into equal bins."""
    n = sims.shape[0]
    off = sims[~np.eye(n, dtype=bool)] if n > 1 else sims.ravel()
    lo, hi = float(off.min()), float(off.max())
    return tuple(lo + (hi - lo) * q / LEVELS for q in range(1, LEVELS))


def similarity_levels(sims: np.ndarray, bounds: Sequence[float]) -> np.ndarray:
    """Level 0 for the closest bucket (sim >= highest bound) up to 3 for the farthest."""
    return (LEVELS - 1) - np.searchsorted(np.asarray(bounds, dtype=np.float64), sims, side="right")


def pairwise_matrix(
    corpus: Corpus,
    backend,
    parties: Sequence[str],
    issue_filter: Optional[Collection[int]] = None,
    period: Optional[str] = None,
    bucket_bounds: Optional[Sequence[float]] = None,
    bucketing: str = "year",
    weighting: str = "token",
    issue: Optional[str] = None,
    vectors: Optional[Mapping[int, Optional[DocVector]]] = None,
) -> PairwiseMatrix:
    """
    Cosine similarity between every pair of party positions, bucketed into 4 levels.

    Raises:
        PositionError: Naming the first party without a position.
    """
    if vectors is None:
        vectors = doc_vectors(corpus, backend)
    positions = [party_position(corpus, backend, p, issue_filter, period, bucketing, weighting, vectors, issue)
                 for p in parties]
    n = len(positions)
    sims = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            sims[i, j] = sims[j, i] = cosine(positions[i].vector, positions[j].vector)
    bounds = tuple(bucket_bounds) if bucket_bounds is not None else equal_width_bounds(sims)
    return PairwiseMatrix(tuple(parties), sims, similarity_levels(sims, bounds), bounds)


def activity_counts(
    corpus: Corpus,
    assignments: Mapping[int, Iterable[str]],
    group_by: str = "issue",
    issues: Optional[Sequence[str]] = None,
    bucketing: str = "year",
) -> pd.DataFrame:
    """
    Words and comments per issue, per (issue, party) or per (issue, period).

    A comment labelled with several issues counts fully toward each of them;
    a multi-party comment counts fully toward each party. Groups without any
    comment are reported with zeros.
    """
    if group_by not in ("issue", "issue-party", "issue-period"):
        raise ValueError(f"unknown grouping '{group_by}'")
    if issues is None:
        issues = sorted({label for labels in assignments.values() for label in labels})
    if group_by == "issue":
        seconds: List[Optional[str]] = [None]
    elif group_by == "issue-party":
        seconds = sorted({p for c in corpus for p in c.parties})
    else:
        seconds = sorted({period_key(c, bucketing) for c in corpus})
    words = {(i, s): 0 for i in issues for s in seconds}
    comments = dict.fromkeys(words, 0)
    for comment in corpus:
        if group_by == "issue":
            keys: Sequence[Optional[str]] = [None]
        elif group_by == "issue-party":
            keys = comment.parties
        else:
            keys = [period_key(comment, bucketing)]
        for issue in assignments.get(comment.comment_id, ()):
            for key in keys:
                if (issue, key) in words:
                    words[(issue, key)] += comment.word_count
                    comments[(issue, key)] += 1
    column = {"issue-party": "party", "issue-period": "period"}.get(group_by)
    rows = []
    for (issue, key), count in words.items():
        row = {"issue": issue}
        if column:
            row[column] = key
        row.update(words=count, comments=comments[(issue, key)])
        rows.append(row)
    columns = ["issue"] + ([column] if column else []) + ["words", "comments"]
    return pd.DataFrame(rows, columns=columns)


def distance_frame(report: DistanceReport) -> pd.DataFrame:
    """``party,issue,period,similarity,uncertainty,word_count,backend``; gaps hold NaN."""
    rows = [
        (e.party, e.issue, e.period,
         np.nan if e.similarity is None else e.similarity,
         np.nan if e.uncertainty is None else e.uncertainty,
         e.word_count, report.backend)
        for e in report.entries
    ]
    return pd.DataFrame(rows, columns=["party", "issue", "period", "similarity", "uncertainty", "word_count", "backend"])


def pairwise_frame(matrix: PairwiseMatrix) -> pd.DataFrame:
    """Square similarity table followed by a ``level`` block and a ``bounds`` row."""
    parties = list(matrix.parties)
    sims = pd.DataFrame(matrix.sims, columns=parties)
    sims.insert(0, "kind", "similarity")
    sims.insert(1, "party", parties)
    levels = pd.DataFrame(matrix.levels.astype(float), columns=parties)
    levels.insert(0, "kind", "level")
    levels.insert(1, "party", parties)
    bounds = {"kind": "bounds", "party": ";".join(repr(float(b)) for b in matrix.bounds)}
    return pd.concat([sims, levels, pd.DataFrame([bounds])], ignore_index=True)
