# issue_query.py
import os
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import QueryConfig
from corpus_ingest import Corpus, CorpusFormatError, corpus_frame
from embedding_store import EmbeddingTable, rank_similar
from utils import DataError, Tokenizer

SEED_SEPARATOR = ";"
Term = Tuple[str, ...]


class IssueQueryError(DataError):
    """An issue cannot be expanded or classified."""


@dataclass(frozen=True)
class IssueSpec:
    issue_name: str
    seed_keywords: Tuple[str, ...]

    def __post_init__(self):
        seeds = tuple(s.strip().lower() for s in self.seed_keywords if s.strip())
        if not seeds:
            raise IssueQueryError(f"issue '{self.issue_name}' has no seed keywords")
        if len(set(seeds)) != len(seeds):
            raise IssueQueryError(f"issue '{self.issue_name}' repeats a seed keyword")
        object.__setattr__(self, "seed_keywords", seeds)


@dataclass(frozen=True)
class ExpandedQuery:
    issue_name: str
    seed_keywords: Tuple[str, ...]
    expansion: Dict[str, List[Tuple[str, float]]]
    effective_threshold: Dict[str, float]
    skipped_seeds: Tuple[str, ...] = ()


@dataclass(frozen=True)
class IssueAssignment:
    comment_id: int
    issue_names: FrozenSet[str]
    matched_terms: Dict[str, FrozenSet[str]]
    # per-term mode only: issue -> seeds whose expansion matched
    triggers: Dict[str, Tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class ClassifierConfig:
    """Term index used by ``classify_predefined``: issue -> seed -> matchable terms."""
    mode: Literal["combined", "per-term"]
    terms: Dict[str, Dict[str, FrozenSet[Term]]]
    issue_order: Tuple[str, ...]

    def issue_terms(self, issue: str) -> FrozenSet[Term]:
        return frozenset().union(*self.terms[issue].values())


def load_issue_specs(path: str) -> List[IssueSpec]:
    """
    Reads an ``issue_name,seed_keywords`` CSV with ``;``-separated seeds.

    Duplicate seeds within an issue are collapsed case-insensitively.
    """
    if not os.path.exists(path):
        logging.error(f"Issue file '{path}' not found.")
        raise FileNotFoundError(f"Issue file '{path}' not found.")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(frame.columns[:2]) != ["issue_name", "seed_keywords"]:
        raise CorpusFormatError("header must be issue_name,seed_keywords", row=1, column="header")
    specs = []
    for row_no, row in enumerate(frame.itertuples(index=False), start=2):
        seeds = list(dict.fromkeys(s.strip().lower() for s in row.seed_keywords.split(SEED_SEPARATOR) if s.strip()))
        if not row.issue_name.strip() or not seeds:
            raise CorpusFormatError("issue without name or seeds", row=row_no)
        specs.append(IssueSpec(row.issue_name.strip(), tuple(seeds)))
    logging.info(f"Loaded {len(specs)} issues from '{path}'")
    return specs


def threshold_schedule(base_sim: float, max_sim: float, step: float) -> List[float]:
    """
    Thresholds tried in order: ``base_sim``, then the multiples of ``step`` above it, capped at ``max_sim``.

    Anchoring on multiples of ``step`` keeps schedules for different base values nested.
    """
    schedule = [round(base_sim, 10)]
    k = math.floor(base_sim / step + 1e-9) + 1
    while True:
        t = round(min(k * step, max_sim), 10)
        if t <= schedule[-1]:
            break
        schedule.append(t)
        if t >= max_sim:
            break
        k += 1
    return schedule


def _seed_vector(table: EmbeddingTable, seed_tokens: Sequence[str]) -> Optional[np.ndarray]:
    """Vector of a seed; multiword seeds use the mean of their word vectors."""
    words = [w for token in seed_tokens for w in token.split("_") if w]
    if len(seed_tokens) == 1 and seed_tokens[0] in table:
        return table.vector(seed_tokens[0])
    if not words or any(w not in table for w in words):
        return None
    return table.vectors[[table.index_of(w) for w in words]].mean(axis=0)


def expand_query(
    table: EmbeddingTable,
    spec: IssueSpec,
    base_sim: float = 0.4,
    max_sim: float = 0.6,
    overflow_count: int = 1000,
    step: float = 0.05,
    tokenizer: Optional[Tokenizer] = None,
) -> ExpandedQuery:
    """
    Expands each seed of an issue with its embedding neighbourhood.

    Every seed starts at ``base_sim``; while more than ``overflow_count`` terms
    qualify the threshold is raised along ``threshold_schedule``. If the count
    still overflows at ``max_sim`` the list is truncated to the best
    ``overflow_count`` terms.

    Args:
        table (EmbeddingTable): Static word vectors.
        spec (IssueSpec): Issue name and seed keywords.
        base_sim (float): Starting cosine threshold.
        max_sim (float): Highest threshold the schedule may reach.
        overflow_count (int): Neighbour count that triggers raising the threshold.
        step (float): Schedule step.
        tokenizer (Tokenizer): Tokenizer shared with classification.

    Returns:
        ExpandedQuery: Per-seed expansions and final thresholds.

    Raises:
        IssueQueryError: If no seed of the issue is representable.
    """
    if not 0 < base_sim <= max_sim < 1:
        raise ValueError(f"expected 0 < base_sim <= max_sim < 1, got {base_sim}, {max_sim}")
    tokenizer = tokenizer or Tokenizer()
    schedule = threshold_schedule(base_sim, max_sim, step)
    expansion: Dict[str, List[Tuple[str, float]]] = {}
    thresholds: Dict[str, float] = {}
    skipped = []
    for seed in spec.seed_keywords:
        seed_tokens = tokenizer(seed)
        vector = _seed_vector(table, seed_tokens) if seed_tokens else None
        if vector is None or not np.any(vector):
            logging.warning(f"Issue '{spec.issue_name}': seed '{seed}' is not representable, skipped")
            skipped.append(seed)
            continue
        pinned = seed_tokens[0] if len(seed_tokens) == 1 and seed_tokens[0] in table else None
        ranked = rank_similar(table, vector, schedule[0], pinned=pinned)
        threshold = schedule[0]
        for t in schedule[1:]:
            if len(ranked) <= overflow_count:
                break
            threshold = t
            ranked = [(term, sim) for term, sim in ranked if sim >= t]
        if len(ranked) > overflow_count:
            logging.info(f"Issue '{spec.issue_name}': seed '{seed}' truncated to {overflow_count} terms at {threshold}")
            ranked = ranked[:overflow_count]
        if pinned is None:
            ranked = [(seed, 1.0)] + [(term, sim) for term, sim in ranked if term != seed][:max(overflow_count - 1, 0)]
        expansion[seed] = ranked
        thresholds[seed] = threshold
    if not expansion:
        logging.error(f"Issue '{spec.issue_name}' has no representable seeds")
        raise IssueQueryError(f"issue '{spec.issue_name}' has no representable seeds")
    logging.info(f"Issue '{spec.issue_name}': expanded {len(expansion)} seeds to "
                 f"{sum(len(v) for v in expansion.values())} terms")
    return ExpandedQuery(spec.issue_name, spec.seed_keywords, expansion, thresholds, tuple(skipped))


def expand_all(
    table: EmbeddingTable,
    specs: Sequence[IssueSpec],
    config: Optional[QueryConfig] = None,
    tokenizer: Optional[Tokenizer] = None,
    max_workers: int = 4,
) -> List[ExpandedQuery]:
    """Expands every issue concurrently; output keeps the input order."""
    config = config or QueryConfig()
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = [
            executor.submit(expand_query, table, spec, config.base_sim, config.max_sim,
                            config.overflow_count, config.step, tokenizer)
            for spec in specs
        ]
        return [f.result() for f in futures]


def combine_modes(
    queries: Sequence[ExpandedQuery],
    mode: Literal["combined", "per-term"] = "combined",
    tokenizer: Optional[Tokenizer] = None,
) -> ClassifierConfig:
    """
    Builds the term index for classification.

    ``combined`` matches an issue on the union of all its seeds' expansions;
    ``per-term`` matches on the same union but also reports which seeds fired.
    """
    if mode not in ("combined", "per-term"):
        raise ValueError(f"unknown mode '{mode}'")
    tokenizer = tokenizer or Tokenizer()
    terms: Dict[str, Dict[str, FrozenSet[Term]]] = {}
    for query in queries:
        per_seed = {}
        for seed, ranked in query.expansion.items():
            keys = {tuple(tokenizer(term)) for term, _ in ranked}
            per_seed[seed] = frozenset(k for k in keys if k)
        terms[query.issue_name] = per_seed
    return ClassifierConfig(mode, terms, tuple(q.issue_name for q in queries))


def _ngrams(tokens: Sequence[str], lengths: Sequence[int]) -> FrozenSet[Term]:
    grams = set()
    for n in lengths:
        grams.update(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return frozenset(grams)


def classify_with(corpus: Corpus, classifier: ClassifierConfig, tokenizer: Optional[Tokenizer] = None) -> List[IssueAssignment]:
    """Multi-label assignment of every comment against a prepared term index."""
    tokenizer = tokenizer or Tokenizer()
    lengths = sorted({len(t) for per_seed in classifier.terms.values() for ts in per_seed.values() for t in ts})
    assignments = []
    for comment in corpus:
        present = _ngrams(tokenizer(comment.text), lengths)
        matched: Dict[str, FrozenSet[str]] = {}
        triggers: Dict[str, Tuple[str, ...]] = {}
        for issue in classifier.issue_order:
            per_seed = classifier.terms[issue]
            hits = classifier.issue_terms(issue) & present
            if not hits:
                continue
            matched[issue] = frozenset(" ".join(t) for t in hits)
            if classifier.mode == "per-term":
                triggers[issue] = tuple(seed for seed, ts in per_seed.items() if ts & present)
        assignments.append(IssueAssignment(comment.comment_id, frozenset(matched), matched, triggers))
    assigned = sum(1 for a in assignments if a.issue_names)
    logging.info(f"Classified {len(assignments)} comments; {assigned} carry at least one issue")
    return assignments


def classify_predefined(
    corpus: Corpus,
    queries: Sequence[ExpandedQuery],
    tokenizer: Optional[Tokenizer] = None,
    mode: Literal["combined", "per-term"] = "combined",
) -> List[IssueAssignment]:
    """
    Tags each comment with every issue whose seed or near term occurs in it.

    Multiword terms match as contiguous tokens.

    Raises:
        ValueError: If ``queries`` is empty.
    """
    if not queries:
        raise ValueError("at least one expanded query is required")
    tokenizer = tokenizer or Tokenizer()
    return classify_with(corpus, combine_modes(queries, mode, tokenizer), tokenizer)


def expansion_report(queries: Sequence[ExpandedQuery]) -> pd.DataFrame:
    """One row per (issue, seed, near term) with the seed's effective threshold."""
    rows = [
        (q.issue_name, seed, term, sim, q.effective_threshold[seed])
        for q in queries for seed, ranked in q.expansion.items() for term, sim in ranked
    ]
    return pd.DataFrame(rows, columns=["issue", "seed", "near_term", "sim", "effective_threshold"])


def trigger_report(assignments: Sequence[IssueAssignment]) -> pd.DataFrame:
    """Per-term mode: which seeds triggered each (comment, issue) assignment."""
    rows = [
        (a.comment_id, issue, seed)
        for a in assignments for issue, seeds in a.triggers.items() for seed in seeds
    ]
    return pd.DataFrame(rows, columns=["comment_id", "issue", "seed"])


def augment_corpus_frame(
    corpus: Corpus,
    labels_by_comment: Mapping[int, Sequence[str]],
    column: str = "issues",
    frame: Optional[pd.DataFrame] = None,
) -> pd.DataFrame:
    """Adds a ``;``-joined label column to the corpus table."""
    frame = corpus_frame(corpus) if frame is None else frame.copy()
    frame[column] = [SEED_SEPARATOR.join(labels_by_comment.get(c.comment_id, ())) for c in corpus]
    return frame


def assignment_labels(assignments: Sequence[IssueAssignment], order: Sequence[str]) -> Dict[int, List[str]]:
    """Issue names per comment, in the configured issue order."""
    return {a.comment_id: [name for name in order if name in a.issue_names] for a in assignments}
