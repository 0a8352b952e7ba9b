# diagnostics.py
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from embedding_store import EmbeddingTable, UnrepresentableTextError, ZeroNormError, cosine
from utils import DataError, Tokenizer, clean_text

ROW_BLOCK = 50_000


class DiagnosticsError(DataError):
    """The table or text stream cannot support the requested diagnostic."""


@dataclass(frozen=True, eq=False)
class AnisotropyProfile:
    argmax_counts: np.ndarray
    dim: int
    vocab_size: int


@dataclass(frozen=True, eq=False)
class PrefixTrace:
    positions: np.ndarray
    max_raw: np.ndarray
    min_raw: np.ndarray
    max_mean: np.ndarray
    min_mean: np.ndarray
    # prefix mean vectors at each position, kept only on request
    means: Optional[np.ndarray] = None


def anisotropy_profile(table: EmbeddingTable) -> AnisotropyProfile:
    """
    Histogram over dimensions of where each vector has its largest-magnitude component.

    An isotropic table spreads the counts evenly; real tables pile them up in
    a few dimensions.
    """
    if len(table) == 0:
        raise DiagnosticsError("anisotropy profile of an empty table")
    counts = np.zeros(table.dim, dtype=np.int64)
    for start in range(0, len(table), ROW_BLOCK):
        block = np.abs(table.vectors[start:start + ROW_BLOCK])
        counts += np.bincount(np.argmax(block, axis=1), minlength=table.dim)
    return AnisotropyProfile(counts, table.dim, len(table))


def anisotropy_chi_square(profile: AnisotropyProfile) -> float:
    """Pearson chi-square statistic of the argmax histogram against a uniform one."""
    expected = profile.vocab_size / profile.dim
    return float(np.sum((profile.argmax_counts - expected) ** 2) / expected)


def isotropic_chi_square_limit(dim: int, quantile: float = 0.99) -> float:
    """Quantile of the chi-square statistic an isotropic table of dimension ``dim`` would produce."""
    return float(stats.chi2.ppf(quantile, dim - 1))


def default_sample_points(limit: int) -> List[int]:
    """Log-spaced 1-2-5 grid up to ``limit``: 1, 2, 5, 10, 20, 50, ..."""
    points = []
    decade = 1
    while decade <= limit:
        points.extend(m * decade for m in (1, 2, 5) if m * decade <= limit)
        decade *= 10
    return points


def text_stream(table: EmbeddingTable, text: str, tokenizer: Optional[Tokenizer] = None) -> List[str]:
    """In-vocabulary tokens of a text, stopwords included."""
    tokenizer = tokenizer or Tokenizer(remove_stopwords=False)
    tokens = tokenizer(clean_text(text))
    kept = [t for t in tokens if t in table]
    if len(kept) < len(tokens):
        logging.info(f"Token stream: skipped {len(tokens) - len(kept)} of {len(tokens)} out-of-vocabulary tokens")
    return kept


def read_stream(table: EmbeddingTable, path: Union[str, Path], tokenizer: Optional[Tokenizer] = None) -> List[str]:
    path = Path(path)
    if not path.exists():
        logging.error(f"Text file '{path}' not found.")
        raise FileNotFoundError(f"Text file '{path}' not found.")
    return text_stream(table, path.read_text(encoding="utf-8"), tokenizer)


def sample_streams(table: EmbeddingTable, length: int, seed: int = 0, count: int = 2) -> List[List[str]]:
    """``count`` disjoint streams of ``length`` distinct terms drawn uniformly from the vocabulary."""
    if count * length > len(table):
        raise DiagnosticsError(f"cannot draw {count} disjoint streams of {length} terms from {len(table)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(table), size=count * length, replace=False)
    return [[table.vocab[i] for i in picks[k * length:(k + 1) * length]] for k in range(count)]


def _stream_indices(table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    indices = [table.index_of(t) for t in tokens if t in table]
    if len(indices) < len(tokens):
        logging.warning(f"Skipped {len(tokens) - len(indices)} out-of-vocabulary tokens")
    if not indices:
        raise UnrepresentableTextError("token stream has no in-vocabulary tokens")
    return np.asarray(indices)


def _prefix_means(table: EmbeddingTable, indices: np.ndarray, positions: Sequence[int]) -> np.ndarray:
    """Running mean of the first n vectors at each position, updated one token at a time."""
    wanted = set(positions)
    means = np.empty((len(positions), table.dim))
    mean = np.zeros(table.dim)
    row = 0
    for n, index in enumerate(indices[:max(positions)], start=1):
        mean += (table.vectors[index] - mean) / n
        if n in wanted:
            means[row] = mean
            row += 1
    return means


def _positions(sample_points: Optional[Sequence[int]], length: int) -> List[int]:
    points = default_sample_points(length) if sample_points is None else sample_points
    kept = sorted({int(n) for n in points if 1 <= n <= length})
    if not kept:
        raise DiagnosticsError(f"no sample point falls within a stream of {length} tokens")
    return kept


def prefix_trace(
    table: EmbeddingTable,
    token_stream: Sequence[str],
    sample_points: Optional[Sequence[int]] = None,
    retain_means: bool = False,
) -> PrefixTrace:
    """
    Extreme components of the n-th word vector and of the mean of the first n vectors.

    Sample points beyond the stream length are dropped.

    Raises:
        UnrepresentableTextError: If no token is in the vocabulary.
    """
    indices = _stream_indices(table, token_stream)
    positions = _positions(sample_points, len(indices))
    raw = table.vectors[indices[np.asarray(positions) - 1]]
    means = _prefix_means(table, indices, positions)
    return PrefixTrace(
        np.asarray(positions),
        raw.max(axis=1), raw.min(axis=1),
        means.max(axis=1), means.min(axis=1),
        means if retain_means else None,
    )


def cross_corpus_convergence(
    table: EmbeddingTable,
    stream_a: Sequence[str],
    stream_b: Sequence[str],
    sample_points: Optional[Sequence[int]] = None,
) -> List[Tuple[int, Optional[float]]]:
    """
    Cosine between the prefix means of two streams at each sample point.

    Points past the shorter stream are dropped; a zero-norm prefix mean yields None.
    """
    a = _stream_indices(table, stream_a)
    b = _stream_indices(table, stream_b)
    positions = _positions(sample_points, min(len(a), len(b)))
    means_a = _prefix_means(table, a, positions)
    means_b = _prefix_means(table, b, positions)
    values: List[Tuple[int, Optional[float]]] = []
    for n, u, v in zip(positions, means_a, means_b):
        try:
            values.append((n, cosine(u, v)))
        except ZeroNormError:
            values.append((n, None))
    return values


def histogram_frame(profile: AnisotropyProfile) -> pd.DataFrame:
    return pd.DataFrame({"dim": np.arange(profile.dim), "count": profile.argmax_counts})


def trace_frame(trace: PrefixTrace) -> pd.DataFrame:
    return pd.DataFrame({
        "n": trace.positions,
        "max_raw": trace.max_raw,
        "min_raw": trace.min_raw,
        "max_mean": trace.max_mean,
        "min_mean": trace.min_mean,
    })


def convergence_frame(values: Sequence[Tuple[int, Optional[float]]]) -> pd.DataFrame:
    return pd.DataFrame(
        [(n, np.nan if c is None else c) for n, c in values],
        columns=["n", "cosine"],
    )
