# embedding_store.py
import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import EMBEDDINGS_FILENAME, EMBEDDINGS_REPO_ID
from utils import DataError, Tokenizer

DEFAULT_CHUNK_LIMIT = 512


class EmbeddingFormatError(DataError):
    """A vector file row is malformed."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if line_no else message)


class OutOfVocabularyError(DataError):
    """One or more terms are missing from the embedding vocabulary."""

    def __init__(self, terms: Sequence[str]):
        self.terms = list(terms)
        super().__init__(f"out-of-vocabulary term(s): {', '.join(self.terms)}")


class UnrepresentableTextError(DataError):
    """A text contains no in-vocabulary token."""


class ZeroNormError(DataError):
    """Cosine similarity requested for a zero vector."""


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Vocabulary -> dense vector map. Immutable after load."""
    vocab: Tuple[str, ...]
    vectors: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] < 1:
            raise EmbeddingFormatError("vectors must be a 2-d array with a positive dimension")
        if vectors.shape[0] != len(self.vocab):
            raise EmbeddingFormatError(f"{len(self.vocab)} terms but {vectors.shape[0]} vectors")
        index = {}
        for i, term in enumerate(self.vocab):
            if not term:
                raise EmbeddingFormatError("empty term in vocabulary", line_no=i + 1)
            if term in index:
                raise EmbeddingFormatError(f"duplicate term '{term}'", line_no=i + 1)
            index[term] = i
        vectors.setflags(write=False)
        norms = np.linalg.norm(vectors, axis=1)
        unit = vectors / np.where(norms > 0, norms, 1.0)[:, None]
        unit.setflags(write=False)
        object.__setattr__(self, "vocab", tuple(self.vocab))
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_unit", unit)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, term: str) -> bool:
        return term in self._index

    def index_of(self, term: str) -> int:
        try:
            return self._index[term]
        except KeyError:
            raise OutOfVocabularyError([term]) from None

    def vector(self, term: str) -> np.ndarray:
        return self.vectors[self.index_of(term)]

    def similarities(self, query: np.ndarray) -> np.ndarray:
        """Cosine similarity of every vocabulary vector to ``query``."""
        query = np.asarray(query, dtype=np.float64)
        norm = np.linalg.norm(query)
        if norm == 0:
            raise ZeroNormError("query vector has zero norm")
        return np.clip(self._unit @ (query / norm), -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class DocVector:
    comment_id: int
    vector: np.ndarray
    token_coverage: float
    # in-vocabulary tokens behind the vector; None when the producer did not report it
    n_tokens: Optional[int] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise DataError(f"comment {self.comment_id}: vector has non-finite values")
        if not 0.0 <= self.token_coverage <= 1.0:
            raise DataError(f"comment {self.comment_id}: token_coverage {self.token_coverage} outside [0, 1]")


def _is_word2vec_header(parts: List[str]) -> bool:
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def load_table(path: Union[str, Path], max_terms: Optional[int] = None) -> EmbeddingTable:
    """
    Loads a static word-vector table in the whitespace text format.

    Each line is ``term v1 ... vd``; the dimension comes from the first row.
    A word2vec-style ``<count> <dim>`` header line is skipped.

    Args:
        path (str): Path to the UTF-8 vector file.
        max_terms (int): Stop after this many terms (useful for vocabulary slices).

    Returns:
        EmbeddingTable: The loaded table.

    Raises:
        FileNotFoundError: If the file does not exist.
        EmbeddingFormatError: On a width mismatch, a non-numeric component or a duplicate term.
    """
    if not os.path.exists(path):
        logging.error(f"Embedding file '{path}' not found.")
        raise FileNotFoundError(f"Embedding file '{path}' not found.")
    vocab: List[str] = []
    rows: List[np.ndarray] = []
    seen = set()
    dim = None
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(tqdm(handle, desc="Loading embeddings", unit=" terms", mininterval=2.0), start=1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            if line_no == 1 and _is_word2vec_header(parts):
                logging.info(f"Skipping word2vec header in '{path}'")
                continue
            term, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingFormatError("row has no vector components", line_no=line_no)
            if len(values) != dim:
                raise EmbeddingFormatError(f"expected {dim} components, found {len(values)}", line_no=line_no)
            if term in seen:
                raise EmbeddingFormatError(f"duplicate term '{term}'", line_no=line_no)
            try:
                rows.append(np.array(values, dtype=np.float64))
            except ValueError as e:
                raise EmbeddingFormatError(f"non-numeric component: {e}", line_no=line_no) from e
            seen.add(term)
            vocab.append(term)
            if max_terms is not None and len(vocab) >= max_terms:
                break
    if not vocab:
        raise EmbeddingFormatError(f"no vectors found in '{path}'")
    table = EmbeddingTable(tuple(vocab), np.vstack(rows), source_tag=Path(path).name)
    logging.info(f"Loaded {len(table)} terms of dimension {table.dim} from '{path}'")
    return table


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """
    Cosine similarity dot(a, b) / (|a| |b|).

    Raises:
        ValueError: If the dimensions differ.
        ZeroNormError: If either vector is all zeros.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ZeroNormError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def rank_similar(
    table: EmbeddingTable,
    query: np.ndarray,
    min_sim: float,
    max_words: Optional[int] = None,
    pinned: Optional[str] = None,
) -> List[Tuple[str, float]]:
    """
    All vocabulary terms with similarity >= ``min_sim`` to ``query``, best first.

    Ties keep vocabulary order. ``pinned`` is reported with similarity exactly 1.0.
    """
    sims = table.similarities(query)
    if pinned is not None:
        sims = sims.copy()
        sims[table.index_of(pinned)] = 1.0
    hits = np.flatnonzero(sims >= min_sim)
    order = hits[np.lexsort((hits, -sims[hits]))]
    if max_words is not None:
        order = order[:max_words]
    return [(table.vocab[i], float(sims[i])) for i in order]


def neighbors(table: EmbeddingTable, query_term: str, min_sim: float, max_words: Optional[int] = None) -> List[Tuple[str, float]]:
    """
    Exact linear-scan nearest terms of ``query_term``, including the term itself.

    Raises:
        OutOfVocabularyError: If ``query_term`` is not in the table.
        ValueError: If ``min_sim`` is outside (0, 1).
    """
    if not 0 < min_sim < 1:
        raise ValueError(f"min_sim must lie in (0, 1), got {min_sim}")
    if query_term not in table:
        raise OutOfVocabularyError([query_term])
    return rank_similar(table, table.vector(query_term), min_sim, max_words, pinned=query_term)


def embed_tokens(table: EmbeddingTable, tokens: Sequence[str], chunk_limit: int = DEFAULT_CHUNK_LIMIT) -> Tuple[np.ndarray, int]:
    """
    Mean-of-chunk-means over a token stream.

    The stream is split into consecutive chunks of at most ``chunk_limit``
    tokens; each chunk contributes the mean of its in-vocabulary vectors and
    chunks without any are skipped.

    Returns:
        tuple: (vector, number of in-vocabulary tokens).

    Raises:
        UnrepresentableTextError: If no token is in the vocabulary.
    """
    if chunk_limit < 1:
        raise ValueError("chunk_limit must be >= 1")
    chunk_means = []
    n_in_vocab = 0
    for start in range(0, len(tokens), chunk_limit):
        idx = [table._index[t] for t in tokens[start:start + chunk_limit] if t in table._index]
        if idx:
            chunk_means.append(table.vectors[idx].mean(axis=0))
            n_in_vocab += len(idx)
    if not chunk_means:
        raise UnrepresentableTextError("unrepresentable text: no in-vocabulary tokens")
    return np.mean(chunk_means, axis=0), n_in_vocab


def embed_text(
    table: EmbeddingTable,
    text: str,
    chunk_limit: int = DEFAULT_CHUNK_LIMIT,
    tokenizer: Optional[Tokenizer] = None,
    comment_id: int = -1,
) -> DocVector:
    """Embeds a text as the mean of its chunk vectors (see ``embed_tokens``)."""
    tokenizer = tokenizer or Tokenizer()
    tokens = tokenizer(text)
    vector, n_in_vocab = embed_tokens(table, tokens, chunk_limit)
    return DocVector(comment_id, vector, n_in_vocab / len(tokens), n_in_vocab)


def load_contextual_vectors(path: Union[str, Path]) -> Dict[int, DocVector]:
    """
    Reads precomputed per-comment vectors from a ``comment_id,v1,...,vd`` CSV.

    Raises:
        FileNotFoundError: If the file does not exist.
        EmbeddingFormatError: On duplicate ids, inconsistent dimensions or non-numeric values.
    """
    if not os.path.exists(path):
        logging.error(f"Contextual vector file '{path}' not found.")
        raise FileNotFoundError(f"Contextual vector file '{path}' not found.")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        return {}
    except pd.errors.ParserError as e:
        raise EmbeddingFormatError(f"inconsistent row width: {e}") from e
    if frame.empty:
        return {}
    if frame.columns[0] != "comment_id" or frame.shape[1] < 2:
        raise EmbeddingFormatError("header must be comment_id,v1,...,vd", line_no=1)
    values = frame.iloc[:, 1:]
    if values.isna().any().any():
        bad = int(np.flatnonzero(values.isna().any(axis=1).to_numpy())[0]) + 2
        raise EmbeddingFormatError("missing components (dimension mismatch)", line_no=bad)
    try:
        matrix = values.to_numpy(dtype=np.float64)
        ids = frame["comment_id"].to_numpy(dtype=np.int64)
    except (TypeError, ValueError) as e:
        raise EmbeddingFormatError(f"non-numeric value: {e}") from e
    vectors: Dict[int, DocVector] = {}
    for row, (comment_id, vector) in enumerate(zip(ids, matrix), start=2):
        if int(comment_id) in vectors:
            raise EmbeddingFormatError(f"duplicate comment_id {comment_id}", line_no=row)
        vectors[int(comment_id)] = DocVector(int(comment_id), vector, 1.0)
    logging.info(f"Loaded {len(vectors)} contextual vectors of dimension {matrix.shape[1]} from '{path}'")
    return vectors


def write_contextual_vectors(path: Union[str, Path], vectors: Mapping[int, Union[DocVector, np.ndarray]]) -> None:
    """Writes per-comment vectors in the ``comment_id,v1,...,vd`` format."""
    ids = sorted(vectors)
    matrix = np.array([getattr(vectors[i], "vector", vectors[i]) for i in ids], dtype=np.float64)
    dim = matrix.shape[1] if matrix.ndim == 2 else 0
    frame = pd.DataFrame(matrix.reshape(len(ids), dim), columns=[f"v{j + 1}" for j in range(dim)])
    frame.insert(0, "comment_id", ids)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def fetch_embeddings(
    dest_dir: str,
    repo_id: str = EMBEDDINGS_REPO_ID,
    filename: str = EMBEDDINGS_FILENAME,
    repo_type: str = "model",
) -> str:
    """
    Downloads a public static embedding table from the Hugging Face Hub.

    Returns:
        str: Local path of the downloaded file.
    """
    from huggingface_hub import hf_hub_download

    os.makedirs(dest_dir, exist_ok=True)
    try:
        local = hf_hub_download(repo_id=repo_id, filename=filename, repo_type=repo_type, local_dir=dest_dir)
        logging.info(f"Downloaded '{filename}' from '{repo_id}' to '{local}'")
        return local
    except Exception as e:
        logging.error(f"Error downloading '{filename}' from '{repo_id}': {e}")
        raise


class StaticBackend:
    """Document vectors from a static table via ``embed_text``."""
    name = "static"
    token_level = True

    def __init__(self, table: EmbeddingTable, tokenizer: Optional[Tokenizer] = None, chunk_limit: int = DEFAULT_CHUNK_LIMIT):
        self.table = table
        self.tokenizer = tokenizer or Tokenizer()
        self.chunk_limit = chunk_limit

    @property
    def dim(self) -> int:
        return self.table.dim

    def tokens(self, text: str) -> List[str]:
        return self.tokenizer(text)

    def embed_tokens(self, tokens: Sequence[str], comment_id: int = -1) -> DocVector:
        vector, n_in_vocab = embed_tokens(self.table, tokens, self.chunk_limit)
        return DocVector(comment_id, vector, n_in_vocab / len(tokens), n_in_vocab)

    def doc_vector(self, comment) -> DocVector:
        return self.embed_tokens(self.tokens(comment.text), comment.comment_id)


class ContextualBackend:
    """Document vectors read from a precomputed per-comment file."""
    name = "contextual"
    token_level = False

    def __init__(self, vectors: Mapping[int, DocVector], tokenizer: Optional[Tokenizer] = None):
        self.vectors = dict(vectors)
        self.tokenizer = tokenizer or Tokenizer()
        first = next(iter(self.vectors.values()), None)
        self._dim = len(first.vector) if first is not None else 0

    @property
    def dim(self) -> int:
        return self._dim

    def tokens(self, text: str) -> List[str]:
        return self.tokenizer(text)

    def doc_vector(self, comment) -> DocVector:
        found = self.vectors.get(comment.comment_id)
        if found is None:
            raise UnrepresentableTextError(f"no contextual vector for comment {comment.comment_id}")
        n_tokens = max(len(self.tokens(comment.text)), 1)
        return DocVector(comment.comment_id, found.vector, found.token_coverage, n_tokens)
