# topic_model.py
import os
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp
from sklearn.feature_extraction.text import TfidfVectorizer
from sklearn.utils.extmath import randomized_svd, svd_flip

from config import NmfConfig
from corpus_ingest import Corpus, CorpusFormatError, filter_corpus
from utils import DataError, Tokenizer

Matrix = Union[np.ndarray, sp.spmatrix]


class TopicModelError(DataError):
    """Latent-issue extraction failed."""

    def __init__(self, message: str, sweep: Optional[int] = None):
        self.sweep = sweep
        super().__init__(f"sweep {sweep}: {message}" if sweep is not None else message)


@dataclass(frozen=True, eq=False)
class TfidfMatrix:
    rows: Tuple[int, ...]
    cols: Tuple[str, ...]
    values: sp.csr_matrix

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(eq=False)
class TopicModel:
    W: np.ndarray
    H: np.ndarray
    objective_trace: List[float]
    keywords: List[List[str]]
    config: NmfConfig
    vocabulary: Tuple[str, ...] = ()
    row_ids: Tuple[int, ...] = ()
    n_iter: int = 0
    converged: bool = False
    # topics NNDSVD could not seed (rank deficiency)
    zero_factors: Tuple[int, ...] = ()

    @property
    def n_topics(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True, eq=False)
class TopicMembership:
    comment_id: int
    topics: frozenset
    proportions: np.ndarray


def build_tfidf(corpus: Corpus, config: Optional[NmfConfig] = None, tokenizer: Optional[Tokenizer] = None) -> TfidfMatrix:
    """
    Builds the L2-normalized TF-IDF document-term matrix, one document per comment.

    idf = ln((1 + n_docs) / (1 + df)) + 1. Terms in more than ``max_df`` of the
    documents are dropped, then the ``max_features`` most frequent terms are kept.
    Multi-party responses are removed first when ``config.drop_multi_org`` is set.

    Raises:
        TopicModelError: If no documents or no vocabulary remain.
    """
    config = config or NmfConfig()
    tokenizer = tokenizer or Tokenizer()
    if config.drop_multi_org:
        corpus = filter_corpus(corpus, {"exclude_multi_org": True})
    if len(corpus) == 0:
        raise TopicModelError("no documents to model")
    vectorizer = TfidfVectorizer(
        tokenizer=tokenizer,
        lowercase=False,
        token_pattern=None,
        max_df=config.max_df,
        max_features=config.max_features,
        smooth_idf=True,
        sublinear_tf=False,
        norm="l2",
        dtype=np.float64,
    )
    try:
        values = vectorizer.fit_transform([c.text for c in corpus])
    except ValueError as e:
        logging.error(f"TF-IDF construction failed: {e}")
        raise TopicModelError(f"empty vocabulary: {e}") from e
    terms = tuple(vectorizer.get_feature_names_out())
    logging.info(f"TF-IDF matrix: {values.shape[0]} documents x {values.shape[1]} terms")
    return TfidfMatrix(tuple(c.comment_id for c in corpus), terms, sp.csr_matrix(values))


def _as_array(X: Union[TfidfMatrix, Matrix]) -> Matrix:
    return X.values if isinstance(X, TfidfMatrix) else X


def _svd(X: Matrix, n_topics: int, seed: int, oversamples: int, power_iterations: int):
    """Leading singular triplets; exact for small matrices, randomized power iteration otherwise."""
    if min(X.shape) <= n_topics + oversamples:
        dense = X.toarray() if sp.issparse(X) else np.asarray(X, dtype=np.float64)
        U, S, Vt = scipy.linalg.svd(dense, full_matrices=False)
        U, Vt = svd_flip(U, Vt)
        return U[:, :n_topics], S[:n_topics], Vt[:n_topics]
    return randomized_svd(X, n_topics, n_oversamples=oversamples, n_iter=power_iterations, random_state=seed)


def nndsvd_init(
    X: Union[TfidfMatrix, Matrix],
    n_topics: int,
    seed: int = 0,
    oversamples: int = 10,
    power_iterations: int = 7,
    rank_tol: float = 1e-10,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nonnegative double SVD initialization.

    The leading triplet seeds topic 0 as sqrt(s1)|u1|, sqrt(s1)|v1|. Every
    further triplet keeps whichever of its positive or negative sections has
    the larger norm product, scaled by sqrt(s * norm product). Triplets whose
    singular value is below ``rank_tol`` relative to the largest leave their
    factors at zero.

    Returns:
        tuple: (W0 of shape docs x topics, H0 of shape topics x terms), both >= 0.

    Raises:
        TopicModelError: If ``n_topics`` exceeds min(rows, cols).
    """
    X = _as_array(X)
    n_docs, n_terms = X.shape
    if n_topics > min(n_docs, n_terms):
        raise TopicModelError(f"n_topics={n_topics} exceeds min(rows, cols)={min(n_docs, n_terms)}")
    U, S, V = _svd(X, n_topics, seed, oversamples, power_iterations)
    W = np.zeros((n_docs, n_topics))
    H = np.zeros((n_topics, n_terms))
    if S[0] <= 0:
        logging.warning("NNDSVD: input matrix is all zeros; every factor left at zero")
        return W, H

    W[:, 0] = np.sqrt(S[0]) * np.abs(U[:, 0])
    H[0, :] = np.sqrt(S[0]) * np.abs(V[0, :])
    deficient = []
    for j in range(1, n_topics):
        if S[j] <= rank_tol * S[0]:
            deficient.append(j)
            continue
        x, y = U[:, j], V[j, :]
        x_p, y_p = np.maximum(x, 0), np.maximum(y, 0)
        x_n, y_n = np.abs(np.minimum(x, 0)), np.abs(np.minimum(y, 0))
        x_p_nrm, y_p_nrm = np.linalg.norm(x_p), np.linalg.norm(y_p)
        x_n_nrm, y_n_nrm = np.linalg.norm(x_n), np.linalg.norm(y_n)
        m_p, m_n = x_p_nrm * y_p_nrm, x_n_nrm * y_n_nrm
        if m_p > m_n:
            u, v, sigma = x_p / x_p_nrm, y_p / y_p_nrm, m_p
        elif m_n > 0:
            u, v, sigma = x_n / x_n_nrm, y_n / y_n_nrm, m_n
        else:
            deficient.append(j)
            continue
        lbd = np.sqrt(S[j] * sigma)
        W[:, j] = lbd * u
        H[j, :] = lbd * v
    if deficient:
        logging.warning(f"NNDSVD: rank below {n_topics}; topics {deficient} initialized to zero")
    return W, H


def nmf_objective(X: Matrix, W: np.ndarray, H: np.ndarray, alpha: float = 0.0, l1_ratio: float = 0.5) -> float:
    """
    0.5*||X - WH||_F^2 + alpha*l1_ratio*(|W|_1 + |H|_1)
    + 0.5*alpha*(1 - l1_ratio)*(||W||_F^2 + ||H||_F^2).
    """
    if sp.issparse(X):
        fro2 = X.multiply(X).sum() - 2.0 * np.sum(W * (X @ H.T)) + np.sum((W.T @ W) * (H @ H.T))
        fro2 = max(float(fro2), 0.0)
    else:
        residual = np.asarray(X) - W @ H
        fro2 = float(np.sum(residual * residual))
    l1 = alpha * l1_ratio
    l2 = alpha * (1.0 - l1_ratio)
    return 0.5 * fro2 + l1 * (W.sum() + H.sum()) + 0.5 * l2 * (np.sum(W * W) + np.sum(H * H))


def _hals_sweep(W: np.ndarray, HHt: np.ndarray, XHt: np.ndarray, l1: float, l2: float) -> None:
    """
    One cyclic pass over the columns of W, each set to its exact nonnegative minimizer.

    HHt = H H^T and XHt = X H^T; by symmetry the same routine updates H^T.
    """
    for t in range(W.shape[1]):
        denom = HHt[t, t] + l2
        if denom <= 0:
            continue
        step = (XHt[:, t] - W @ HHt[:, t] - l1 - l2 * W[:, t]) / denom
        W[:, t] = np.maximum(W[:, t] + step, 0.0)


def fit_nmf(
    X: Union[TfidfMatrix, Matrix],
    config: Optional[NmfConfig] = None,
    n_topics: Optional[int] = None,
) -> TopicModel:
    """
    Regularized Frobenius NMF solved by HALS coordinate descent from an NNDSVD start.

    Each sweep updates every column of W and then every row of H in closed
    form. The objective is recorded after initialization and after every
    sweep; fitting stops when the relative decrease falls below ``tol`` or
    after ``max_iter`` sweeps. A sweep that does not lower the objective is
    discarded and fitting stops at the previous iterate, so the trace never
    increases.

    Args:
        X (TfidfMatrix | array): Nonnegative documents x terms matrix.
        config (NmfConfig): Solver parameters.
        n_topics (int): Overrides ``config.n_topics`` (allows n_topics=1 on raw matrices).

    Returns:
        TopicModel: Fitted factors, trace and keywords.

    Raises:
        TopicModelError: If a non-finite value appears during the updates.
    """
    config = config or NmfConfig()
    k = n_topics or config.n_topics
    matrix = _as_array(X)
    if sp.issparse(matrix):
        matrix = sp.csr_matrix(matrix, dtype=np.float64)
        if matrix.nnz and matrix.data.min() < 0:
            raise TopicModelError("input matrix has negative entries")
    else:
        matrix = np.asarray(matrix, dtype=np.float64)
        if np.any(matrix < 0):
            raise TopicModelError("input matrix has negative entries")
    l1 = config.alpha * config.l1_ratio
    l2 = config.alpha * (1.0 - config.l1_ratio)

    W, H = nndsvd_init(matrix, k, config.seed, config.svd_oversamples, config.svd_power_iterations)
    zero_factors = tuple(int(j) for j in range(k) if not W[:, j].any() or not H[j, :].any())
    trace = [nmf_objective(matrix, W, H, config.alpha, config.l1_ratio)]
    Ht = np.ascontiguousarray(H.T)
    converged = False
    sweep = 0
    for sweep in range(1, config.max_iter + 1):
        last_W, last_Ht = W.copy(), Ht.copy()
        _hals_sweep(W, Ht.T @ Ht, np.asarray(matrix @ Ht), l1, l2)
        _hals_sweep(Ht, W.T @ W, np.asarray(matrix.T @ W), l1, l2)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(Ht))):
            logging.error(f"NMF diverged: non-finite factor values at sweep {sweep}")
            raise TopicModelError("non-finite value in factors", sweep=sweep)
        previous = trace[-1]
        current = nmf_objective(matrix, W, Ht.T, config.alpha, config.l1_ratio)
        if current > previous:
            # rounding noise at a stationary point: keep the last iterate
            W, Ht = last_W, last_Ht
            converged = True
            break
        trace.append(current)
        if previous <= 0 or (previous - current) / previous < config.tol:
            converged = True
            break
    H = np.ascontiguousarray(Ht.T)
    logging.info(f"NMF with {k} topics stopped after {sweep} sweeps (objective {trace[-1]:.6g}, converged={converged})")
    vocabulary = X.cols if isinstance(X, TfidfMatrix) else tuple(str(j) for j in range(H.shape[1]))
    row_ids = X.rows if isinstance(X, TfidfMatrix) else tuple(range(W.shape[0]))
    model = TopicModel(W, H, trace, [], config, vocabulary, row_ids, sweep, converged, zero_factors)
    model.keywords = topic_keywords(model, config.n_keywords)
    return model


def topic_proportions(W: np.ndarray) -> np.ndarray:
    """Rows of W scaled to sum to 1; all-zero rows stay zero."""
    sums = W.sum(axis=1, keepdims=True)
    return np.divide(W, sums, out=np.zeros_like(W), where=sums > 0)


def assign_topics(
    model: TopicModel,
    X: Optional[TfidfMatrix] = None,
    membership_threshold: Optional[float] = None,
) -> List[TopicMembership]:
    """
    Multi-label topic membership: a document belongs to every topic holding at
    least ``membership_threshold`` of its normalized W row.
    """
    threshold = model.config.membership_threshold if membership_threshold is None else membership_threshold
    row_ids = X.rows if X is not None else model.row_ids
    if len(row_ids) != model.W.shape[0]:
        raise TopicModelError("matrix rows do not match the fitted model")
    proportions = topic_proportions(model.W)
    memberships = []
    for comment_id, row in zip(row_ids, proportions):
        topics = frozenset(int(t) for t in np.flatnonzero(row >= threshold)) if row.any() else frozenset()
        memberships.append(TopicMembership(int(comment_id), topics, row))
    return memberships


def representative_comments(
    model: TopicModel,
    X: Optional[TfidfMatrix],
    corpus: Optional[Corpus],
    topic_id: int,
    top_n: int = 10,
) -> List[int]:
    """
    Comment ids ranked by their normalized proportion of ``topic_id``.

    Ties fall back to the raw W weight, then to the comment id.
    """
    if not 0 <= topic_id < model.n_topics:
        raise TopicModelError(f"topic_id {topic_id} outside 0..{model.n_topics - 1}")
    row_ids = np.asarray(X.rows if X is not None else model.row_ids)
    if corpus is not None:
        known = corpus.by_id()
        row_mask = np.array([int(i) in known for i in row_ids], dtype=bool)
    else:
        row_mask = np.ones(len(row_ids), dtype=bool)
    proportions = topic_proportions(model.W)[:, topic_id]
    raw = model.W[:, topic_id]
    candidates = np.flatnonzero(row_mask)
    order = candidates[np.lexsort((row_ids[candidates], -raw[candidates], -proportions[candidates]))]
    return [int(row_ids[i]) for i in order[:top_n]]


def topic_keywords(model: TopicModel, k: int = 10) -> List[List[str]]:
    """Top-``k`` terms per topic by H weight; ties keep vocabulary order."""
    positions = np.arange(model.H.shape[1])
    keywords = []
    for row in model.H:
        order = np.lexsort((positions, -row))[:k]
        keywords.append([model.vocabulary[j] for j in order])
    return keywords


def load_topic_labels(path: Optional[str]) -> Dict[int, str]:
    """Reads manual topic descriptions from a ``topic_id,label`` CSV."""
    if not path:
        return {}
    if not os.path.exists(path):
        logging.error(f"Label file '{path}' not found.")
        raise FileNotFoundError(f"Label file '{path}' not found.")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    labels = {}
    for row_no, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            labels[int(row[0])] = row[1]
        except (ValueError, IndexError) as e:
            raise CorpusFormatError("expected topic_id,label", row=row_no) from e
    return labels


def topic_name(topic_id: int, labels: Optional[Mapping[int, str]] = None) -> str:
    if labels and topic_id in labels:
        return labels[topic_id]
    return f"issue {topic_id}"


def topic_report(model: TopicModel, k: Optional[int] = None) -> pd.DataFrame:
    """``topic_id,rank,keyword,weight`` rows for every topic."""
    k = k or model.config.n_keywords
    index = {term: j for j, term in enumerate(model.vocabulary)}
    rows = []
    for topic_id, words in enumerate(topic_keywords(model, k)):
        for rank, word in enumerate(words, start=1):
            rows.append((topic_id, rank, word, float(model.H[topic_id, index[word]])))
    return pd.DataFrame(rows, columns=["topic_id", "rank", "keyword", "weight"])


def representative_report(model: TopicModel, corpus: Corpus, top_n: Optional[int] = None,
                          labels: Optional[Mapping[int, str]] = None) -> pd.DataFrame:
    """Top comments per topic with their proportion, speaker and text."""
    top_n = top_n or model.config.top_comments
    by_id = corpus.by_id()
    position = {cid: i for i, cid in enumerate(model.row_ids)}
    proportions = topic_proportions(model.W)
    rows = []
    for topic_id in range(model.n_topics):
        for rank, cid in enumerate(representative_comments(model, None, corpus, topic_id, top_n), start=1):
            comment = by_id[cid]
            rows.append((topic_id, topic_name(topic_id, labels), rank, cid,
                         float(proportions[position[cid], topic_id]), comment.participant_org, comment.text))
    return pd.DataFrame(rows, columns=["topic_id", "label", "rank", "comment_id", "proportion", "participant_org", "text"])


def membership_labels(memberships: Sequence[TopicMembership], labels: Optional[Mapping[int, str]] = None) -> Dict[int, List[str]]:
    """Latent-issue names per comment, ordered by topic id."""
    return {m.comment_id: [topic_name(t, labels) for t in sorted(m.topics)] for m in memberships}


def write_trace(trace: Sequence[float], path: str) -> None:
    """Objective trace as a single numeric column."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savetxt(path, np.asarray(trace, dtype=np.float64), fmt="%.17g")
