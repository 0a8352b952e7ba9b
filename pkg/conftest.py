# conftest.py
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pytest

from config import DATA_DIR
from corpus_ingest import Comment, Corpus, RawNote
from embedding_store import EmbeddingTable, StaticBackend
from utils import Tokenizer

TOY_STOPWORDS = {"the", "a", "an", "and", "of", "is", "to", "in", "for", "on"}

# Anonymised extract: three turns, the first with three continuation bullets
EXTRACT = """\
- Party Rep. 1: problem is not the form. After 1990 we tried joint presidential council, failed directly after agreement. Tried advisory council, didn't work very well. Presidential council in Sanaa – agreed that President would rotate but hasn't. Problem is agreement on powers – have to detail clear powers of each institution and position. Avoid giving excessive powers to these executive bodies. Give limited powers. Many should be transferred to local and provincial levels, e.g. reconstruction, security. Reduce pressure on central government and reduce power grabbing. Whether in presidential council or in government.
 - For a ceremonial president. Main powers should be with government. Or power sharing in presidency and government is purely executive.
 - Should split up decision-making powers, not all in one body or person.
 - Inside government, should have core bloc of ministers would take decisions. Strategic decisions require higher majority, others simple majority.
- Party Rep. 2: we need to discuss options that are possible. We have frameworks we must not ignore. We were against presidential council because contradicts frameworks, and goes with constitutional declaration and coup. Yes there is a problem in presidency and monopolisation. How to reduce this and reform the institution. E.g. activate the council of advisors. What are mechanisms for decision-making? Or could have Vice Presidents with specific dossiers and decision-making powers.
- Party Rep. 3: any model can succeed in one context and fail in another. Collective and individual presidency – not absolutely good or bad.
 - Last amendment of constitution was in 2009 – art 65 re parliamentary term.
 - Need to bear in mind current constitution until a new one is adopted. Yes may be amended by future agreement but not totally repealed. GCC Initiative amended some parts but did not repeal.
"""

TOY_VECTORS = {
    "water": [1.0, 0.0, 0.0],
    "river": [0.9, 0.1, 0.0],
    "lake": [2.0, 0.0, 0.0],
    "army": [0.0, 1.0, 0.0],
    "soldier": [0.1, 0.95, 0.0],
    "budget": [0.0, 0.0, 1.0],
    "salary": [0.0, 0.2, 0.9],
    "oil": [0.7, 0.0, 0.7],
}


@pytest.fixture
def toy_table() -> EmbeddingTable:
    vocab = tuple(TOY_VECTORS)
    return EmbeddingTable(vocab, np.array([TOY_VECTORS[t] for t in vocab]), "toy")


@pytest.fixture
def tokenizer() -> Tokenizer:
    return Tokenizer(stopwords=TOY_STOPWORDS)


@pytest.fixture
def static_backend(toy_table, tokenizer) -> StaticBackend:
    return StaticBackend(toy_table, tokenizer, chunk_limit=512)


@pytest.fixture
def extract_note() -> RawNote:
    return RawNote("2019-06_extract.txt", 2019, 6, EXTRACT)


def make_corpus(rows: Sequence[Tuple]) -> Corpus:
    """
    Builds a corpus from ``(org, text[, year[, month[, multi_org]]])`` tuples; ids follow row order.
    """
    comments = []
    for i, row in enumerate(rows):
        org, text = row[0], row[1]
        year = row[2] if len(row) > 2 else 2019
        month = row[3] if len(row) > 3 else 6
        multi: Optional[Tuple[str, ...]] = tuple(row[4]) if len(row) > 4 else ()
        comments.append(Comment(i, text, f"{year:04d}-{month:02d}_notes.txt", year, month,
                                f"Rep {i}", org, multi))
    return Corpus(tuple(comments))


@pytest.fixture
def corpus_builder():
    return make_corpus


def write_table(path, vocab: Sequence[str], vectors: np.ndarray) -> str:
    """Writes a static table in the ``term v1 ... vd`` text format."""
    with open(path, "w", encoding="utf-8") as handle:
        for term, vector in zip(vocab, vectors):
            handle.write(term + " " + " ".join(repr(float(v)) for v in vector) + "\n")
    return str(path)


def write_demo_table(directory, dim: int = 8, seed: int = 0, extra_terms: int = 0) -> str:
    """Random table covering every word of the bundled demo inputs, stopwords included, plus filler terms."""
    demo = DATA_DIR / "demo"
    tokenizer = Tokenizer(remove_stopwords=False)
    files = sorted(demo.glob("notes/*.txt")) + sorted(demo.glob("*.txt")) + sorted(demo.glob("*.csv"))
    vocab = list(dict.fromkeys(t for path in files for t in tokenizer(path.read_text(encoding="utf-8"))))
    vocab += [f"filler{i}" for i in range(extra_terms)]
    vectors = np.random.default_rng(seed).normal(size=(len(vocab), dim))
    return write_table(Path(directory) / "demo_table.txt", vocab, vectors)


SESSION_PARTIES = ("North Bloc", "South Movement", "Coastal Alliance", "Highland Union")


def write_session_notes(directory, sessions: int = 14, turns: int = 253, seed: int = 0) -> List[str]:
    """
    One synthetic notes file per monthly session, built from the words of the demo notes.

    Every turn has a 40-word head and one 10-word bullet, so the parsed corpus
    holds ``sessions * turns * 50`` words.
    """
    tokenizer = Tokenizer(remove_stopwords=False)
    notes = sorted((DATA_DIR / "demo" / "notes").glob("*.txt"))
    pool = sorted({t for path in notes for t in tokenizer(path.read_text(encoding="utf-8"))})
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in range(sessions):
        lines = [f"Session {s + 1}: synthetic round"]
        for t in range(turns):
            party = SESSION_PARTIES[(s + t) % len(SESSION_PARTIES)]
            lines.append(f"- Delegate {t % 7} ({party}): " + " ".join(rng.choice(pool, size=40)))
            lines.append(" - " + " ".join(rng.choice(pool, size=10)))
        path = directory / f"{2018 + s // 12:04d}-{1 + s % 12:02d}_session_{s + 1:02d}.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(str(path))
    return paths
