# utils.py
import re
import logging
import unicodedata
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional

from nltk.tokenize import MWETokenizer, RegexpTokenizer

from config import BUNDLED_STOPWORDS


class DataError(ValueError):
    """Base class for errors caused by malformed or insufficient input data."""


# Characters deleted outright besides the Cc/Cf categories
ZERO_WIDTH = {"\u200b", "\u200c", "\u200d", "\u2060", "\ufeff", "\u00ad"}
KEEP_CONTROL = {"\n", "\t"}
ASCII_MAP = str.maketrans({
    "\u2018": "'", "\u2019": "'", "\u201a": "'", "\u201b": "'",
    "\u201c": '"', "\u201d": '"', "\u201e": '"', "\u201f": '"',
    "\u2013": "-", "\u2014": "-", "\u2015": "-", "\u2212": "-",
    "\u2026": "...", "\u00a0": " ", "\u2022": "-",
})


def clean_text(text: str) -> str:
    """
    Removes non-informative Unicode characters and normalizes typography to ASCII.

    Deletes control (Cc) and format (Cf) characters except newline and tab,
    zero-width characters and the BOM; maps curly quotes, dashes and
    non-breaking spaces to their ASCII forms; collapses runs of spaces.
    """
    if not text:
        return ""
    text = text.translate(ASCII_MAP)
    kept = []
    for ch in text:
        if ch in KEEP_CONTROL:
            kept.append(ch)
            continue
        if ch in ZERO_WIDTH or unicodedata.category(ch) in ("Cc", "Cf"):
            continue
        kept.append(ch)
    text = "".join(kept)
    text = re.sub(r"[ \t]+", " ", text)
    text = re.sub(r" *\n *", "\n", text)
    return text.strip()


def word_count(text: str) -> int:
    """Whitespace-separated token count."""
    return len(text.split())


def load_word_list(path: str) -> List[str]:
    """Reads one entry per line, skipping blanks and ``#`` comments."""
    p = Path(path)
    if not p.exists():
        logging.error(f"Word list '{path}' not found.")
        raise FileNotFoundError(f"Word list '{path}' not found.")
    entries = []
    for line in p.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.append(line.lower())
    return entries


def load_stopwords(path: Optional[str] = None) -> FrozenSet[str]:
    """Loads a stopword file, defaulting to the bundled English list."""
    return frozenset(load_word_list(path or str(BUNDLED_STOPWORDS)))


class Tokenizer:
    """
    Lowercasing tokenizer that splits on non-alphanumeric characters.

    Optional multiword expressions are merged into ``a_b`` tokens, stopwords
    are dropped and, when an allow-list is given, only listed tokens are kept.
    """

    def __init__(
        self,
        stopwords: Optional[Iterable[str]] = None,
        phrases: Optional[Iterable[str]] = None,
        allow_list: Optional[Iterable[str]] = None,
        remove_stopwords: bool = True,
    ):
        self.stopwords = frozenset(stopwords) if stopwords is not None else load_stopwords()
        self.remove_stopwords = remove_stopwords
        self.allow_list = frozenset(allow_list) if allow_list is not None else None
        self._splitter = RegexpTokenizer(r"[a-z0-9]+")
        mwes = [tuple(self._splitter.tokenize(p.lower())) for p in (phrases or [])]
        mwes = [m for m in mwes if len(m) > 1]
        self._mwe = MWETokenizer(mwes, separator="_") if mwes else None

    def raw_tokens(self, text: str) -> List[str]:
        """Lowercased alphanumeric tokens before any filtering."""
        tokens = self._splitter.tokenize(text.lower())
        if self._mwe is not None:
            tokens = self._mwe.tokenize(tokens)
        return tokens

    def __call__(self, text: str) -> List[str]:
        tokens = self.raw_tokens(text)
        if self.remove_stopwords:
            tokens = [t for t in tokens if t not in self.stopwords]
        if self.allow_list is not None:
            tokens = [t for t in tokens if t in self.allow_list]
        return tokens


def build_tokenizer(
    stopwords_path: Optional[str] = None,
    phrases_path: Optional[str] = None,
    allow_list_path: Optional[str] = None,
    remove_stopwords: bool = True,
) -> Tokenizer:
    """Builds a Tokenizer from optional word-list files."""
    phrases = load_word_list(phrases_path) if phrases_path else None
    allow = load_word_list(allow_list_path) if allow_list_path else None
    return Tokenizer(load_stopwords(stopwords_path), phrases, allow, remove_stopwords)
