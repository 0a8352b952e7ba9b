# corpus_ingest.py
import os
import re
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
from tqdm import tqdm

from config import NoteStyle
from utils import DataError, ZERO_WIDTH, clean_text, word_count

CORPUS_COLUMNS = [
    "comment_id", "text", "source_file", "year", "month",
    "participant_name", "participant_org", "multi_org",
]
MULTI_ORG_SEPARATOR = ";"
# mapping files written beside a corpus CSV, keyed by Corpus field
SIDECAR_COLUMNS = {
    "entity_aliases": ["variant", "canonical"],
    "abbreviations": ["abbreviation", "expansion"],
}


class NoteParseError(DataError):
    """A rough-notes line could not be interpreted."""

    def __init__(self, message: str, line_no: Optional[int] = None, source: Optional[str] = None):
        self.line_no = line_no
        self.source = source
        where = f"{source}:{line_no}" if source and line_no else (source or (f"line {line_no}" if line_no else ""))
        super().__init__(f"{where}: {message}" if where else message)


class CorpusFormatError(DataError):
    """A corpus CSV row is malformed."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column '{column}': {message}" if column else f"row {row}: {message}")


@dataclass(frozen=True)
class RawNote:
    source_name: str
    session_year: int
    session_month: int
    body: str

    def __post_init__(self):
        if not self.body or not self.body.strip():
            raise NoteParseError("note body is empty", source=self.source_name)
        if not 1 <= self.session_month <= 12:
            raise NoteParseError(f"invalid session month {self.session_month}", source=self.source_name)


@dataclass(frozen=True)
class Comment:
    comment_id: int
    text: str
    source_file: str
    year: int
    month: int
    participant_name: str
    participant_org: str
    multi_org: Tuple[str, ...] = ()

    @property
    def word_count(self) -> int:
        return word_count(self.text)

    @property
    def parties(self) -> Tuple[str, ...]:
        """Every organisation the comment speaks for."""
        return self.multi_org or (self.participant_org,)


@dataclass(frozen=True)
class Corpus:
    comments: Tuple[Comment, ...] = ()
    entity_aliases: Mapping[str, str] = field(default_factory=dict)
    abbreviations: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "comments", tuple(self.comments))
        for comment in self.comments:
            canonical = self.entity_aliases.get(comment.participant_org, comment.participant_org)
            if canonical != comment.participant_org:
                raise DataError(f"comment {comment.comment_id}: organisation '{comment.participant_org}' "
                                f"is an alias of '{canonical}'")

    def __len__(self) -> int:
        return len(self.comments)

    def __iter__(self) -> Iterator[Comment]:
        return iter(self.comments)

    def word_count(self) -> int:
        return sum(c.word_count for c in self.comments)

    def by_id(self) -> Dict[int, Comment]:
        return {c.comment_id: c for c in self.comments}


@dataclass(frozen=True)
class CorpusFilter:
    parties: Optional[Tuple[str, ...]] = None
    years: Optional[Tuple[int, ...]] = None
    months: Optional[Tuple[int, ...]] = None
    exclude_multi_org: bool = False


def load_mapping(path: Optional[str]) -> Dict[str, str]:
    """
    Reads a two-column ``variant,canonical`` CSV into a dict.

    Used for entity aliases, abbreviations and the participant directory.
    """
    if not path:
        return {}
    if not os.path.exists(path):
        logging.error(f"Mapping file '{path}' not found.")
        raise FileNotFoundError(f"Mapping file '{path}' not found.")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if frame.shape[1] < 2:
        raise CorpusFormatError(f"expected two columns in '{path}'", row=1)
    mapping = {}
    for row_no, (variant, canonical) in enumerate(frame.iloc[:, :2].itertuples(index=False), start=2):
        if not variant.strip() or not canonical.strip():
            raise CorpusFormatError(f"empty entry in '{path}'", row=row_no)
        mapping[variant.strip()] = canonical.strip()
    logging.info(f"Loaded {len(mapping)} entries from '{path}'")
    return mapping


def load_date_manifest(path: Optional[str]) -> Dict[str, Tuple[int, int]]:
    """Reads a ``source_file,year,month`` CSV overriding dates parsed from file names."""
    if not path:
        return {}
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = {"source_file", "year", "month"} - set(frame.columns)
    if missing:
        raise CorpusFormatError(f"manifest '{path}' lacks columns {sorted(missing)}", row=1)
    dates = {}
    for row_no, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            dates[row.source_file] = (int(row.year), int(row.month))
        except ValueError as e:
            raise CorpusFormatError(f"non-integer date in '{path}'", row=row_no, column="year/month") from e
    return dates


def load_raw_note(path: str, style: NoteStyle, manifest: Optional[Mapping[str, Tuple[int, int]]] = None) -> RawNote:
    """
    Reads a rough-notes text file and resolves its session date.

    Args:
        path (str): Path to the UTF-8 notes file.
        style (NoteStyle): Supplies ``filename_pattern`` with ``year``/``month`` groups.
        manifest (dict): Optional per-file date override keyed by file name.

    Returns:
        RawNote: The note with its body untouched.

    Raises:
        FileNotFoundError: If the file does not exist.
        NoteParseError: If no date can be determined.
    """
    if not os.path.exists(path):
        logging.error(f"Notes file '{path}' not found.")
        raise FileNotFoundError(f"Notes file '{path}' not found.")
    name = Path(path).name
    body = Path(path).read_text(encoding="utf-8")
    if manifest and name in manifest:
        year, month = manifest[name]
    else:
        match = re.search(style.filename_pattern, name)
        if not match:
            raise NoteParseError("cannot determine session year/month from file name", source=name)
        year, month = int(match.group("year")), int(match.group("month"))
    return RawNote(source_name=name, session_year=year, session_month=month, body=body)


def _indent_of(line: str) -> int:
    line = "".join(ch for ch in line if ch not in ZERO_WIDTH).expandtabs(4)
    return len(line) - len(line.lstrip(" "))


def expand_abbreviations(text: str, abbreviations: Mapping[str, str]) -> str:
    """Whole-word, case-sensitive replacement; used for abbreviations and for entity aliases in comment text."""
    if not abbreviations:
        return text
    keys = sorted(abbreviations, key=len, reverse=True)
    pattern = re.compile(r"(?<![\w])(" + "|".join(re.escape(k) for k in keys) + r")(?![\w])")
    return pattern.sub(lambda m: abbreviations[m.group(1)], text)


def _resolve_speaker(
    speaker: str,
    aliases: Mapping[str, str],
    participants: Mapping[str, str],
    style: NoteStyle,
) -> Tuple[str, str, Tuple[str, ...]]:
    """Splits a speaker head into (participant_name, participant_org, multi_org)."""
    names, orgs = [], []
    for part in re.split(style.multi_separator, speaker.strip()):
        if not part:
            continue
        match = re.match(style.org_pattern, part)
        if match:
            name, org = match.group("name").strip(), match.group("org").strip()
        else:
            name, org = part.strip(), None
        name = aliases.get(name, name)
        if org is None:
            org = participants.get(name, name)
        org = aliases.get(org, org)
        names.append(name)
        if org not in orgs:
            orgs.append(org)
    multi = tuple(orgs) if len(orgs) > 1 else ()
    return " + ".join(names), orgs[0], multi


def parse_notes(
    raw: RawNote,
    aliases: Mapping[str, str],
    abbreviations: Mapping[str, str],
    style: NoteStyle,
    participants: Optional[Mapping[str, str]] = None,
    start_id: int = 0,
) -> List[Comment]:
    """
    Segments a rough-notes document into speaker turns.

    A margin line matching ``style.speaker_pattern`` opens a turn; indented
    bullet lines are appended to the open turn, one per line. Lines matching
    ``style.drop_patterns`` are discarded as non-conversational. Abbreviations
    are expanded in the text and entity aliases replaced by their canonical
    names, in the speaker head and in the text alike.

    Args:
        raw (RawNote): The note to parse.
        aliases (dict): Variant spelling -> canonical entity name.
        abbreviations (dict): Abbreviation -> expansion.
        style (NoteStyle): Turn grammar.
        participants (dict): Participant name -> organisation, used when the head carries no org.
        start_id (int): First comment_id to assign.

    Returns:
        list[Comment]: One comment per speaker turn, in document order.

    Raises:
        NoteParseError: In strict mode, for a margin line that is not a speaker head.
    """
    participants = participants or {}
    speaker_re = re.compile(style.speaker_pattern)
    bullet_re = re.compile(style.bullet_pattern)
    drop_res = [re.compile(p, re.IGNORECASE) for p in style.drop_patterns]

    turns: List[dict] = []
    for line_no, line in enumerate(raw.body.splitlines(), start=1):
        text_line = clean_text(line)
        if not text_line:
            continue
        if any(r.search(text_line) for r in drop_res):
            logging.debug(f"{raw.source_name}:{line_no}: dropped non-conversational line")
            continue
        indent = _indent_of(line)
        if indent < style.indent_width:
            match = speaker_re.match(text_line)
            if match:
                turns.append({"speaker": match.group("speaker"), "lines": [match.group("text").strip()], "line_no": line_no})
                continue
            if style.strict:
                logging.error(f"{raw.source_name}:{line_no}: unparseable speaker line")
                raise NoteParseError("unparseable speaker line", line_no=line_no, source=raw.source_name)
            if not turns:
                logging.warning(f"{raw.source_name}:{line_no}: text before the first speaker turn dropped")
                continue
            logging.warning(f"{raw.source_name}:{line_no}: unparseable speaker line attached to previous comment")
            turns[-1]["lines"].append(text_line.lstrip("-*").strip())
            continue
        bullet = bullet_re.match(line.expandtabs(4))
        content = clean_text(bullet.group("text")) if bullet else text_line
        if not turns:
            if style.strict:
                raise NoteParseError("continuation line without a speaker turn", line_no=line_no, source=raw.source_name)
            logging.warning(f"{raw.source_name}:{line_no}: continuation line without a speaker turn dropped")
            continue
        turns[-1]["lines"].append(content)

    comments = []
    for turn in turns:
        text = "\n".join(part for part in turn["lines"] if part)
        # aliases after abbreviations: an expansion may itself be a variant spelling
        text = clean_text(expand_abbreviations(expand_abbreviations(text, abbreviations), aliases))
        if not text:
            logging.warning(f"{raw.source_name}:{turn['line_no']}: speaker turn without text skipped")
            continue
        name, org, multi = _resolve_speaker(turn["speaker"], aliases, participants, style)
        comments.append(Comment(
            comment_id=start_id + len(comments),
            text=text,
            source_file=raw.source_name,
            year=raw.session_year,
            month=raw.session_month,
            participant_name=name,
            participant_org=org,
            multi_org=multi,
        ))
    logging.info(f"Parsed {len(comments)} comments from '{raw.source_name}'")
    return comments


def ingest_notes(
    paths: Sequence[str],
    aliases: Mapping[str, str],
    abbreviations: Mapping[str, str],
    style: NoteStyle,
    participants: Optional[Mapping[str, str]] = None,
    manifest: Optional[Mapping[str, Tuple[int, int]]] = None,
    max_workers: int = 4,
) -> Corpus:
    """
    Parses several notes files into one corpus.

    Files are parsed concurrently and concatenated in file-name order;
    comment ids are then renumbered sequentially from 0.
    """
    ordered = sorted(paths, key=lambda p: Path(p).name)

    def _parse(path: str) -> List[Comment]:
        return parse_notes(load_raw_note(path, style, manifest), aliases, abbreviations, style, participants)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = [executor.submit(_parse, p) for p in ordered]
        parsed = [f.result() for f in tqdm(futures, desc="Parsing notes", disable=len(futures) < 2)]

    comments = []
    for batch in parsed:
        for comment in batch:
            comments.append(replace(comment, comment_id=len(comments)))
    logging.info(f"Ingested {len(comments)} comments from {len(ordered)} files")
    return Corpus(tuple(comments), dict(aliases), dict(abbreviations))


def corpus_frame(corpus: Corpus) -> pd.DataFrame:
    """Returns the corpus as a DataFrame with the canonical column order."""
    rows = [
        [c.comment_id, c.text, c.source_file, c.year, c.month,
         c.participant_name, c.participant_org, MULTI_ORG_SEPARATOR.join(c.multi_org)]
        for c in corpus.comments
    ]
    return pd.DataFrame(rows, columns=CORPUS_COLUMNS)


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    """Writes a DataFrame as UTF-8 CSV with minimal RFC-4180 quoting."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", quoting=csv.QUOTE_MINIMAL, lineterminator="\n")


def sidecar_path(path: Union[str, Path], field_name: str) -> Path:
    """``corpus.csv`` -> ``corpus.entity_aliases.csv``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.{field_name}.csv")


def sidecar_frames(corpus: Corpus) -> Dict[str, pd.DataFrame]:
    """The corpus's non-empty alias and abbreviation maps as two-column frames, keyed by field name."""
    frames = {}
    for field_name, columns in SIDECAR_COLUMNS.items():
        mapping = getattr(corpus, field_name)
        if mapping:
            frames[field_name] = pd.DataFrame(sorted(mapping.items()), columns=columns)
    return frames


def write_corpus(corpus: Corpus, path: Union[str, Path]) -> None:
    """
    Writes the canonical corpus CSV.

    Non-empty alias and abbreviation maps go to ``<stem>.entity_aliases.csv`` and
    ``<stem>.abbreviations.csv`` beside it; stale ones from an earlier write are removed.
    """
    write_frame(corpus_frame(corpus), path)
    frames = sidecar_frames(corpus)
    for field_name in SIDECAR_COLUMNS:
        target = sidecar_path(path, field_name)
        if field_name in frames:
            write_frame(frames[field_name], target)
        elif target.exists():
            target.unlink()
    logging.info(f"Wrote {len(corpus)} comments to '{path}'")


def _int_field(value: str, row: int, column: str) -> int:
    try:
        return int(value)
    except ValueError as e:
        raise CorpusFormatError(f"expected an integer, got '{value}'", row=row, column=column) from e


def read_corpus(path: Union[str, Path]) -> Corpus:
    """
    Reads a canonical corpus CSV, with its alias and abbreviation maps when present.

    Raises:
        FileNotFoundError: If the file does not exist.
        CorpusFormatError: On a wrong header or a malformed row (row numbers count the header as row 1).
    """
    if not os.path.exists(path):
        logging.error(f"Corpus file '{path}' not found.")
        raise FileNotFoundError(f"Corpus file '{path}' not found.")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise CorpusFormatError(f"unparseable CSV: {e}", row=int(match.group(1)) if match else None) from e
    except pd.errors.EmptyDataError as e:
        raise CorpusFormatError("file is empty; expected a header row", row=1) from e
    if list(frame.columns) != CORPUS_COLUMNS:
        raise CorpusFormatError(f"header must be {','.join(CORPUS_COLUMNS)}", row=1, column="header")

    comments = []
    seen_ids = set()
    for row_no, row in enumerate(frame.itertuples(index=False), start=2):
        comment_id = _int_field(row.comment_id, row_no, "comment_id")
        if comment_id in seen_ids:
            raise CorpusFormatError(f"duplicate comment_id {comment_id}", row=row_no, column="comment_id")
        seen_ids.add(comment_id)
        month = _int_field(row.month, row_no, "month")
        if not 1 <= month <= 12:
            raise CorpusFormatError(f"month {month} outside 1-12", row=row_no, column="month")
        if not row.text.strip():
            raise CorpusFormatError("empty text", row=row_no, column="text")
        multi = tuple(row.multi_org.split(MULTI_ORG_SEPARATOR)) if row.multi_org else ()
        comments.append(Comment(
            comment_id=comment_id,
            text=row.text,
            source_file=row.source_file,
            year=_int_field(row.year, row_no, "year"),
            month=month,
            participant_name=row.participant_name,
            participant_org=row.participant_org,
            multi_org=multi,
        ))
    logging.info(f"Read {len(comments)} comments from '{path}'")
    maps = {}
    for field_name in SIDECAR_COLUMNS:
        target = sidecar_path(path, field_name)
        maps[field_name] = load_mapping(str(target)) if target.exists() else {}
    return Corpus(tuple(comments), **maps)


def _as_filter(predicate: Union[CorpusFilter, Mapping, None]) -> CorpusFilter:
    if predicate is None:
        return CorpusFilter()
    if isinstance(predicate, CorpusFilter):
        return predicate
    as_tuple = lambda v: None if v is None else tuple(v)
    return CorpusFilter(
        parties=as_tuple(predicate.get("parties")),
        years=as_tuple(predicate.get("years")),
        months=as_tuple(predicate.get("months")),
        exclude_multi_org=bool(predicate.get("exclude_multi_org", False)),
    )


def filter_corpus(corpus: Corpus, predicate: Union[CorpusFilter, Mapping, None] = None) -> Corpus:
    """
    Keeps comments matching every supplied criterion, preserving order.

    A comment matches ``parties`` when any organisation it speaks for is listed.
    """
    crit = _as_filter(predicate)
    parties = set(crit.parties) if crit.parties is not None else None
    years = set(crit.years) if crit.years is not None else None
    months = set(crit.months) if crit.months is not None else None

    def keep(c: Comment) -> bool:
        if parties is not None and not parties.intersection(c.parties):
            return False
        if years is not None and c.year not in years:
            return False
        if months is not None and c.month not in months:
            return False
        if crit.exclude_multi_org and c.multi_org:
            return False
        return True

    return Corpus(tuple(c for c in corpus.comments if keep(c)), corpus.entity_aliases, corpus.abbreviations)
