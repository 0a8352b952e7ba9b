# analytics_reports.py
import io
import os
import re
import json
import hashlib
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Collection, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.patches import Patch, Rectangle
from pydantic import BaseModel, Field

import diagnostics
import issue_query
import party_distance
import topic_model
from config import PipelineConfig
from corpus_ingest import (
    Corpus, corpus_frame, ingest_notes, load_date_manifest, load_mapping, read_corpus, sidecar_frames, sidecar_path,
    write_frame,
)
from embedding_store import ContextualBackend, EmbeddingTable, StaticBackend, load_contextual_vectors, load_table
from utils import DataError, Tokenizer, build_tokenizer

# light green (closest) to red (farthest)
LEVEL_COLORS = ["#b7e4a5", "#f6e27f", "#f4a259", "#d7263d"]
LEVEL_LEGEND = {0: "closest", 1: "close", 2: "far", 3: "farthest"}
SVG_RC = {"svg.hashsalt": "mediation-analytics", "svg.fonttype": "none"}
STAGES = [
    "startup", "ingest", "embeddings", "predefined", "latent",
    "augment", "distances", "activity", "diagnostics", "charts",
]


class ReportError(DataError):
    """A chart cannot be drawn from the supplied data."""


class PipelineError(DataError):
    """A pipeline stage failed; the run directory is marked incomplete."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


class ChartSpec(BaseModel):
    """
    What to draw and from which report.

    ``bars``: one bar per row of ``x``, one bar group per ``series`` column.
    ``lines``: long-format data, one line per value of ``group`` along ``x``,
    values from ``series[0]`` and optional error bars from ``error``.
    ``heatmap``: ``x`` holds row labels, ``series`` the column labels, cells
    hold levels 0-3.
    """
    kind: Literal["bars", "lines", "heatmap"]
    title: str
    x: str
    series: List[str]
    x_label: str = ""
    y_label: str = ""
    group: Optional[str] = None
    error: Optional[str] = None
    data_ref: str = ""
    legend: Dict[int, str] = Field(default_factory=dict)


def _check_columns(spec: ChartSpec, data: pd.DataFrame) -> None:
    needed = [spec.x] + list(spec.series) + [c for c in (spec.group, spec.error) if c]
    missing = [c for c in needed if c not in data.columns]
    if missing:
        raise ReportError(f"chart '{spec.title}': data lacks columns {missing}")
    if data.empty or not spec.series or data[list(spec.series)].isna().all().all():
        raise ReportError(f"chart '{spec.title}': empty series")


def _draw_bars(ax, spec: ChartSpec, data: pd.DataFrame) -> None:
    labels = [str(v) for v in data[spec.x]]
    width = 0.8 / len(spec.series)
    for k, column in enumerate(spec.series):
        values = data[column].to_numpy(dtype=np.float64)
        for i, value in enumerate(values):
            if np.isnan(value):
                continue
            bar = ax.bar(i - 0.4 + width * (k + 0.5), value, width=width, color=f"C{k}")
            bar[0].set_gid(f"data-bar-{k}-{i}")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    if len(spec.series) > 1:
        ax.legend(handles=[Patch(color=f"C{k}", label=c) for k, c in enumerate(spec.series)])


def _draw_lines(ax, spec: ChartSpec, data: pd.DataFrame) -> None:
    categories = list(dict.fromkeys(data[spec.x].astype(str)))
    position = {c: i for i, c in enumerate(categories)}
    groups = sorted(data[spec.group].astype(str).unique()) if spec.group else [spec.series[0]]
    for k, name in enumerate(groups):
        rows = data[data[spec.group].astype(str) == name] if spec.group else data
        ys = np.full(len(categories), np.nan)
        errs = np.full(len(categories), np.nan)
        for _, row in rows.iterrows():
            ys[position[str(row[spec.x])]] = row[spec.series[0]]
            if spec.error:
                errs[position[str(row[spec.x])]] = row[spec.error]
        # NaN breaks the line, so missing positions stay gaps
        (line,) = ax.plot(range(len(categories)), ys, marker="o", label=name, color=f"C{k}")
        line.set_gid(f"data-line-{k}")
        if spec.error and not np.all(np.isnan(errs)):
            ax.errorbar(range(len(categories)), ys, yerr=errs, fmt="none", ecolor=f"C{k}", capsize=3)
    ax.set_xticks(range(len(categories)))
    ax.set_xticklabels(categories, rotation=45, ha="right")
    ax.legend()


def _draw_heatmap(ax, spec: ChartSpec, data: pd.DataFrame) -> None:
    rows = [str(v) for v in data[spec.x]]
    for i, (_, record) in enumerate(data.iterrows()):
        for j, column in enumerate(spec.series):
            level = record[column]
            if pd.isna(level):
                continue
            level = int(level)
            if not 0 <= level < len(LEVEL_COLORS):
                raise ReportError(f"chart '{spec.title}': level {level} outside 0-{len(LEVEL_COLORS) - 1}")
            cell = Rectangle((j, i), 1, 1, facecolor=LEVEL_COLORS[level], edgecolor="white")
            cell.set_gid(f"level-{level}-cell-{i}-{j}")
            ax.add_patch(cell)
    ax.set_xlim(0, len(spec.series))
    ax.set_ylim(len(rows), 0)
    ax.set_xticks([j + 0.5 for j in range(len(spec.series))])
    ax.set_xticklabels(spec.series, rotation=45, ha="right")
    ax.set_yticks([i + 0.5 for i in range(len(rows))])
    ax.set_yticklabels(rows)
    ax.set_aspect("equal")
    if spec.legend:
        ax.legend(handles=[Patch(color=LEVEL_COLORS[k], label=text) for k, text in sorted(spec.legend.items())],
                  loc="upper left", bbox_to_anchor=(1.02, 1.0))


def render_chart(spec: ChartSpec, data: pd.DataFrame) -> str:
    """
    Draws a static SVG for a report table.

    Data elements carry ids: ``data-bar-<series>-<row>``, ``data-line-<k>``
    and ``level-<L>-cell-<i>-<j>``. Missing values are left out, never drawn as zero.

    Returns:
        str: The standalone SVG document.

    Raises:
        ReportError: If columns are missing or every value is missing.
    """
    _check_columns(spec, data)
    draw = {"bars": _draw_bars, "lines": _draw_lines, "heatmap": _draw_heatmap}[spec.kind]
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(8, 5) if spec.kind != "heatmap" else (6, 6))
        try:
            draw(ax, spec, data)
            ax.set_title(spec.title)
            ax.set_xlabel(spec.x_label)
            ax.set_ylabel(spec.y_label)
            fig.tight_layout()
            buf = io.StringIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buf.getvalue()


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower() or "unnamed"


class RunWriter:
    """Every file of a run goes through here so each output is hashed once, in one place."""

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: Dict[str, str] = {}
        self._lock = threading.Lock()

    def _record(self, name: str) -> Path:
        path = self.run_dir / name
        with self._lock:
            self.outputs[name] = file_sha256(path)
        return path

    def snapshot(self) -> Dict[str, str]:
        """A copy of the recorded outputs, safe to read while other stages are still writing."""
        with self._lock:
            return dict(self.outputs)

    def frame(self, name: str, frame: pd.DataFrame) -> Path:
        with self._lock:
            write_frame(frame, self.run_dir / name)
        return self._record(name)

    def text(self, name: str, content: str) -> Path:
        path = self.run_dir / name
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content, encoding="utf-8")
        return self._record(name)

    def trace(self, name: str, values: Sequence[float]) -> Path:
        with self._lock:
            topic_model.write_trace(values, str(self.run_dir / name))
        return self._record(name)

    def chart(self, name: str, spec: ChartSpec, data: pd.DataFrame) -> Optional[Path]:
        try:
            return self.text(name, render_chart(spec, data))
        except ReportError as e:
            logging.warning(f"Chart '{name}' skipped: {e}")
            return None


def input_files(config: PipelineConfig) -> Dict[str, str]:
    """Every input file the configuration references, keyed by a stable name."""
    paths = config.paths
    files = {f"notes[{Path(p).name}]": p for p in paths.notes}
    files.update({f"diagnostics_texts[{Path(p).name}]": p for p in paths.diagnostics_texts})
    for key in ("corpus", "embeddings", "contextual_vectors", "issues", "labels", "stopwords",
                "aliases", "abbreviations", "participants", "manifest", "phrases", "allow_list"):
        value = getattr(paths, key)
        if value:
            files[key] = value
    return files


def write_manifest(
    run_dir: Union[str, Path],
    config: PipelineConfig,
    inputs: Mapping[str, str],
    stages: Mapping[str, str],
    outputs: Optional[Mapping[str, str]] = None,
    backend: Optional[str] = None,
) -> Path:
    """
    Writes ``manifest.json``: parameters, input and output hashes, per-stage status.

    The file has no timestamps and sorted keys, so identical runs give identical bytes.
    """
    manifest = {
        "complete": all(status in ("done", "skipped") for status in stages.values()),
        "engine": config.engine,
        "backend": backend,
        "parameters": config.model_dump(mode="json"),
        "inputs": {name: {"path": str(path), "sha256": file_sha256(path)} for name, path in sorted(inputs.items())},
        "outputs": dict(sorted((outputs or {}).items())),
        "stages": {stage: stages.get(stage, "not run") for stage in STAGES},
    }
    path = Path(run_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logging.info(f"Manifest written to '{path}' (complete={manifest['complete']})")
    return path


def config_from_manifest(path: Union[str, Path]) -> PipelineConfig:
    """Rebuilds the configuration a previous run recorded in its manifest."""
    if not os.path.exists(path):
        logging.error(f"Manifest '{path}' not found.")
        raise FileNotFoundError(f"Manifest '{path}' not found.")
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    return PipelineConfig.model_validate(manifest["parameters"])


def check_startup(config: PipelineConfig) -> Dict[str, str]:
    """
    Validates a configuration before any work starts.

    Raises:
        DataError: If no embedding table or no input text is configured.
        FileNotFoundError: If a referenced file is missing.
    """
    if not config.paths.embeddings:
        raise DataError("no embedding table configured (paths.embeddings or MEDIATION_EMBEDDINGS)")
    if not config.paths.notes and not config.paths.corpus:
        raise DataError("no input configured: set paths.notes or paths.corpus")
    files = input_files(config)
    for name, path in files.items():
        if not os.path.exists(path):
            logging.error(f"Input '{name}' not found at '{path}'.")
            raise FileNotFoundError(f"Input '{name}' not found at '{path}'.")
    return files


def read_labels(path: Union[str, Path], column: str) -> Dict[int, List[str]]:
    """Reads ``;``-joined issue labels per comment from an augmented corpus CSV."""
    if not os.path.exists(path):
        logging.error(f"Augmented corpus '{path}' not found.")
        raise FileNotFoundError(f"Augmented corpus '{path}' not found.")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if column not in frame.columns or "comment_id" not in frame.columns:
        raise DataError(f"'{path}' has no '{column}' column")
    return {
        int(cid): [label for label in value.split(issue_query.SEED_SEPARATOR) if label]
        for cid, value in zip(frame["comment_id"], frame[column])
    }


def default_parties(corpus: Corpus) -> List[str]:
    """Single-party speakers ordered by words contributed, then by name."""
    words: Dict[str, int] = {}
    for comment in corpus:
        if not comment.multi_org:
            words[comment.participant_org] = words.get(comment.participant_org, 0) + comment.word_count
    return sorted(words, key=lambda p: (-words[p], p))


def _read_report(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=True)


def render_report(
    run_dir: Union[str, Path],
    writer: Optional[RunWriter] = None,
    only: Optional[Collection[str]] = None,
) -> List[Path]:
    """
    Renders the SVG charts of a run from its CSV reports.

    Charts are only ever drawn from files already in the run directory, so
    every plotted value can be traced to a report row.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        logging.error(f"Run directory '{run_dir}' not found.")
        raise FileNotFoundError(f"Run directory '{run_dir}' not found.")
    writer = writer or RunWriter(run_dir)
    written = []

    def reports(pattern: str) -> List[Path]:
        found = sorted(run_dir.glob(pattern))
        return [p for p in found if only is None or p.relative_to(run_dir).as_posix() in only]

    for path in reports("activity_*_issue.csv"):
        prefix = path.stem[len("activity_"):-len("_issue")]
        spec = ChartSpec(kind="bars", title=f"Words per {prefix} issue", x="issue", series=["words"],
                         y_label="words", data_ref=path.name)
        written.append(writer.chart(f"charts/activity_{prefix}.svg", spec, _read_report(path)))

    for path in reports("*_distances.csv"):
        prefix = path.stem[:-len("_distances")]
        frame = _read_report(path)
        for issue, rows in frame.groupby("issue", sort=False):
            spec = ChartSpec(kind="lines", title=f"{issue}: similarity to reference", x="period",
                             series=["similarity"], group="party", error="uncertainty",
                             x_label="period", y_label="cosine similarity", data_ref=path.name)
            written.append(writer.chart(f"charts/distance_{prefix}_{slug(str(issue))}.svg", spec, rows))

    for path in reports("pairwise/*.csv"):
        frame = _read_report(path)
        levels = frame[frame["kind"] == "level"].drop(columns=["kind"])
        parties = [c for c in levels.columns if c != "party"]
        spec = ChartSpec(kind="heatmap", title=f"{path.stem}: pairwise distance levels", x="party",
                         series=parties, legend=LEVEL_LEGEND, data_ref=f"pairwise/{path.name}")
        written.append(writer.chart(f"charts/pairwise_{path.stem}.svg", spec, levels))

    for histogram in reports("diagnostics/anisotropy.csv"):
        spec = ChartSpec(kind="bars", title="Dimension of largest component", x="dim", series=["count"],
                         x_label="dimension", y_label="vectors", data_ref="diagnostics/anisotropy.csv")
        written.append(writer.chart("charts/anisotropy.svg", spec, _read_report(histogram)))

    for convergence in reports("diagnostics/convergence.csv"):
        spec = ChartSpec(kind="lines", title="Cosine between prefix means of two texts", x="n",
                         series=["cosine"], x_label="tokens", y_label="cosine similarity",
                         data_ref="diagnostics/convergence.csv")
        written.append(writer.chart("charts/convergence.svg", spec, _read_report(convergence)))

    written = [p for p in written if p is not None]
    logging.info(f"Rendered {len(written)} charts in '{run_dir / 'charts'}'")
    return written


def load_corpus(config: PipelineConfig, max_workers: int = 4) -> Corpus:
    """The configured corpus CSV, or the configured notes files parsed afresh."""
    paths = config.paths
    if paths.corpus:
        corpus = read_corpus(paths.corpus)
    elif paths.notes:
        corpus = ingest_notes(paths.notes, load_mapping(paths.aliases), load_mapping(paths.abbreviations),
                              config.style, load_mapping(paths.participants), load_date_manifest(paths.manifest),
                              max_workers)
    else:
        raise DataError("no input configured: set paths.notes or paths.corpus")
    if len(corpus) == 0:
        raise DataError("corpus is empty")
    return corpus


def load_backend(config: PipelineConfig, table: Optional[EmbeddingTable]):
    """Contextual backend when a vector file is configured, static otherwise."""
    paths = config.paths
    tokenizer = build_tokenizer(paths.stopwords, paths.phrases, paths.allow_list, config.distance.remove_stopwords)
    if paths.contextual_vectors:
        backend = ContextualBackend(load_contextual_vectors(paths.contextual_vectors), tokenizer)
    elif table is not None:
        backend = StaticBackend(table, tokenizer, config.distance.chunk_limit)
    else:
        raise DataError("no embedding table or contextual vectors configured")
    logging.info(f"Document vectors from the {backend.name} backend")
    return backend


def predefined_issues(
    config: PipelineConfig,
    corpus: Corpus,
    table: EmbeddingTable,
    tokenizer: Tokenizer,
    writer: RunWriter,
    max_workers: int = 4,
) -> Tuple[List[str], Dict[int, List[str]]]:
    """Expands the issue seeds, classifies every comment and writes the expansion (and trigger) reports."""
    specs = issue_query.load_issue_specs(config.paths.issues)
    queries = issue_query.expand_all(table, specs, config.query, tokenizer, max_workers)
    assignments = issue_query.classify_predefined(corpus, queries, tokenizer, config.query.mode)
    writer.frame("expansion.csv", issue_query.expansion_report(queries))
    if config.query.mode == "per-term":
        writer.frame("triggers.csv", issue_query.trigger_report(assignments))
    order = [s.issue_name for s in specs]
    return order, issue_query.assignment_labels(assignments, order)


def latent_issues(
    config: PipelineConfig,
    corpus: Corpus,
    tokenizer: Tokenizer,
    writer: RunWriter,
) -> Tuple[List[str], Dict[int, List[str]]]:
    """Fits the topic model and writes its keyword, representative-comment and trace reports."""
    X = topic_model.build_tfidf(corpus, config.nmf, tokenizer)
    model = topic_model.fit_nmf(X, config.nmf)
    labels = topic_model.load_topic_labels(config.paths.labels)
    memberships = topic_model.assign_topics(model, X)
    writer.frame("topics.csv", topic_model.topic_report(model))
    writer.frame("representative.csv", topic_model.representative_report(model, corpus, labels=labels))
    writer.trace("objective_trace.txt", model.objective_trace)
    order = [topic_model.topic_name(t, labels) for t in range(model.n_topics)]
    return order, topic_model.membership_labels(memberships, labels)


def issue_distances(
    config: PipelineConfig,
    corpus: Corpus,
    backend,
    labels: Mapping[int, Sequence[str]],
    order: Optional[Sequence[str]],
    prefix: str,
    writer: RunWriter,
    max_workers: int = 4,
    vectors=None,
) -> None:
    """Writes the distance-line report and one pairwise matrix per issue."""
    settings = config.distance
    parties = settings.parties or default_parties(corpus)
    found = party_distance.issue_members(labels)
    members = {issue: found[issue] for issue in (order or sorted(found)) if issue in found}
    if not members or len(parties) < 2:
        logging.warning(f"No {prefix} distances: {len(members)} issues, {len(parties)} parties")
        return
    if vectors is None:
        vectors = party_distance.doc_vectors(corpus, backend)
    report = party_distance.distance_lines(
        corpus, backend, parties, members, None, settings.reference, settings.baseline_party,
        settings.show_baseline_line, settings.period, settings.weighting, settings.fraction,
        settings.n_resamples, settings.seed, max_workers, vectors,
    )
    writer.frame(f"{prefix}_distances.csv", party_distance.distance_frame(report))
    for issue, ids in members.items():
        try:
            matrix = party_distance.pairwise_matrix(corpus, backend, parties, ids, None, settings.bucket_bounds,
                                                    settings.period, settings.weighting, issue, vectors)
        except DataError as e:
            logging.warning(f"Pairwise matrix for '{issue}' skipped: {e}")
            continue
        writer.frame(f"pairwise/{prefix}_{slug(issue)}.csv", party_distance.pairwise_frame(matrix))


def issue_activity(
    config: PipelineConfig,
    corpus: Corpus,
    labels: Mapping[int, Sequence[str]],
    order: Optional[Sequence[str]],
    prefix: str,
    writer: RunWriter,
) -> None:
    for group_by in ("issue", "issue-party", "issue-period"):
        frame = party_distance.activity_counts(corpus, labels, group_by, order, config.distance.period)
        writer.frame(f"activity_{prefix}_{group_by.replace('-', '_')}.csv", frame)


def table_diagnostics(
    table: EmbeddingTable,
    texts: Sequence[str],
    writer: RunWriter,
    sample_length: Optional[int] = None,
    seed: int = 0,
) -> None:
    """
    Writes the anisotropy histogram, a prefix trace per text and, given two
    texts (or ``sample_length`` for two random disjoint samples), their
    cross-corpus convergence.
    """
    profile = diagnostics.anisotropy_profile(table)
    writer.frame("diagnostics/anisotropy.csv", diagnostics.histogram_frame(profile))
    logging.info(f"Anisotropy chi-square {diagnostics.anisotropy_chi_square(profile):.1f} "
                 f"(isotropic 99% limit {diagnostics.isotropic_chi_square_limit(profile.dim):.1f})")
    named = [(slug(Path(p).stem), diagnostics.read_stream(table, p)) for p in texts]
    if sample_length and len(named) < 2:
        named = [(f"sample_{k}", s) for k, s in enumerate(diagnostics.sample_streams(table, sample_length, seed))]
    for name, stream in named:
        trace = diagnostics.prefix_trace(table, stream)
        writer.frame(f"diagnostics/prefix_{name}.csv", diagnostics.trace_frame(trace))
    if len(named) >= 2:
        values = diagnostics.cross_corpus_convergence(table, named[0][1], named[1][1])
        writer.frame("diagnostics/convergence.csv", diagnostics.convergence_frame(values))


def run_pipeline(config: PipelineConfig, max_workers: int = 4) -> Path:
    """
    Runs every stage and writes the artifacts into ``config.output_dir``.

    Outputs: cleaned corpus, expansion report, issue-augmented corpus,
    latent-topic tables and objective trace, distance, pairwise and activity
    reports, diagnostics tables, SVG charts and ``manifest.json``.

    Raises:
        PipelineError: Naming the failed stage; the manifest marks the run incomplete.
    """
    run_dir = Path(config.output_dir)
    paths = config.paths
    stages: Dict[str, str] = {}
    state: Dict[str, object] = {"predefined": ([], {}), "latent": ([], {})}
    inputs: Dict[str, str] = {}
    writer: Optional[RunWriter] = None

    def record() -> None:
        if writer is not None:
            write_manifest(run_dir, config, inputs, stages, writer.snapshot(), state.get("backend"))

    def run_stage(name: str, fn: Callable[[], None], record_failure: bool = True) -> None:
        logging.info(f"Stage '{name}' started")
        try:
            fn()
        except Exception as e:
            stages[name] = "failed"
            logging.error(f"Stage '{name}' failed: {e}")
            if record_failure:
                record()
            raise PipelineError(name, e) from e
        stages.setdefault(name, "done")

    def startup():
        nonlocal writer
        inputs.update(check_startup(config))
        writer = RunWriter(run_dir)

    def ingest():
        state["corpus"] = load_corpus(config, max_workers)
        writer.frame("corpus.csv", corpus_frame(state["corpus"]))
        for field_name, frame in sidecar_frames(state["corpus"]).items():
            writer.frame(sidecar_path("corpus.csv", field_name).name, frame)

    def embeddings():
        state["table"] = load_table(paths.embeddings)
        state["tokenizer"] = build_tokenizer(paths.stopwords, paths.phrases, paths.allow_list, True)
        state["backend_obj"] = load_backend(config, state["table"])
        state["backend"] = state["backend_obj"].name

    def predefined():
        if not paths.issues:
            stages["predefined"] = "skipped"
            return
        state["predefined"] = predefined_issues(config, state["corpus"], state["table"], state["tokenizer"],
                                                writer, max_workers)

    def latent():
        state["latent"] = latent_issues(config, state["corpus"], state["tokenizer"], writer)

    def augment():
        corpus = state["corpus"]
        frame = issue_query.augment_corpus_frame(corpus, state["predefined"][1], "issues")
        frame = issue_query.augment_corpus_frame(corpus, state["latent"][1], "latent_issues", frame)
        writer.frame("corpus_augmented.csv", frame)

    def distances():
        vectors = party_distance.doc_vectors(state["corpus"], state["backend_obj"])
        for prefix in ("predefined", "latent"):
            order, labels = state[prefix]
            issue_distances(config, state["corpus"], state["backend_obj"], labels, order, prefix, writer,
                            max_workers, vectors)

    def activity():
        for prefix in ("predefined", "latent"):
            order, labels = state[prefix]
            if labels:
                issue_activity(config, state["corpus"], labels, order, prefix, writer)

    def run_diagnostics():
        table_diagnostics(state["table"], paths.diagnostics_texts, writer)

    def charts():
        render_report(run_dir, writer, only=set(writer.snapshot()))

    run_stage("startup", startup)
    run_stage("ingest", ingest)
    run_stage("embeddings", embeddings)
    # predefined and latent extraction are independent; the manifest is written once both settle
    with ThreadPoolExecutor(max_workers=2) as executor:
        futures = [executor.submit(run_stage, name, fn, False)
                   for name, fn in (("predefined", predefined), ("latent", latent))]
        failures = [e for e in (future.exception() for future in futures) if e is not None]
    if failures:
        record()
        raise failures[0]
    for name, fn in (("augment", augment), ("distances", distances), ("activity", activity),
                     ("diagnostics", run_diagnostics), ("charts", charts)):
        run_stage(name, fn)
    record()
    logging.info(f"Run complete: {len(writer.snapshot())} outputs in '{run_dir}'")
    return run_dir
