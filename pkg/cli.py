# cli.py
import sys
import json
import logging
import argparse
from pathlib import Path
from typing import List, Optional

import analytics_reports as reports
import issue_query
from config import EMBEDDINGS_FILENAME, EMBEDDINGS_REPO_ID, ConfigError, PipelineConfig, load_config
from corpus_ingest import write_corpus
from embedding_store import fetch_embeddings, load_table
from utils import DataError, build_tokenizer

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageExitParser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this CLI reserves 2 for data errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageExitParser(prog="mediation", description="Issue and party-position analytics for mediation notes.")
    parser.add_argument("--config", help="TOML configuration file.")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a configuration key, e.g. --set nmf.n_topics=20 (repeatable).")
    parser.add_argument("--output-dir", help="Run directory (overrides output_dir).")
    parser.add_argument("--workers", type=int, default=4, help="Worker threads for parallel stages.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Parse notes files into the canonical corpus CSV.")
    p.add_argument("notes", nargs="*", help="Notes files (default: paths.notes).")
    p.add_argument("--out", help="Corpus CSV path (default: <output_dir>/corpus.csv).")

    sub.add_parser("expand", help="Expand the predefined issue seeds into near terms.")
    sub.add_parser("classify", help="Tag comments with predefined issues.")
    sub.add_parser("topics", help="Extract latent issues with NMF.")

    for name, help_text in (("distances", "Party positions and distances per issue."),
                            ("activity", "Word counts per issue, party and period.")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--labels-from", required=True, help="Augmented corpus CSV holding the issue labels.")
        p.add_argument("--column", default="issues", choices=["issues", "latent_issues"])

    p = sub.add_parser("diagnose", help="Embedding-space anisotropy and prefix-mean convergence.")
    p.add_argument("texts", nargs="*", help="Text files to trace (default: paths.diagnostics_texts).")
    p.add_argument("--sample", type=int, help="Compare two random disjoint samples of this many terms.")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="Render SVG charts from a run directory's CSV reports.")
    p.add_argument("--run-dir", help="Run directory (default: output_dir).")

    p = sub.add_parser("run", help="Run the full pipeline.")
    p.add_argument("--from-manifest", help="Replay the configuration recorded in a manifest.json.")

    p = sub.add_parser("fetch-embeddings", help="Download a public static embedding table.")
    p.add_argument("--dest", default="data/embeddings")
    p.add_argument("--repo-id", default=EMBEDDINGS_REPO_ID)
    p.add_argument("--filename", default=EMBEDDINGS_FILENAME)
    return parser


def _writer(config: PipelineConfig) -> reports.RunWriter:
    return reports.RunWriter(config.output_dir)


def _label_prefix(column: str) -> str:
    return "predefined" if column == "issues" else "latent"


def dispatch(args: argparse.Namespace, config: PipelineConfig) -> None:
    paths = config.paths
    if args.command == "ingest":
        if args.notes:
            config = config.model_copy(update={"paths": paths.model_copy(update={"notes": args.notes, "corpus": None})})
        corpus = reports.load_corpus(config, args.workers)
        write_corpus(corpus, args.out or Path(config.output_dir) / "corpus.csv")

    elif args.command in ("expand", "classify"):
        if not paths.issues or not paths.embeddings:
            raise DataError("paths.issues and paths.embeddings are required")
        table = load_table(paths.embeddings)
        tokenizer = build_tokenizer(paths.stopwords, paths.phrases, paths.allow_list)
        writer = _writer(config)
        if args.command == "expand":
            specs = issue_query.load_issue_specs(paths.issues)
            queries = issue_query.expand_all(table, specs, config.query, tokenizer, args.workers)
            writer.frame("expansion.csv", issue_query.expansion_report(queries))
        else:
            corpus = reports.load_corpus(config, args.workers)
            _, labels = reports.predefined_issues(config, corpus, table, tokenizer, writer, args.workers)
            writer.frame("corpus_augmented.csv", issue_query.augment_corpus_frame(corpus, labels, "issues"))

    elif args.command == "topics":
        corpus = reports.load_corpus(config, args.workers)
        tokenizer = build_tokenizer(paths.stopwords, paths.phrases, paths.allow_list)
        writer = _writer(config)
        _, labels = reports.latent_issues(config, corpus, tokenizer, writer)
        writer.frame("corpus_latent.csv", issue_query.augment_corpus_frame(corpus, labels, "latent_issues"))

    elif args.command in ("distances", "activity"):
        corpus = reports.load_corpus(config, args.workers)
        labels = reports.read_labels(args.labels_from, args.column)
        writer = _writer(config)
        prefix = _label_prefix(args.column)
        if args.command == "distances":
            table = load_table(paths.embeddings) if paths.embeddings and not paths.contextual_vectors else None
            backend = reports.load_backend(config, table)
            reports.issue_distances(config, corpus, backend, labels, None, prefix, writer, args.workers)
        else:
            reports.issue_activity(config, corpus, labels, None, prefix, writer)

    elif args.command == "diagnose":
        if not paths.embeddings:
            raise DataError("paths.embeddings is required")
        texts = args.texts or paths.diagnostics_texts
        reports.table_diagnostics(load_table(paths.embeddings), texts, _writer(config), args.sample, args.seed)

    elif args.command == "report":
        reports.render_report(args.run_dir or config.output_dir)

    elif args.command == "run":
        if args.from_manifest:
            config = reports.config_from_manifest(args.from_manifest)
        reports.run_pipeline(config, args.workers)

    elif args.command == "fetch-embeddings":
        fetch_embeddings(args.dest, args.repo_id, args.filename)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point; returns 0 on success, 1 on usage or configuration errors, 2 on data errors.

    ConfigError is checked first, so any other ValueError raised while processing
    the inputs counts as a data error.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.output_dir:
            overrides.append(f"output_dir={json.dumps(args.output_dir)}")
        config = load_config(args.config, overrides)
        dispatch(args, config)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as e:
        logging.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
