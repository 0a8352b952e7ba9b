# config.py
import os
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

load_dotenv()

LOG_LEVEL = os.getenv("MEDIATION_LOG_LEVEL", "INFO").upper()
DEFAULT_EMBEDDINGS = os.getenv("MEDIATION_EMBEDDINGS")
DEFAULT_CONTEXTUAL_VECTORS = os.getenv("MEDIATION_CONTEXTUAL_VECTORS")
DEFAULT_STOPWORDS = os.getenv("MEDIATION_STOPWORDS")
EMBEDDINGS_REPO_ID = os.getenv("EMBEDDINGS_REPO_ID", "stanfordnlp/glove")
EMBEDDINGS_FILENAME = os.getenv("EMBEDDINGS_FILENAME", "glove.6B.300d.txt")

DATA_DIR = Path(__file__).resolve().parent / "data"
BUNDLED_STOPWORDS = DATA_DIR / "stopwords_en.txt"

logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')


class ConfigError(ValueError):
    """Raised when a configuration file or override cannot be applied."""


class NoteStyle(BaseModel):
    """Speaker-turn grammar of the rough-notes format."""
    # "- Name: text" at the left margin opens a turn
    speaker_pattern: str = r"^-\s*(?P<speaker>[^:\n]{1,120}?):\s*(?P<text>.*)$"
    # indented "- text" continues the current turn
    bullet_pattern: str = r"^\s+[-•*]\s*(?P<text>.+)$"
    indent_width: int = 1
    # organisation given inline as "Name (Org)"
    org_pattern: str = r"^(?P<name>.+?)\s*\((?P<org>[^()]+)\)$"
    multi_separator: str = r"\s*\+\s*"
    drop_patterns: List[str] = Field(default_factory=lambda: [
        r"^\s*#",
        r"^\s*(agenda|session|day)\b.*$",
        r"^\s*\d{1,2}[:.]\d{2}\s*[-–]",
    ])
    filename_pattern: str = r"(?P<year>\d{4})[-_](?P<month>\d{1,2})"
    strict: bool = False

    @field_validator("indent_width")
    @classmethod
    def _positive_indent(cls, value: int) -> int:
        if value < 1:
            raise ValueError("indent_width must be >= 1")
        return value


class QueryConfig(BaseModel):
    """Dynamic-threshold query expansion parameters."""
    base_sim: float = 0.4
    max_sim: float = 0.6
    overflow_count: int = 1000
    step: float = 0.05
    mode: Literal["combined", "per-term"] = "combined"

    @model_validator(mode="after")
    def _check_range(self) -> "QueryConfig":
        if not 0 < self.base_sim <= self.max_sim < 1:
            raise ValueError("expected 0 < base_sim <= max_sim < 1")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.overflow_count < 1:
            raise ValueError("overflow_count must be >= 1")
        return self


class NmfConfig(BaseModel):
    """Latent-issue extraction parameters."""
    n_topics: int = 20
    alpha: float = 0.1
    l1_ratio: float = 0.5
    tol: float = 1e-4
    max_iter: int = 500
    max_features: int = 10000
    max_df: float = 0.9
    membership_threshold: float = 0.1
    n_keywords: int = 10
    top_comments: int = 10
    seed: int = 0
    svd_oversamples: int = 10
    svd_power_iterations: int = 7
    drop_multi_org: bool = True

    @field_validator("n_topics")
    @classmethod
    def _min_topics(cls, value: int) -> int:
        if value < 2:
            raise ValueError("n_topics must be >= 2")
        return value

    @field_validator("l1_ratio", "max_df")
    @classmethod
    def _unit_interval(cls, value: float) -> float:
        if not 0 <= value <= 1:
            raise ValueError("value must lie in [0, 1]")
        return value

    @field_validator("alpha", "tol")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("value must be >= 0")
        return value


class DistanceConfig(BaseModel):
    """Party-distance settings."""
    parties: List[str] = Field(default_factory=list)
    baseline_party: Optional[str] = None
    reference: Literal["average", "baseline"] = "average"
    show_baseline_line: bool = True
    period: Literal["year", "year-month"] = "year"
    weighting: Literal["token", "comment"] = "token"
    chunk_limit: int = 512
    remove_stopwords: bool = True
    fraction: float = 0.10
    n_resamples: int = 200
    seed: int = 0
    bucket_bounds: Optional[List[float]] = None

    @field_validator("fraction")
    @classmethod
    def _fraction_range(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("fraction must lie in (0, 1)")
        return value

    @field_validator("chunk_limit", "n_resamples")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("value must be >= 1")
        return value

    @field_validator("bucket_bounds")
    @classmethod
    def _three_bounds(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and (len(value) != 3 or sorted(value) != list(value)):
            raise ValueError("bucket_bounds needs 3 ascending inner bounds")
        return value


class PathsConfig(BaseModel):
    notes: List[str] = Field(default_factory=list)
    corpus: Optional[str] = None
    embeddings: Optional[str] = DEFAULT_EMBEDDINGS
    contextual_vectors: Optional[str] = DEFAULT_CONTEXTUAL_VECTORS
    issues: Optional[str] = None
    labels: Optional[str] = None
    stopwords: Optional[str] = DEFAULT_STOPWORDS
    aliases: Optional[str] = None
    abbreviations: Optional[str] = None
    participants: Optional[str] = None
    manifest: Optional[str] = None
    phrases: Optional[str] = None
    allow_list: Optional[str] = None
    diagnostics_texts: List[str] = Field(default_factory=list)


class PipelineConfig(BaseModel):
    """Top-level configuration for one pipeline run."""
    paths: PathsConfig = Field(default_factory=PathsConfig)
    style: NoteStyle = Field(default_factory=NoteStyle)
    query: QueryConfig = Field(default_factory=QueryConfig)
    nmf: NmfConfig = Field(default_factory=NmfConfig)
    distance: DistanceConfig = Field(default_factory=DistanceConfig)
    output_dir: str = "runs/latest"
    engine: Literal["nmf"] = "nmf"


def _parse_override_value(raw: str) -> Any:
    """Interprets a CLI override value with TOML scalar/array syntax, falling back to a string."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """
    Applies dotted ``key=value`` overrides (e.g. ``nmf.n_topics=12``) to a raw config mapping.

    Raises:
        ConfigError: If an override is not of the form ``key=value``.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_override_value(raw.strip())
    return data


def load_config(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> PipelineConfig:
    """
    Loads a TOML pipeline configuration and applies CLI overrides.

    Args:
        path (str): Path to the TOML file. When omitted, defaults are used.
        overrides (list[str]): Dotted ``key=value`` overrides.

    Returns:
        PipelineConfig: The validated configuration.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ConfigError: If the file or an override is invalid.
    """
    data: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            logging.error(f"Config file '{path}' not found.")
            raise FileNotFoundError(f"Config file '{path}' not found.")
        try:
            with open(path, "rb") as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as e:
            logging.error(f"Invalid TOML in '{path}': {e}")
            raise ConfigError(f"Invalid TOML in '{path}': {e}") from e
        base = Path(path).resolve().parent
        _resolve_relative_paths(data.get("paths", {}), base)
    # [run] keys live at the top level; overrides may use either form
    data.update(data.pop("run", {}))
    data = apply_overrides(data, overrides or [])
    data.update(data.pop("run", {}))
    try:
        config = PipelineConfig.model_validate(data)
    except ValidationError as e:
        logging.error(f"Invalid configuration: {e}")
        raise ConfigError(str(e)) from e
    logging.info(f"Configuration loaded from {path or 'defaults'}")
    return config


def _resolve_relative_paths(paths: Dict[str, Any], base: Path) -> None:
    """Makes relative paths in the ``[paths]`` table relative to the config file."""
    for key, value in paths.items():
        if isinstance(value, str) and value and not os.path.isabs(value):
            paths[key] = str(base / value)
        elif isinstance(value, list):
            paths[key] = [str(base / v) if isinstance(v, str) and not os.path.isabs(v) else v for v in value]
