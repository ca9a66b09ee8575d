"""
Configuration management for the retrieval toolkit.
Handles environment variables, logging setup, and the JSON run configuration
shared by the pipeline stages.
"""

import copy
import hashlib
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from artifacts import dumps_json, read_json
from corpus import DEFAULT_MAX_WORDS
from encoder import EncoderConfig
from errors import ConfigError, DataError
from generator import DEFAULT_NEGATIVE_DEPTH, DEFAULT_QUESTIONS_PER_PASSAGE, CandidateWeights, SamplerConfig
from lexical_index import Bm25Params
from trainer import TrainConfig


class Config:
    """Process-level settings read from the environment (and .env)."""

    def __init__(self):
        load_dotenv()

        self.db_url = os.getenv('RETRO_DB_URL', 'sqlite:///retro_results.db')
        self.db_configured = 'RETRO_DB_URL' in os.environ
        self.artifact_dir = os.getenv('RETRO_ARTIFACT_DIR', 'artifacts')

        self.log_level = os.getenv('RETRO_LOG_LEVEL', 'INFO').upper()
        self.log_file = os.getenv('RETRO_LOG_FILE', 'logs/retro.log')
        self.log_format = '%(levelname)s [%(asctime)s] %(message)s'
        self.log_date_format = '%Y-%m-%d %H:%M:%S'

        jobs = os.getenv('RETRO_JOBS', '1')
        self.jobs = int(jobs) if jobs.strip().lstrip('-').isdigit() else 0
        self.debug_mode = os.getenv('RETRO_DEBUG', 'False').lower() == 'true'

    def validate(self) -> bool:
        """
        Validate configuration settings.

        Returns:
            bool: True if configuration is valid, False otherwise.
        """
        errors = []

        valid_log_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if self.log_level not in valid_log_levels:
            errors.append(f"Invalid log level: {self.log_level}")

        if self.jobs < 1:
            errors.append("RETRO_JOBS must be an integer greater than 0")

        log_dir = os.path.dirname(self.log_file)
        if log_dir and not os.path.exists(log_dir):
            try:
                os.makedirs(log_dir, exist_ok=True)
            except OSError as e:
                errors.append(f"Cannot create log directory: {e}")

        if errors:
            for error in errors:
                print(f"Configuration Error: {error}")
            return False

        return True

    def setup_logging(self) -> None:
        """Log to the configured file and to stderr."""
        logging.basicConfig(
            level=getattr(logging, self.log_level, logging.INFO),
            format=self.log_format,
            datefmt=self.log_date_format,
            handlers=[
                logging.FileHandler(self.log_file),
                logging.StreamHandler()
            ]
        )

        logging.getLogger('sqlalchemy.engine').setLevel(logging.WARNING)


@dataclass(frozen=True)
class CorpusSection:
    max_words: int = DEFAULT_MAX_WORDS

    def __post_init__(self):
        if self.max_words < 1:
            raise DataError(f"max_words must be >= 1, got {self.max_words}")


@dataclass(frozen=True)
class GeneratorSection:
    n_questions: int = DEFAULT_QUESTIONS_PER_PASSAGE
    top_p: float = 0.95
    top_k: int = 10
    seed: int = 0
    negative_depth: int = DEFAULT_NEGATIVE_DEPTH
    weights: CandidateWeights = field(default_factory=CandidateWeights)

    def __post_init__(self):
        if self.n_questions < 1:
            raise DataError(f"n_questions must be >= 1, got {self.n_questions}")
        if self.negative_depth < 1:
            raise DataError(f"negative_depth must be >= 1, got {self.negative_depth}")
        self.sampler()

    def sampler(self, seed: Optional[int] = None) -> SamplerConfig:
        return SamplerConfig(top_p=self.top_p, top_k=self.top_k, seed=self.seed if seed is None else seed)


@dataclass(frozen=True)
class TrainerSection:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig.for_stage("pretrain"))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig.for_stage("finetune"))

    def __post_init__(self):
        if self.pretrain.stage != "pretrain" or self.finetune.stage != "finetune":
            raise DataError("trainer.pretrain and trainer.finetune must keep their own stage names")


@dataclass(frozen=True)
class EvalSection:
    ks: Tuple[int, ...] = (1, 5, 20, 100)
    depth: int = 100

    def __post_init__(self):
        if not self.ks or any(k < 1 for k in self.ks):
            raise DataError(f"eval.ks must be a nonempty list of integers >= 1, got {list(self.ks)}")
        if self.depth < max(self.ks):
            raise DataError(f"eval.depth ({self.depth}) must be >= max(ks) ({max(self.ks)})")


@dataclass(frozen=True)
class PathsSection:
    passages: Optional[str] = None
    bm25_index: Optional[str] = None
    synthetic: Optional[str] = None
    train_qa: Optional[str] = None
    test_qa: Optional[str] = None
    out_dir: Optional[str] = None
    ood_passages: Optional[str] = None
    ood_test_qa: Optional[str] = None

    def __post_init__(self):
        if (self.ood_passages is None) != (self.ood_test_qa is None):
            raise DataError("paths.ood_passages and paths.ood_test_qa must be given together")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    corpus: CorpusSection = field(default_factory=CorpusSection)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> Dict[str, Any]:
        record = asdict(self)
        record["eval"]["ks"] = list(self.eval.ks)
        return record

    def fingerprint(self) -> str:
        """sha256 of every setting that can change results (paths excluded)."""
        record = self.to_dict()
        del record["paths"]
        return hashlib.sha256(dumps_json(record).encode("utf-8")).hexdigest()


# Section name -> dataclass; nested sections recurse.
_SCHEMA = {
    RunConfig: {
        "corpus": CorpusSection,
        "bm25": Bm25Params,
        "generator": GeneratorSection,
        "trainer": TrainerSection,
        "eval": EvalSection,
        "paths": PathsSection,
    },
    GeneratorSection: {"weights": CandidateWeights},
    TrainerSection: {"encoder": EncoderConfig, "pretrain": TrainConfig, "finetune": TrainConfig},
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {},
    # Hyperparameters for runs with a BERT-scale encoder.
    "fullscale": {
        "bm25": {"k1": 1.2, "b": 0.75},
        "generator": {"n_questions": 4, "top_p": 0.95, "top_k": 10},
        "trainer": {
            "pretrain": {"learning_rate": 1e-5, "epochs": 6, "batch_size": 1024, "grad_accum_steps": 8},
            "finetune": {"learning_rate": 1e-5, "epochs": 20, "batch_size": 128, "grad_accum_steps": 1},
        },
    },
}

# Full-scale values with no counterpart in this encoder; reported by `retro show-config`.
FULLSCALE_NOTES: Dict[str, Any] = {
    "question_generator": {"learning_rate": 3e-5, "epochs": 3, "batch_size": 24, "max_length": 1024},
    "retriever": {"pretrain_max_length": 256, "finetune_max_length": 256},
    "synthetic_passages": 2_000_000,
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _coerce(value: Any, default: Any, where: str, problems: List[str]) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, tuple):
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return tuple(value)
    elif default is None or isinstance(default, str):
        if value is None or isinstance(value, str):
            return value
    problems.append(f"{where}: expected {type(default).__name__}, got {value!r}")
    return default


def _build(cls, data: Any, where: str, problems: List[str], extra: Optional[Dict[str, Any]] = None):
    if not isinstance(data, dict):
        problems.append(f"{where or 'run config'}: expected an object, got {type(data).__name__}")
        data = {}
    nested = _SCHEMA.get(cls, {})
    defaults = cls(**(extra or {}))
    known = {f.name for f in fields(cls)}
    for key in sorted(set(data) - known):
        problems.append(f"{where + '.' if where else ''}{key}: unknown key")
    values: Dict[str, Any] = dict(extra or {})
    for name in sorted(known & set(data)):
        path = f"{where}.{name}" if where else name
        if cls is TrainConfig and name == "stage":
            problems.append(f"{path}: fixed by the section name")
        elif name in nested:
            stage = None
            if nested[name] is TrainConfig:
                stage = {"stage": name, "epochs": TrainConfig.for_stage(name).epochs}
            values[name] = _build(nested[name], data[name], path, problems, stage)
        else:
            values[name] = _coerce(data[name], getattr(defaults, name), path, problems)
    try:
        return cls(**values)
    except DataError as e:
        problems.append(f"{where or 'run config'}: {e}")
        return defaults


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    """
    Validate a run configuration document against the schema.

    The preset named by "preset" (default "desk") supplies the base values and
    the document overrides them.

    Raises:
        ConfigError: listing every problem found
    """
    if not isinstance(data, dict):
        raise ConfigError(f"run config must be a JSON object, got {type(data).__name__}")
    preset = data.get("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
    problems: List[str] = []
    run_config = _build(RunConfig, _merge(PRESETS[preset], data), "", problems)
    if problems:
        raise ConfigError(problems)
    return run_config


def load_run_config(path: Optional[str]) -> RunConfig:
    """Read and validate run.json; no path means the desk defaults."""
    if path is None:
        return RunConfig()
    try:
        data = read_json(path)
    except DataError as e:
        raise ConfigError(str(e)) from e
    return parse_run_config(data)


def preset_config(name: str) -> RunConfig:
    return parse_run_config({"preset": name})


config = Config()
