"""
Pipeline configuration.
One flat dotenv-style document (KEY=VALUE), validated by pydantic.
The file is read with dotenv_values and never exported to os.environ,
so environment variables do not override anything.
"""
import hashlib
import json
import os
from typing import Dict, List, Literal, Optional
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from errors import ConfigError


UNHASHED_KEYS = {"output_dir", "log_level", "workers", "explain_svg"}


def _split_list(value):
    if isinstance(value, str):
        value = value.strip()
        if not value:
            return []
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class PipelineConfig(BaseModel):
    """Every key the pipeline understands. Config file keys are the upper-case field names."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # ----------------------
    # Paths
    # ----------------------
    input_path: Optional[str] = None
    input_format: Literal["auto", "tsv", "jsonl"] = "auto"
    output_dir: str = "out"
    manifest_path: Optional[str] = None
    records_path: Optional[str] = None
    sequences_path: Optional[str] = None
    codec_path: Optional[str] = None
    model_path: Optional[str] = None
    report_path: Optional[str] = None
    scores_path: Optional[str] = None

    # ----------------------
    # Binning
    # ----------------------
    timesteps: int = 1440
    timezone: str = "UTC"

    # ----------------------
    # Model hyperparameters
    # ----------------------
    conv_filters: int = 32
    conv_kernel: int = 3
    lstm_hidden: int = 32
    attn_heads: int = 4
    dropout: float = 0.2

    # ----------------------
    # Training
    # ----------------------
    folds: int = 10
    epochs: int = 1000
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 20
    min_delta: float = 0.001
    batch_size: int = 16
    monitor: Literal["loss", "val_loss"] = "loss"
    val_fraction: float = 0.1
    group_folds: bool = True
    workers: int = 1

    # ----------------------
    # Scoring
    # ----------------------
    band_thresholds: List[float] = [0.8, 0.6, 0.4, 0.2]
    decision_threshold: float = 0.5

    # ----------------------
    # Explanations
    # ----------------------
    explain_method: Literal["auto", "exact", "kernel"] = "auto"
    explain_samples: int = 256
    explain_background: Literal["missing", "mean"] = "missing"
    explain_timesteps: Optional[List[int]] = None
    explain_max_days: int = 4
    explain_svg: bool = True

    # ----------------------
    # Synthetic corpora and ingest
    # ----------------------
    synth_corpus: Literal["benchmark", "personas"] = "benchmark"
    synth_format: Literal["tsv", "jsonl"] = "tsv"
    persona_entities: int = 4
    persona_days: int = 5
    pseudonymize: bool = False
    pseudonym_key: Optional[str] = None
    pseudonym_salt: str = ""

    seed: int = 0
    log_level: str = "INFO"

    @field_validator("band_thresholds", "explain_timesteps", mode="before")
    @classmethod
    def _comma_lists(cls, value):
        return _split_list(value)

    @field_validator("timezone")
    @classmethod
    def _known_timezone(cls, value: str) -> str:
        try:
            ZoneInfo(value)
        except (ZoneInfoNotFoundError, ValueError) as e:
            raise ValueError(f"unknown timezone {value!r}") from e
        return value

    @field_validator("seed")
    @classmethod
    def _u64_seed(cls, value: int) -> int:
        if not 0 <= value < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return value

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.timesteps <= 0 or 86400 % self.timesteps != 0:
            raise ValueError(f"TIMESTEPS={self.timesteps} must divide 86400 evenly")
        if self.conv_kernel % 2 != 1:
            raise ValueError("CONV_KERNEL must be odd")
        if (2 * self.lstm_hidden) % self.attn_heads != 0:
            raise ValueError("2*LSTM_HIDDEN must be divisible by ATTN_HEADS")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("DROPOUT must be in [0, 1)")
        thresholds = self.band_thresholds
        if len(thresholds) != 4:
            raise ValueError("BAND_THRESHOLDS needs exactly four values")
        if any(not 0.0 < t < 1.0 for t in thresholds):
            raise ValueError("BAND_THRESHOLDS must lie in (0, 1)")
        if any(a <= b for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("BAND_THRESHOLDS must be strictly decreasing")
        if not 0.0 < self.val_fraction <= 0.5:
            raise ValueError("VAL_FRACTION must be in (0, 0.5]")
        if self.folds < 2:
            raise ValueError("FOLDS must be at least 2")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1 or self.workers < 1:
            raise ValueError("BATCH_SIZE, EPOCHS, PATIENCE and WORKERS must be positive")
        return self

    def config_hash(self) -> str:
        """
        SHA-256 over the sorted-key JSON dump. Embedded in every artifact.
        Keys that cannot change an artifact's content are left out.
        """
        canonical = json.dumps(self.model_dump(exclude=UNHASHED_KEYS), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def provenance(self) -> Dict[str, object]:
        return {"config_hash": self.config_hash(), "seed": self.seed}

    def out(self, name: str) -> str:
        return os.path.join(self.output_dir, name)


def build_config(values: Dict[str, Optional[str]]) -> PipelineConfig:
    """Validate a flat key/value mapping (keys in any case)."""
    normalized = {}
    for key, value in values.items():
        if value is None:
            continue
        normalized[key.strip().lower()] = value
    try:
        return PipelineConfig(**normalized)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']).upper() or 'CONFIG'}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {problems}") from e


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> PipelineConfig:
    """
    Read a config document and apply CLI overrides on top.
    A missing file is a config error, not a silent default.
    """
    values: Dict[str, Optional[str]] = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        values.update({k.lower(): v for k, v in dotenv_values(dotenv_path=path).items()})
    for key, value in (overrides or {}).items():
        values[key.lower()] = value
    return build_config(values)


def require_paths(config: PipelineConfig, command: str, *fields: str, must_exist: bool = True) -> None:
    """Fail fast with an actionable message when a command lacks a path it needs."""
    for field in fields:
        value = getattr(config, field)
        key = field.upper()
        if not value:
            flag = "--" + field.replace("_path", "").replace("_", "-")
            raise ConfigError(f"'{command}' requires {key}: set {key} in the config file or pass {flag} <path>")
        if must_exist and not os.path.exists(value):
            raise ConfigError(f"'{command}': {key} points to a missing file: {value}")
