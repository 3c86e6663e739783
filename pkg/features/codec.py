"""
FeatureCodec: label encoding + min-max scaling, fitted once and persisted.

Missing cells and tokens unseen at fit time become -1. Ranges are fitted
after that fill, so missing lands at (or below) each feature's minimum and
scales to 0. The same codec file is reused at inference to avoid drift.
"""
import json
import logging
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from sklearn.preprocessing import LabelEncoder, MinMaxScaler

from errors import CodecError, ShapeError
from features.binning import CATEGORICAL_FEATURES, FEATURES, DaySequence
from helpers import ensure_parent

logger = logging.getLogger(__name__)

CODEC_VERSION = 1
MISSING = -1.0

Token = Union[int, str]


class FeatureCodec(BaseModel):
    model_config = ConfigDict(frozen=True)

    version: int = CODEC_VERSION
    timesteps: int
    feature_order: List[str]
    # token id = position in the list
    vocabularies: Dict[str, List[Token]]
    # [data_min_, data_max_] of the fitted MinMaxScaler per feature, after encoding and the -1 fill
    ranges: Dict[str, List[float]]

    @model_validator(mode="after")
    def _consistent(self):
        if self.feature_order != FEATURES:
            raise ValueError("feature order differs from the model feature schema")
        for feature in CATEGORICAL_FEATURES:
            tokens = self.vocabularies.get(feature)
            if tokens is None:
                raise ValueError(f"missing vocabulary for {feature}")
            if len(set(tokens)) != len(tokens):
                raise ValueError(f"vocabulary for {feature} repeats a token")
        for feature in FEATURES:
            bounds = self.ranges.get(feature)
            if bounds is None or len(bounds) != 2 or bounds[0] > bounds[1]:
                raise ValueError(f"invalid range for {feature}: {bounds}")
        return self

    def lookup(self, feature: str) -> Dict[Token, int]:
        return {token: idx for idx, token in enumerate(self.vocabularies[feature])}

    def is_degenerate(self, feature: str) -> bool:
        lo, hi = self.ranges[feature]
        return lo == hi


def _fit_vocabulary(tokens: List[Token]) -> List[Token]:
    """Sorted distinct tokens: lexicographic for strings, numeric for ports."""
    if not tokens:
        return []
    classes = LabelEncoder().fit(tokens).classes_
    return [int(c) if isinstance(tokens[0], int) else str(c) for c in classes]


def _encode_raw(sequence: DaySequence, lookups: Dict[str, Dict[Token, int]]) -> np.ndarray:
    """Encoded but unscaled T x F matrix: ids for categorical cells, -1 for missing/unseen."""
    matrix = np.full((sequence.timesteps, len(FEATURES)), MISSING, dtype=np.float64)
    for t, row in enumerate(sequence.rows):
        for f, (feature, cell) in enumerate(zip(FEATURES, row)):
            if cell is None:
                continue
            lookup = lookups.get(feature)
            if lookup is None:
                matrix[t, f] = float(cell)
            else:
                matrix[t, f] = float(lookup.get(cell, MISSING))
    return matrix


def fit(sequences: Sequence[DaySequence]) -> FeatureCodec:
    """Fit vocabularies and ranges. Input order does not affect the result."""
    if not sequences:
        raise CodecError("cannot fit a codec on an empty sequence set")
    if not any(s.label is not None for s in sequences):
        raise CodecError("codec fitting needs at least one labeled sequence")
    timesteps = sequences[0].timesteps
    if any(s.timesteps != timesteps for s in sequences):
        raise ShapeError("sequences disagree on the number of time steps")

    vocabularies: Dict[str, List[Token]] = {}
    for feature in CATEGORICAL_FEATURES:
        tokens = sorted({c for s in sequences for c in s.column(feature) if c is not None}, key=str)
        vocabularies[feature] = _fit_vocabulary(tokens)

    lookups = {f: {tok: i for i, tok in enumerate(v)} for f, v in vocabularies.items()}
    encoded = np.concatenate([_encode_raw(s, lookups) for s in sequences], axis=0)
    scaler = MinMaxScaler(clip=True).fit(encoded)
    ranges = {
        feature: [float(scaler.data_min_[i]), float(scaler.data_max_[i])] for i, feature in enumerate(FEATURES)
    }

    degenerate = [f for f in FEATURES if ranges[f][0] == ranges[f][1]]
    if degenerate:
        logger.info(f"[CODEC] degenerate (constant) features: {', '.join(degenerate)}")
    logger.info(f"[CODEC] fitted on {len(sequences)} sequence(s), T={timesteps}")
    return FeatureCodec(timesteps=timesteps, feature_order=list(FEATURES), vocabularies=vocabularies, ranges=ranges)


def _scaler(codec: FeatureCodec) -> MinMaxScaler:
    """MinMaxScaler restored from the persisted per-feature [data_min_, data_max_]."""
    lows = [codec.ranges[f][0] for f in codec.feature_order]
    highs = [codec.ranges[f][1] for f in codec.feature_order]
    return MinMaxScaler(clip=True).fit(np.array([lows, highs], dtype=np.float64))


def scale(raw: np.ndarray, codec: FeatureCodec) -> np.ndarray:
    """(x - min) / (max - min) per feature, clipped to [0, 1]; degenerate features -> 0."""
    raw = np.asarray(raw, dtype=np.float64)
    flat = raw.reshape(-1, len(codec.feature_order))
    scaled = _scaler(codec).transform(flat)
    degenerate = np.array([codec.is_degenerate(f) for f in codec.feature_order])
    scaled[:, degenerate] = 0.0
    return scaled.reshape(raw.shape)


def transform(sequence: DaySequence, codec: FeatureCodec) -> np.ndarray:
    """T x F model input in [0, 1]. The entity address is never part of it."""
    if sequence.timesteps != codec.timesteps:
        raise ShapeError(f"sequence has {sequence.timesteps} rows, codec expects {codec.timesteps}")
    lookups = {f: codec.lookup(f) for f in CATEGORICAL_FEATURES}
    return scale(_encode_raw(sequence, lookups), codec)


def transform_many(sequences: Sequence[DaySequence], codec: FeatureCodec) -> np.ndarray:
    if not sequences:
        return np.zeros((0, codec.timesteps, len(FEATURES)))
    return np.stack([transform(s, codec) for s in sequences])


def missing_row(codec: FeatureCodec) -> np.ndarray:
    """Scaled encoding of an all-missing row: the 'no activity' reference."""
    return scale(np.full(len(FEATURES), MISSING), codec)


def inverse_value(codec: FeatureCodec, feature: str, encoded: float) -> Optional[Union[float, Token]]:
    """
    Map a scaled value back to the log's scale. Quantitative features return
    the real number (-1 marks missing); categorical features return the token
    or None when the id is the missing sentinel.
    """
    lo, hi = codec.ranges[feature]
    raw = lo if lo == hi else encoded * (hi - lo) + lo
    if feature not in CATEGORICAL_FEATURES:
        return float(raw)
    idx = int(round(raw))
    vocabulary = codec.vocabularies[feature]
    if idx < 0 or idx >= len(vocabulary):
        return None
    return vocabulary[idx]


def save_codec(codec: FeatureCodec, path: str, provenance: Optional[Dict[str, object]] = None) -> str:
    """Byte-stable JSON (sorted keys)."""
    body = codec.model_dump()
    if provenance is not None:
        body["provenance"] = provenance
    ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
    return path


def load_codec(path: str) -> FeatureCodec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            body = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CodecError(f"Cannot read codec {path}: {e}") from e
    if not isinstance(body, dict):
        raise CodecError(f"Codec {path} is not a JSON object")
    version = body.get("version")
    if version != CODEC_VERSION:
        raise CodecError(f"Codec {path} has version {version!r}; this build reads version {CODEC_VERSION}")
    body.pop("provenance", None)
    try:
        return FeatureCodec(**body)
    except ValidationError as e:
        raise CodecError(f"Codec {path} is corrupted: {e}") from e
