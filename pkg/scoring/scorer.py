"""
Score entity-days and aggregate per entity.
"""
import logging
from collections import Counter
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from errors import DataError, ShapeError
from features.binning import FEATURES, DaySequence
from features.codec import FeatureCodec, transform_many
from phase.model import PhaseModel, predict_proba
from scoring.bands import BAND_ORDER, DEFAULT_THRESHOLDS, Band, band, clamp_score

logger = logging.getLogger(__name__)


class PhaseScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    entity: str
    date: str
    raw: float
    reported: float
    band: Band


class EntityScoreSummary(BaseModel):
    entity: str
    dates: List[str]
    scores: List[float]
    mean: float
    std: float
    dominant_band: Band


def score_days(
    model: PhaseModel,
    codec: FeatureCodec,
    sequences: Sequence[DaySequence],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> List[PhaseScore]:
    """One score per DaySequence, in input order."""
    if codec.timesteps != model.config.timesteps or len(FEATURES) != model.config.features:
        raise ShapeError(
            f"codec (T={codec.timesteps}) and model (T={model.config.timesteps}, "
            f"F={model.config.features}) disagree"
        )
    probabilities = predict_proba(model, transform_many(sequences, codec))
    scores = []
    for seq, raw in zip(sequences, probabilities):
        reported = clamp_score(raw)
        scores.append(PhaseScore(entity=seq.entity, date=seq.date, raw=float(raw), reported=reported, band=band(reported, thresholds)))
    logger.info(f"[SCORER] scored {len(scores)} entity-day(s)")
    return scores


def summarize_entity(scores: Sequence[PhaseScore]) -> EntityScoreSummary:
    """Mean and population std of the reported scores; dominant band = most frequent (ties -> less human)."""
    if not scores:
        raise DataError("no scores to summarize")
    entities = {s.entity for s in scores}
    if len(entities) != 1:
        raise DataError(f"scores span {len(entities)} entities")
    ordered = sorted(scores, key=lambda s: s.date)
    values = np.array([s.reported for s in ordered])
    counts = Counter(s.band for s in ordered)
    dominant = max(counts, key=lambda b: (counts[b], -b.humanness))
    return EntityScoreSummary(
        entity=ordered[0].entity,
        dates=[s.date for s in ordered],
        scores=values.tolist(),
        mean=float(values.mean()),
        std=float(values.std(ddof=0)),
        dominant_band=dominant,
    )


def summarize_all(scores: Sequence[PhaseScore]) -> List[EntityScoreSummary]:
    grouped: Dict[str, List[PhaseScore]] = {}
    for s in scores:
        grouped.setdefault(s.entity, []).append(s)
    return [summarize_entity(grouped[entity]) for entity in sorted(grouped)]


def scores_frame(scores: Sequence[PhaseScore]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"entity": s.entity, "date": s.date, "raw": s.raw, "reported": s.reported, "band": s.band.value} for s in scores],
        columns=["entity", "date", "raw", "reported", "band"],
    )


def band_histogram(scores: Sequence[PhaseScore]) -> Dict[str, int]:
    counts = Counter(s.band for s in scores)
    return {b.value: counts.get(b, 0) for b in BAND_ORDER}
