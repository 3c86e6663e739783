"""
Fidelity score bands. Half-open intervals, top band closed above:

    S >= 0.8        ConfidentHuman
    0.6 <= S < 0.8  LikelyHuman
    0.4 <= S < 0.6  Ambiguous
    0.2 <= S < 0.4  LikelyNonHuman
    S < 0.2         ConfidentNonHuman
"""
import math
from enum import Enum
from typing import Sequence

import numpy as np

from errors import DataError

DEFAULT_THRESHOLDS = (0.8, 0.6, 0.4, 0.2)
SCORE_FLOOR = 0.01
SCORE_CEILING = 0.99


class Band(str, Enum):
    CONFIDENT_HUMAN = "ConfidentHuman"
    LIKELY_HUMAN = "LikelyHuman"
    AMBIGUOUS = "Ambiguous"
    LIKELY_NON_HUMAN = "LikelyNonHuman"
    CONFIDENT_NON_HUMAN = "ConfidentNonHuman"

    @property
    def humanness(self) -> int:
        """4 for ConfidentHuman down to 0 for ConfidentNonHuman."""
        return len(BAND_ORDER) - 1 - BAND_ORDER.index(self)


# most human first
BAND_ORDER = [
    Band.CONFIDENT_HUMAN,
    Band.LIKELY_HUMAN,
    Band.AMBIGUOUS,
    Band.LIKELY_NON_HUMAN,
    Band.CONFIDENT_NON_HUMAN,
]


def clamp_score(raw: float) -> float:
    return float(np.clip(raw, SCORE_FLOOR, SCORE_CEILING))


def band(score: float, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> Band:
    if not math.isfinite(score) or not SCORE_FLOOR <= score <= SCORE_CEILING:
        raise DataError(f"score {score} outside the reported range [{SCORE_FLOOR}, {SCORE_CEILING}]")
    for threshold, label in zip(thresholds, BAND_ORDER):
        if score >= threshold:
            return label
    return Band.CONFIDENT_NON_HUMAN
