"""
Plot-ready explanation exports: top feature per timestep, F x T importance
heatmap, per-timestep beeswarm tables and the value x time x attribution
scatter. The optional SVG is rendered with matplotlib.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DataError
from features.binning import FEATURES
from features.codec import FeatureCodec, inverse_value
from helpers import ensure_parent

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
# afternoon and morning minutes examined in the per-timestep views
DEFAULT_MINUTES = (931, 593)


def default_timesteps(timesteps: int) -> List[int]:
    """Minutes of interest mapped onto bins: minute // (1440 / T)."""
    return [minute * timesteps // MINUTES_PER_DAY for minute in DEFAULT_MINUTES]


def top_feature_series(values: np.ndarray, features: Sequence[str] = FEATURES) -> List[Tuple[int, str, float]]:
    """argmax |phi| per timestep; ties go to the lexicographically smallest feature."""
    series = []
    for t, row in enumerate(np.asarray(values)):
        magnitude = np.abs(row)
        best = magnitude.max()
        candidates = [f for f, m in zip(features, magnitude) if m == best]
        winner = min(candidates)
        series.append((t, winner, float(row[list(features).index(winner)])))
    return series


def top_feature_frame(values: np.ndarray, features: Sequence[str] = FEATURES) -> pd.DataFrame:
    return pd.DataFrame(top_feature_series(values, features), columns=["t", "feature", "phi"])


def importance_heatmap(attributions: Sequence[np.ndarray]) -> np.ndarray:
    """F x T mean |phi| over explained instances (each attribution is T x F)."""
    if not attributions:
        raise DataError("heatmap needs at least one explained instance")
    stacked = np.abs(np.stack([np.asarray(a) for a in attributions]))
    return stacked.mean(axis=0).T


def heatmap_frame(heatmap: np.ndarray, features: Sequence[str] = FEATURES) -> pd.DataFrame:
    frame = pd.DataFrame(heatmap, index=list(features), columns=[str(t) for t in range(heatmap.shape[1])])
    frame.index.name = "feature"
    return frame.reset_index()


def beeswarm_table(
    attributions: Sequence[np.ndarray],
    encoded: Sequence[np.ndarray],
    t: int,
    codec: Optional[FeatureCodec] = None,
    features: Sequence[str] = FEATURES,
) -> pd.DataFrame:
    """
    Rows (feature, instance, encoded value, real value, phi) at timestep t,
    features ordered by mean |phi| descending (ties keep feature order).
    """
    if not attributions or len(attributions) != len(encoded):
        raise DataError("beeswarm needs one encoded input per attribution map")
    steps = np.asarray(attributions[0]).shape[0]
    if not 0 <= t < steps:
        raise DataError(f"timestep {t} outside 0..{steps - 1}")
    phi = np.stack([np.asarray(a)[t] for a in attributions])
    values = np.stack([np.asarray(x)[t] for x in encoded])
    importance = np.abs(phi).mean(axis=0)
    order = sorted(range(len(features)), key=lambda f: -importance[f])

    rows = []
    for f in order:
        feature = features[f]
        for instance in range(len(attributions)):
            real = inverse_value(codec, feature, float(values[instance, f])) if codec is not None else None
            rows.append({
                "feature": feature,
                "instance": instance,
                "encoded": float(values[instance, f]),
                "real": real,
                "phi": float(phi[instance, f]),
            })
    return pd.DataFrame(rows, columns=["feature", "instance", "encoded", "real", "phi"])


def scatter_table(values: np.ndarray, encoded: np.ndarray, codec: FeatureCodec, features: Sequence[str] = FEATURES) -> pd.DataFrame:
    """(t, feature, encoded, real, phi, phi_normalized) with phi min-max scaled over the table."""
    values = np.asarray(values)
    encoded = np.asarray(encoded)
    lo, hi = float(values.min()), float(values.max())
    rows = []
    for t in range(values.shape[0]):
        for f, feature in enumerate(features):
            phi = float(values[t, f])
            rows.append({
                "t": t,
                "feature": feature,
                "encoded": float(encoded[t, f]),
                "real": inverse_value(codec, feature, float(encoded[t, f])),
                "phi": phi,
                "phi_normalized": 0.0 if hi == lo else (phi - lo) / (hi - lo),
            })
    return pd.DataFrame(rows, columns=["t", "feature", "encoded", "real", "phi", "phi_normalized"])


def render_heatmap_svg(heatmap: np.ndarray, path: str, features: Sequence[str] = FEATURES) -> str:
    """Static SVG of the F x T heatmap. Output is byte-stable for a given input."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "phase-heatmap", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(12, 5))
        image = ax.imshow(heatmap, aspect="auto", cmap="viridis", interpolation="nearest")
        ax.set_yticks(range(len(features)))
        ax.set_yticklabels(features, fontsize=7)
        ax.set_xlabel("time step")
        ax.set_title("mean |SHAP| per feature and time step")
        fig.colorbar(image, ax=ax)
        fig.tight_layout()
        ensure_parent(path)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.info(f"[SHAP] heatmap rendered to {path}")
    return path
