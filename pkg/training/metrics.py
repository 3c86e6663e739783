"""
Evaluation metrics. Human (label 1) is the positive class.
"""
import warnings
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from sklearn.metrics import (
    accuracy_score,
    balanced_accuracy_score,
    f1_score,
    precision_score,
    recall_score,
    roc_auc_score,
)

from errors import DataError

METRICS = ["accuracy", "balanced_accuracy", "precision", "recall", "f1", "auc"]


class MetricSummary(BaseModel):
    mean: Optional[float]
    std: Optional[float]
    # folds contributing (AUC skips single-class folds)
    n: int
    formatted: str


def evaluate(y_true: Sequence[int], probabilities: Sequence[float], threshold: float = 0.5) -> Dict[str, Optional[float]]:
    """
    Metric map for one labeled set. AUC is None ("undefined") when only one
    class is present; ties in the scores count as half-concordant.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if y_true.size == 0:
        raise DataError("cannot evaluate an empty labeled set")
    predicted = (probabilities >= threshold).astype(np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        metrics: Dict[str, Optional[float]] = {
            "accuracy": float(accuracy_score(y_true, predicted)),
            "balanced_accuracy": float(balanced_accuracy_score(y_true, predicted)),
            "precision": float(precision_score(y_true, predicted, pos_label=1, zero_division=0)),
            "recall": float(recall_score(y_true, predicted, pos_label=1, zero_division=0)),
            "f1": float(f1_score(y_true, predicted, pos_label=1, zero_division=0)),
        }
    metrics["auc"] = float(roc_auc_score(y_true, probabilities)) if len(np.unique(y_true)) == 2 else None
    return metrics


def _short(value: float) -> str:
    text = f"{value:.3f}"
    return text[1:] if text.startswith("0.") else text


def format_row(mean: Optional[float], std: Optional[float]) -> str:
    """'.954 ± .030'."""
    if mean is None or std is None:
        return "undefined"
    return f"{_short(mean)} ± {_short(std)}"


def aggregate(per_fold: List[Dict[str, Optional[float]]]) -> Dict[str, MetricSummary]:
    """Mean and population std (ddof=0) per metric across folds."""
    summary: Dict[str, MetricSummary] = {}
    for metric in METRICS:
        values = [fold[metric] for fold in per_fold if fold.get(metric) is not None]
        if values:
            mean, std = float(np.mean(values)), float(np.std(values, ddof=0))
        else:
            mean, std = None, None
        summary[metric] = MetricSummary(mean=mean, std=std, n=len(values), formatted=format_row(mean, std))
    return summary
