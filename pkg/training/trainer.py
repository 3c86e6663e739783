"""
Fold training and stratified cross-validation.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from config import PipelineConfig
from errors import DataError, NumericalError
from helpers import derive_seeds
from nn import ops
from nn.optim import AdamaxState, adamax_step
from phase.model import PhaseModel, PhaseModelConfig, init_model, loss_and_grads, predict_proba
from training.early_stop import EarlyStopState
from training.folds import monitor_split, stratified_kfold, undersample
from training.metrics import MetricSummary, aggregate, evaluate

logger = logging.getLogger(__name__)


class TrainSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = 1000
    batch_size: int = 16
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 20
    min_delta: float = 0.001
    monitor: str = "loss"
    val_fraction: float = 0.1
    threshold: float = 0.5

    @classmethod
    def from_pipeline(cls, config: PipelineConfig) -> "TrainSettings":
        return cls(
            epochs=config.epochs,
            batch_size=config.batch_size,
            lr=config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            epsilon=config.epsilon,
            patience=config.patience,
            min_delta=config.min_delta,
            monitor=config.monitor,
            val_fraction=config.val_fraction,
            threshold=config.decision_threshold,
        )


class FoldHistory(BaseModel):
    losses: List[float] = []
    val_losses: List[float] = []
    stopped_epoch: Optional[int] = None
    best_epoch: Optional[int] = None
    best_loss: Optional[float] = None

    @property
    def epochs_run(self) -> int:
        return len(self.losses)


class FoldResult(BaseModel):
    fold: int
    train_size: int
    val_size: int
    monitor_size: int = 0
    metrics: Dict[str, Optional[float]]
    history: FoldHistory


class TrainReport(BaseModel):
    k: int
    seed: int
    grouped: bool = False
    threshold: float
    architecture: PhaseModelConfig
    folds: List[FoldResult]
    summary: Dict[str, MetricSummary]

    def loss_history(self) -> pd.DataFrame:
        """Long form (epoch, fold, loss) for the CSV artifact."""
        rows = [
            {"epoch": epoch, "fold": result.fold, "loss": loss}
            for result in self.folds
            for epoch, loss in enumerate(result.history.losses)
        ]
        return pd.DataFrame(rows, columns=["epoch", "fold", "loss"])


def _val_loss(params: Dict[str, np.ndarray], config: PhaseModelConfig, X: np.ndarray, y: np.ndarray) -> float:
    p = predict_proba(PhaseModel(config=config, params=params), X)
    return ops.bce_loss(p, y.astype(np.float64))


def train_fold(
    model: PhaseModel,
    X_train: np.ndarray,
    y_train: np.ndarray,
    settings: TrainSettings,
    seed: int,
    X_val: Optional[np.ndarray] = None,
    y_val: Optional[np.ndarray] = None,
) -> Tuple[PhaseModel, FoldHistory]:
    """
    Seeded minibatch Adamax on mean BCE. Early stopping watches the epoch
    training loss (or the validation loss with monitor=val_loss); the
    returned model carries the best snapshot.
    """
    if len(X_train) == 0:
        raise DataError("empty training set")
    y_train = np.asarray(y_train, dtype=np.float64)
    monitor_val = settings.monitor == "val_loss" and X_val is not None and len(X_val) > 0
    if settings.monitor == "val_loss" and not monitor_val:
        logger.warning("[TRAINER] MONITOR=val_loss without a validation set, monitoring training loss")

    rng = np.random.default_rng(seed)
    params = {name: value.copy() for name, value in model.params.items()}
    state = AdamaxState(lr=settings.lr, beta1=settings.beta1, beta2=settings.beta2, epsilon=settings.epsilon)
    stopper = EarlyStopState(patience=settings.patience, min_delta=settings.min_delta)
    history = FoldHistory()
    n = len(X_train)

    for epoch in range(settings.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, settings.batch_size):
            batch = order[start:start + settings.batch_size]
            dropout_seed = int(rng.integers(0, 2 ** 63))
            loss, grads = loss_and_grads(params, model.config, X_train[batch], y_train[batch], seed=dropout_seed)
            params, state = adamax_step(params, grads, state)
            total += loss * len(batch)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        history.losses.append(epoch_loss)
        monitored = epoch_loss
        if monitor_val:
            monitored = _val_loss(params, model.config, X_val, np.asarray(y_val))
            history.val_losses.append(monitored)
        if stopper.update(epoch, monitored, params):
            break

    history.stopped_epoch = stopper.stopped_epoch
    history.best_epoch = stopper.best_epoch
    history.best_loss = stopper.best_loss
    logger.debug(f"[TRAINER] {history.epochs_run} epoch(s), best loss {stopper.best_loss:.6f}")
    return model.with_params(stopper.restore(params)), history


def _fold_seeds(fold_seed: int) -> Tuple[int, int, int, int]:
    init_seed, sample_seed, shuffle_seed, monitor_seed = derive_seeds(fold_seed, 4)
    return init_seed, sample_seed, shuffle_seed, monitor_seed


def fold_partition(
    train_idx: np.ndarray,
    y: np.ndarray,
    settings: TrainSettings,
    seed: int,
    groups: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    (fit indices, monitor indices) inside one training split. The monitor
    subset exists only with monitor=val_loss; the held-out fold never enters.
    """
    train_idx = np.asarray(train_idx)
    if settings.monitor != "val_loss":
        return train_idx, np.array([], dtype=np.int64)
    return monitor_split(train_idx, y, settings.val_fraction, seed, groups)


def _run_fold(args) -> FoldResult:
    fold, train_idx, val_idx, X, y, groups, architecture, settings, fold_seed = args
    overlap = np.intersect1d(train_idx, val_idx)
    assert overlap.size == 0, f"fold {fold}: validation indices leaked into training"
    if groups is not None:
        shared = np.intersect1d(groups[train_idx], groups[val_idx])
        assert shared.size == 0, f"fold {fold}: device {shared[0]} in both training and validation"
    init_seed, sample_seed, shuffle_seed, monitor_seed = _fold_seeds(fold_seed)
    fit_idx, monitor_idx = fold_partition(train_idx, y, settings, monitor_seed, groups)
    balanced = undersample(fit_idx, y, sample_seed)
    model = init_model(architecture.model_copy(update={"seed": init_seed}))
    trained, history = train_fold(model, X[balanced], y[balanced], settings, shuffle_seed, X[monitor_idx], y[monitor_idx])
    metrics = evaluate(y[val_idx], predict_proba(trained, X[val_idx]), settings.threshold)
    logger.info(
        f"[TRAINER] fold {fold}: {history.epochs_run} epoch(s) on {len(balanced)} sequence(s), "
        f"accuracy {metrics['accuracy']:.3f}"
    )
    return FoldResult(
        fold=fold,
        train_size=len(balanced),
        val_size=len(val_idx),
        monitor_size=len(monitor_idx),
        metrics=metrics,
        history=history,
    )


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    architecture: PhaseModelConfig,
    settings: TrainSettings,
    k: int = 10,
    seed: int = 0,
    workers: int = 1,
    groups: Optional[Sequence[str]] = None,
) -> TrainReport:
    """
    Stratified k-fold: undersample each training split, train, evaluate on the
    untouched held-out fold. With groups (one device id per sequence) the folds
    are device-disjoint.
    """
    y = np.asarray(y, dtype=np.int64)
    group_array = None if groups is None else np.asarray(groups)
    plan = stratified_kfold(y, k, seed, group_array)
    seeds = derive_seeds(seed, k)
    jobs = []
    for fold in range(k):
        train_idx, val_idx = plan.split(fold)
        jobs.append((fold, train_idx, val_idx, X, y, group_array, architecture, settings, seeds[fold]))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_fold, jobs))
    else:
        outcomes = [_run_fold(job) for job in jobs]

    results = sorted(outcomes, key=lambda r: r.fold)
    summary = aggregate([r.metrics for r in results])
    logger.info(f"[TRAINER] {k}-fold accuracy {summary['accuracy'].formatted}, AUC {summary['auc'].formatted}")
    return TrainReport(
        k=k,
        seed=seed,
        grouped=plan.grouped,
        threshold=settings.threshold,
        architecture=architecture,
        folds=results,
        summary=summary,
    )


def train_final(
    X: np.ndarray,
    y: np.ndarray,
    architecture: PhaseModelConfig,
    settings: TrainSettings,
    seed: int = 0,
) -> Tuple[PhaseModel, FoldHistory]:
    """The deployable model: same protocol on the undersampled full labeled set."""
    y = np.asarray(y, dtype=np.int64)
    init_seed, sample_seed, shuffle_seed, _ = _fold_seeds(derive_seeds(seed, 1)[0])
    balanced = undersample(np.arange(len(y)), y, sample_seed)
    model = init_model(architecture.model_copy(update={"seed": init_seed}))
    final_settings = settings.model_copy(update={"monitor": "loss"})
    trained, history = train_fold(model, X[balanced], y[balanced], final_settings, shuffle_seed)
    logger.info(f"[TRAINER] final model: {history.epochs_run} epoch(s) on {len(balanced)} sequence(s)")
    return trained, history
