"""Early stopping with best-weight restoration."""
import logging
import math
from typing import Dict, Optional

import numpy as np

from errors import NumericalError

logger = logging.getLogger(__name__)


class EarlyStopState:
    """
    Patience counter plus the best parameter snapshot.

    The counter resets when a loss beats the reference (the loss at the last
    qualifying improvement) by at least min_delta. The snapshot follows the
    lowest loss ever seen, so a restored model never has a higher recorded loss
    than any epoch.
    """

    def __init__(self, patience: int = 20, min_delta: float = 0.001):
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = math.inf
        self.best_epoch: Optional[int] = None
        self.best_parameters: Optional[Dict[str, np.ndarray]] = None
        self.reference_loss = math.inf
        self.epochs_since_improvement = 0
        self.stopped_epoch: Optional[int] = None

    def update(self, epoch: int, loss: float, parameters: Dict[str, np.ndarray]) -> bool:
        """Record one epoch. Returns True when training should stop."""
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss} at epoch {epoch}")
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_parameters = {name: value.copy() for name, value in parameters.items()}
        if self.reference_loss - loss >= self.min_delta:
            self.reference_loss = loss
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        if self.epochs_since_improvement >= self.patience:
            self.stopped_epoch = epoch
            logger.info(
                f"[TRAINER] early stop at epoch {epoch}: no {self.min_delta} improvement "
                f"in {self.patience} epochs (best {self.best_loss:.6f} at epoch {self.best_epoch})"
            )
            return True
        return False

    def restore(self, fallback: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return fallback if self.best_parameters is None else self.best_parameters
