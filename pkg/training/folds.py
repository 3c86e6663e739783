"""
Stratified fold plans and majority-class undersampling.

Folds come from sklearn's StratifiedKFold, or StratifiedGroupKFold when a
group per sequence (the device) is given so no device straddles a split.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np
from imblearn.under_sampling import RandomUnderSampler
from pydantic import BaseModel, ConfigDict
from sklearn.model_selection import StratifiedGroupKFold, StratifiedKFold

from errors import StratificationError


class FoldPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int
    seed: int
    grouped: bool = False
    # sequence index -> fold id
    assignments: List[int]

    def split(self, fold: int) -> Tuple[np.ndarray, np.ndarray]:
        """(train indices, validation indices) for one fold, both ascending."""
        assignments = np.asarray(self.assignments)
        return np.flatnonzero(assignments != fold), np.flatnonzero(assignments == fold)


def random_state(seed: int) -> int:
    # sklearn and imblearn accept 32-bit seeds only
    return int(seed) % (2 ** 32)


def _check_class_sizes(labels: np.ndarray, k: int, groups: Optional[np.ndarray]) -> None:
    if k < 2:
        raise StratificationError(f"need at least 2 folds, got {k}")
    for cls in np.unique(labels):
        members = labels == cls
        if groups is None:
            count = int(members.sum())
            if count < k:
                raise StratificationError(f"class {cls} has {count} sequence(s), fewer than {k} folds")
        else:
            count = len(np.unique(groups[members]))
            if count < k:
                raise StratificationError(
                    f"class {cls} spans {count} device(s), fewer than {k} folds; lower FOLDS or label more devices"
                )


def stratified_kfold(labels: Sequence[int], k: int, seed: int, groups: Optional[Sequence[str]] = None) -> FoldPlan:
    """
    Seeded stratified k-fold. Without groups each class is spread so per-fold
    counts differ by at most one. With groups every device lands in exactly
    one fold and the class balance is kept as close as whole devices allow.
    """
    labels = np.asarray(labels)
    group_array = None if groups is None else np.asarray(groups)
    if group_array is not None and len(group_array) != len(labels):
        raise StratificationError(f"{len(group_array)} group(s) for {len(labels)} label(s)")
    _check_class_sizes(labels, k, group_array)

    assignments = np.full(len(labels), -1, dtype=np.int64)
    placeholder = np.zeros((len(labels), 1))
    try:
        if group_array is None:
            splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=random_state(seed))
            splits = splitter.split(placeholder, labels)
        else:
            splitter = StratifiedGroupKFold(n_splits=k, shuffle=True, random_state=random_state(seed))
            splits = splitter.split(placeholder, labels, group_array)
        for fold, (_, val_idx) in enumerate(splits):
            assignments[val_idx] = fold
    except ValueError as e:
        raise StratificationError(f"cannot build {k} stratified folds: {e}") from e
    return FoldPlan(k=k, seed=seed, grouped=group_array is not None, assignments=assignments.tolist())


def monitor_split(
    train_indices: Sequence[int],
    labels: Sequence[int],
    fraction: float,
    seed: int,
    groups: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Carve a stratified monitoring subset out of a training split for
    early stopping. Returns (fit indices, monitor indices), both ascending
    and drawn only from train_indices. The subset is one fold of an inner
    stratified split with round(1 / fraction) folds (grouped when groups are
    given), capped by the smallest class so every class reaches the subset.
    """
    train_indices = np.asarray(train_indices)
    labels = np.asarray(labels)
    inner_labels = labels[train_indices]
    inner_groups = None if groups is None else np.asarray(groups)[train_indices]
    sizes = [
        int((inner_labels == cls).sum()) if inner_groups is None else len(np.unique(inner_groups[inner_labels == cls]))
        for cls in np.unique(inner_labels)
    ]
    k = min(max(2, int(round(1.0 / fraction))), min(sizes))
    plan = stratified_kfold(inner_labels, k, seed, inner_groups)
    fit_pos, monitor_pos = plan.split(0)
    return train_indices[fit_pos], train_indices[monitor_pos]


def undersample(train_indices: Sequence[int], labels: Sequence[int], seed: int) -> np.ndarray:
    """
    Randomly drop majority-class indices down to the minority count.
    Minority indices are always kept and the input order is preserved.
    """
    train_indices = np.asarray(train_indices)
    labels = np.asarray(labels)
    train_labels = labels[train_indices]
    classes, counts = np.unique(train_labels, return_counts=True)
    if len(classes) < 2:
        raise StratificationError("undersampling needs both classes in the training set")
    if counts[0] == counts[1]:
        return train_indices.copy()
    sampler = RandomUnderSampler(random_state=random_state(seed), replacement=False)
    sampler.fit_resample(np.arange(len(train_indices)).reshape(-1, 1), train_labels)
    return train_indices[np.sort(sampler.sample_indices_)]
