"""
Shapley attributions over (timestep, feature) cells.

Players are disjoint groups of cells. A coalition keeps its players' cells at
the instance values and replaces the other players' cells with the background;
cells that belong to no player always stay at the instance values. That is
how a per-timestep explanation holds the rest of the day fixed.

Two estimators:
    shapley_exact  all 2^P coalitions, P <= 12
    kernel_shap    Shapley-kernel weighted least squares on enumerated or
                   sampled coalitions, with the efficiency constraint
                   eliminated analytically
"""
import hashlib
import itertools
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.special import binom

from errors import ConfigError, DataError, ShapeError
from features.binning import FEATURES
from features.codec import FeatureCodec, missing_row
from phase.model import PhaseModel, predict_proba

logger = logging.getLogger(__name__)

MAX_EXACT_PLAYERS = 12
RIDGE = 1e-9
EVAL_CHUNK = 256

Predictor = Callable[[np.ndarray], np.ndarray]


class PlayerGrouping(BaseModel):
    """owner[t, f] = player index, or -1 for cells held at the instance."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    names: List[str]
    owner: np.ndarray

    @model_validator(mode="after")
    def _valid(self):
        if self.owner.ndim != 2:
            raise ValueError("owner must be a T x F index grid")
        if not self.names:
            raise ValueError("a grouping needs at least one player")
        used = set(np.unique(self.owner).tolist()) - {-1}
        if used != set(range(len(self.names))):
            raise ValueError("every player must own at least one cell and indices must be 0..P-1")
        return self

    @property
    def players(self) -> int:
        return len(self.names)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.owner.shape

    def cells(self, player: int) -> np.ndarray:
        return self.owner == player

    def covers_all(self) -> bool:
        return bool(np.all(self.owner >= 0))

    @classmethod
    def from_masks(cls, names: Sequence[str], masks: Sequence[np.ndarray]) -> "PlayerGrouping":
        """Build from boolean T x F masks; overlapping masks are rejected."""
        if len(names) != len(masks) or not masks:
            raise ShapeError("one mask per player name is required")
        owner = np.full(masks[0].shape, -1, dtype=np.int64)
        for idx, mask in enumerate(masks):
            if mask.shape != owner.shape:
                raise ShapeError("player masks disagree on shape")
            if np.any(owner[mask] >= 0):
                raise ShapeError(f"player {names[idx]!r} overlaps an earlier player")
            owner[mask] = idx
        return cls(names=list(names), owner=owner)


def by_feature(timesteps: int, features: Sequence[str] = FEATURES) -> PlayerGrouping:
    """One player per feature across the whole day."""
    owner = np.tile(np.arange(len(features)), (timesteps, 1))
    return PlayerGrouping(names=list(features), owner=owner)


def by_timestep(timesteps: int, n_features: int = len(FEATURES)) -> PlayerGrouping:
    """One player per timestep (all features)."""
    owner = np.repeat(np.arange(timesteps)[:, None], n_features, axis=1)
    return PlayerGrouping(names=[f"t{t}" for t in range(timesteps)], owner=owner)


def time_blocks(timesteps: int, blocks: int, n_features: int = len(FEATURES)) -> PlayerGrouping:
    """Contiguous blocks of the day; small enough for exact enumeration."""
    if not 1 <= blocks <= timesteps:
        raise ShapeError(f"cannot split {timesteps} timesteps into {blocks} blocks")
    edges = np.linspace(0, timesteps, blocks + 1).astype(np.int64)
    owner = np.zeros((timesteps, n_features), dtype=np.int64)
    for block in range(blocks):
        owner[edges[block]:edges[block + 1], :] = block
    return PlayerGrouping(names=[f"block{b}" for b in range(blocks)], owner=owner)


def features_at_timestep(t: int, timesteps: int, features: Sequence[str] = FEATURES) -> PlayerGrouping:
    """The features at timestep t are the players; every other timestep is held fixed."""
    if not 0 <= t < timesteps:
        raise DataError(f"timestep {t} outside 0..{timesteps - 1}")
    owner = np.full((timesteps, len(features)), -1, dtype=np.int64)
    owner[t, :] = np.arange(len(features))
    return PlayerGrouping(names=list(features), owner=owner)


class AttributionMap(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    base_value: float
    prediction: float
    # per cell, T x F; a player's value is spread uniformly over its cells
    values: np.ndarray
    player_names: List[str]
    player_values: np.ndarray
    method: str
    n_samples: Optional[int] = None
    # what was explained against what, for tracing exported artifacts
    instance_id: str = ""
    background_id: str = ""

    def efficiency_gap(self) -> float:
        return abs(self.base_value + float(self.player_values.sum()) - self.prediction)


# ----------------------
# Backgrounds and predictors
# ----------------------
def array_digest(values: np.ndarray) -> str:
    """Short content digest of an input, the default identifier for instances and backgrounds."""
    data = np.ascontiguousarray(values, dtype=np.float64).tobytes()
    return "sha256:" + hashlib.sha256(data).hexdigest()[:16]


def missing_background(codec: FeatureCodec) -> np.ndarray:
    """'No activity': every cell is the scaled missing sentinel."""
    return np.tile(missing_row(codec), (codec.timesteps, 1))


def mean_background(X: np.ndarray) -> np.ndarray:
    if len(X) == 0:
        raise DataError("mean background needs at least one sequence")
    return np.asarray(X, dtype=np.float64).mean(axis=0)


def model_predictor(model: PhaseModel, batch_size: int = 64) -> Predictor:
    return lambda X: predict_proba(model, X, batch_size)


def masked_inputs(instance: np.ndarray, background: np.ndarray, grouping: PlayerGrouping, coalitions: np.ndarray) -> np.ndarray:
    """(N, T, F) inputs for N coalitions given as an (N, P) 0/1 matrix."""
    scoped = grouping.owner >= 0
    keep = np.ones((coalitions.shape[0],) + grouping.shape, dtype=bool)
    keep[:, scoped] = coalitions[:, grouping.owner[scoped]].astype(bool)
    return np.where(keep, instance[None, :, :], background[None, :, :])


def _evaluate(predict: Predictor, instance, background, grouping, coalitions: np.ndarray) -> np.ndarray:
    out = []
    for start in range(0, len(coalitions), EVAL_CHUNK):
        batch = masked_inputs(instance, background, grouping, coalitions[start:start + EVAL_CHUNK])
        out.append(np.asarray(predict(batch), dtype=np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def _check_inputs(instance: np.ndarray, background: np.ndarray, grouping: PlayerGrouping) -> None:
    if instance.shape != grouping.shape or background.shape != grouping.shape:
        raise ShapeError(f"instance {instance.shape} / background {background.shape} vs grouping {grouping.shape}")


def _spread(grouping: PlayerGrouping, phi: np.ndarray) -> np.ndarray:
    values = np.zeros(grouping.shape)
    for player in range(grouping.players):
        cells = grouping.cells(player)
        values[cells] = phi[player] / cells.sum()
    return values


# ----------------------
# Exact enumeration
# ----------------------
def shapley_weights(players: int) -> np.ndarray:
    """|S|!(P-|S|-1)!/P! for |S| = 0..P-1, i.e. 1 / (P * C(P-1, |S|))."""
    sizes = np.arange(players)
    return 1.0 / (players * binom(players - 1, sizes))


def shapley_exact(
    predict: Predictor,
    instance: np.ndarray,
    background: np.ndarray,
    grouping: PlayerGrouping,
    instance_id: Optional[str] = None,
    background_id: Optional[str] = None,
) -> AttributionMap:
    _check_inputs(instance, background, grouping)
    P = grouping.players
    if P > MAX_EXACT_PLAYERS:
        raise ConfigError(f"{P} players is too many for exact enumeration (max {MAX_EXACT_PLAYERS}); use the kernel estimator")
    index = np.arange(2 ** P)
    coalitions = ((index[:, None] >> np.arange(P)) & 1).astype(np.float64)
    v = _evaluate(predict, instance, background, grouping, coalitions)
    sizes = coalitions.sum(axis=1).astype(np.int64)
    weights = shapley_weights(P)

    phi = np.zeros(P)
    for player in range(P):
        without = index[(index >> player) & 1 == 0]
        with_player = without | (1 << player)
        phi[player] = np.sum(weights[sizes[without]] * (v[with_player] - v[without]))

    return AttributionMap(
        base_value=float(v[0]),
        prediction=float(v[-1]),
        values=_spread(grouping, phi),
        player_names=grouping.names,
        player_values=phi,
        method="exact",
        instance_id=instance_id or array_digest(instance),
        background_id=background_id or array_digest(background),
    )


# ----------------------
# Kernel estimator
# ----------------------
def kernel_coalitions(players: int, n_samples: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Coalition masks and their kernel weights. Subset sizes are enumerated
    completely (smallest and largest first) while the budget covers them;
    the rest are sampled in complementary pairs.
    """
    P = players
    budget = min(n_samples, 2 ** P - 2) if P <= 30 else n_samples
    num_sizes = int(math.ceil((P - 1) / 2.0))
    num_paired = int(math.floor((P - 1) / 2.0))
    weight_vector = np.array([(P - 1.0) / (s * (P - s)) for s in range(1, num_sizes + 1)])
    weight_vector[:num_paired] *= 2
    weight_vector /= weight_vector.sum()

    masks: List[np.ndarray] = []
    weights: List[float] = []
    num_full = 0
    left = budget
    remaining = weight_vector.copy()
    for size in range(1, num_sizes + 1):
        paired = size <= num_paired
        count = binom(P, size) * (2 if paired else 1)
        if left * remaining[size - 1] / count < 1.0 - 1e-8:
            break
        num_full += 1
        left -= int(count)
        if remaining[size - 1] < 1.0:
            remaining /= 1.0 - remaining[size - 1]
        w = weight_vector[size - 1] / binom(P, size)
        if paired:
            w /= 2.0
        for members in itertools.combinations(range(P), size):
            mask = np.zeros(P)
            mask[list(members)] = 1.0
            masks.append(mask)
            weights.append(w)
            if paired:
                masks.append(1.0 - mask)
                weights.append(w)

    fixed = len(masks)
    samples_left = budget - fixed
    if num_full != num_sizes and samples_left > 0:
        size_probs = weight_vector.copy()
        size_probs[:num_paired] /= 2
        size_probs = size_probs[num_full:]
        size_probs /= size_probs.sum()
        draws = rng.choice(len(size_probs), 4 * samples_left, p=size_probs)
        seen: Dict[bytes, Tuple[int, Optional[int]]] = {}
        for draw in draws:
            if samples_left <= 0:
                break
            size = int(draw) + num_full + 1
            mask = np.zeros(P)
            mask[rng.permutation(P)[:size]] = 1.0
            key = mask.tobytes()
            if key in seen:
                first, complement = seen[key]
                weights[first] += 1.0
                if complement is not None:
                    weights[complement] += 1.0
                continue
            first = len(masks)
            masks.append(mask)
            weights.append(1.0)
            samples_left -= 1
            complement = None
            if samples_left > 0 and size <= num_paired:
                complement = len(masks)
                masks.append(1.0 - mask)
                weights.append(1.0)
                samples_left -= 1
            seen[key] = (first, complement)
        sampled = np.asarray(weights[fixed:])
        weights[fixed:] = list(sampled * weight_vector[num_full:].sum() / sampled.sum())

    return np.array(masks).reshape(-1, P), np.array(weights)


def _solve_constrained(masks: np.ndarray, weights: np.ndarray, v: np.ndarray, base: float, fx: float) -> np.ndarray:
    """Weighted least squares with sum(phi) = fx - base, last player eliminated."""
    total = fx - base
    last = masks[:, -1]
    y = (v - base) - last * total
    X = masks[:, :-1] - last[:, None]
    WX = weights[:, None] * X
    A = X.T @ WX
    b = WX.T @ y
    cond = np.linalg.cond(A) if A.size else 1.0
    if not np.isfinite(cond) or cond > 1e12:
        logger.warning(f"[SHAP] singular regression system (cond={cond:.3g}), adding ridge {RIDGE}")
        A = A + RIDGE * np.eye(A.shape[0])
    w = np.linalg.solve(A, b)
    return np.append(w, total - w.sum())


def kernel_shap(
    predict: Predictor,
    instance: np.ndarray,
    background: np.ndarray,
    grouping: PlayerGrouping,
    n_samples: int,
    seed: int = 0,
    instance_id: Optional[str] = None,
    background_id: Optional[str] = None,
) -> AttributionMap:
    _check_inputs(instance, background, grouping)
    P = grouping.players
    if n_samples < 2 * P + 2:
        raise ConfigError(f"kernel estimator needs at least {2 * P + 2} samples for {P} players, got {n_samples}")
    ends = _evaluate(predict, instance, background, grouping, np.array([np.zeros(P), np.ones(P)]))
    base, fx = float(ends[0]), float(ends[1])
    if P == 1:
        phi = np.array([fx - base])
        used = 0
    else:
        masks, weights = kernel_coalitions(P, n_samples, np.random.default_rng(seed))
        v = _evaluate(predict, instance, background, grouping, masks)
        phi = _solve_constrained(masks, weights, v, base, fx)
        used = len(masks)
    logger.debug(f"[SHAP] kernel estimate over {P} players from {used} coalitions")
    return AttributionMap(
        base_value=base,
        prediction=fx,
        values=_spread(grouping, phi),
        player_names=grouping.names,
        player_values=phi,
        method="kernel",
        n_samples=used,
        instance_id=instance_id or array_digest(instance),
        background_id=background_id or array_digest(background),
    )


def explain(
    predict: Predictor,
    instance: np.ndarray,
    background: np.ndarray,
    grouping: PlayerGrouping,
    method: str = "auto",
    n_samples: int = 256,
    seed: int = 0,
    instance_id: Optional[str] = None,
    background_id: Optional[str] = None,
) -> AttributionMap:
    """auto -> exact up to 12 players, kernel beyond."""
    if method == "exact" or (method == "auto" and grouping.players <= MAX_EXACT_PLAYERS):
        return shapley_exact(predict, instance, background, grouping, instance_id, background_id)
    return kernel_shap(predict, instance, background, grouping, n_samples, seed, instance_id, background_id)


class DayAttribution(BaseModel):
    """Per-timestep explanations stacked into one T x F map."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    base_values: np.ndarray
    prediction: float
    method: str
    instance_id: str = ""
    background_id: str = ""


def explain_day(
    predict: Predictor,
    instance: np.ndarray,
    background: np.ndarray,
    method: str = "auto",
    n_samples: int = 256,
    seed: int = 0,
    timesteps: Optional[Sequence[int]] = None,
    instance_id: Optional[str] = None,
    background_id: Optional[str] = None,
) -> DayAttribution:
    """
    Explain each timestep with its features as players. Timesteps not listed
    keep zero attribution.
    """
    T, F = instance.shape
    steps = range(T) if timesteps is None else timesteps
    values = np.zeros((T, F))
    base_values = np.full(T, np.nan)
    prediction = float(predict(instance[None, :, :])[0])
    used = method
    instance_id = instance_id or array_digest(instance)
    background_id = background_id or array_digest(background)
    names = FEATURES if F == len(FEATURES) else [f"f{i}" for i in range(F)]
    for t in steps:
        grouping = features_at_timestep(t, T, names)
        result = explain(predict, instance, background, grouping, method, n_samples, seed + t, instance_id, background_id)
        values[t, :] = result.values[t, :]
        base_values[t] = result.base_value
        used = result.method
    return DayAttribution(
        values=values,
        base_values=base_values,
        prediction=prediction,
        method=used,
        instance_id=instance_id,
        background_id=background_id,
    )
