"""Central finite-difference check of analytic gradients."""
import logging
from typing import Any, Callable, Dict, Mapping, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Forward = Callable[[Dict[str, np.ndarray]], Tuple[np.ndarray, Any]]
Backward = Callable[[np.ndarray, Any], Mapping[str, np.ndarray]]

# rounding error of one objective evaluation, in ulps of its magnitude
ROUNDING_ULPS = 10.0


def resolution_floor(objective_value: float, step: float, tolerance: float) -> float:
    """
    Smallest gradient magnitude a central difference can verify at the given
    relative tolerance. Rounding in the objective leaves an absolute error of
    about ulps * eps * |f| / step on every numeric derivative; entries below
    that error / tolerance are compared on this absolute scale instead.
    """
    noise = ROUNDING_ULPS * np.finfo(np.float64).eps * max(1.0, abs(objective_value)) / step
    return max(1e-8, noise / tolerance)


def grad_check(
    forward: Forward,
    backward: Backward,
    inputs: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    seed: int = 0,
    step: float = 1e-5,
) -> float:
    """
    Max over every entry of every input of |a - n| / max(|a|, |n|, floor),
    with floor from resolution_floor.

    The op output is reduced to a scalar with a fixed random projection R,
    so backward is called with dout = R.
    """
    base = {name: np.array(value, dtype=np.float64) for name, value in inputs.items()}
    out, cache = forward(base)
    projection = np.random.default_rng(seed).standard_normal(np.shape(out))
    analytic = backward(projection, cache)

    def objective(values: Dict[str, np.ndarray]) -> float:
        result, _ = forward(values)
        return float(np.sum(projection * result))

    floor = resolution_floor(float(np.sum(projection * out)), step, tolerance)
    worst = 0.0
    worst_name = None
    for name, value in base.items():
        grad = np.asarray(analytic[name])
        for idx in np.ndindex(value.shape):
            bumped = dict(base)
            plus = value.copy()
            plus[idx] += step
            bumped[name] = plus
            up = objective(bumped)
            minus = value.copy()
            minus[idx] -= step
            bumped[name] = minus
            down = objective(bumped)
            numeric = (up - down) / (2.0 * step)
            a = float(grad[idx])
            error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if error > worst:
                worst, worst_name = error, name
    if worst > tolerance:
        logger.warning(f"[GRADCHECK] max relative error {worst:.3e} on {worst_name} exceeds {tolerance:.0e}")
    return worst
