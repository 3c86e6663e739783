"""Adamax (infinity-norm Adam variant)."""
from typing import Dict, Mapping, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import NumericalError, ShapeError


class AdamaxState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    u: Dict[str, np.ndarray] = Field(default_factory=dict)


def adamax_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamaxState,
) -> Tuple[Dict[str, np.ndarray], AdamaxState]:
    """
    m <- b1*m + (1-b1)*g ; u <- max(b2*u, |g|) ;
    p <- p - lr/(1-b1^t) * m/(u+eps). Returns new params and state.
    """
    t = state.t + 1
    step_size = state.lr / (1.0 - state.beta1 ** t)
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_u: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            raise ShapeError(f"no gradient for parameter {name}")
        if grad.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter {value.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for {name}")
        m = state.beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - state.beta1) * grad
        u = np.maximum(state.beta2 * state.u.get(name, np.zeros_like(value)), np.abs(grad))
        new_params[name] = value - step_size * m / (u + state.epsilon)
        new_m[name] = m
        new_u[name] = u
    return new_params, state.model_copy(update={"t": t, "m": new_m, "u": new_u})
