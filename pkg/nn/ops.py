"""
Differentiable operators for the day-sequence network.

Every op works on batched float64 arrays shaped (B, T, C) and comes as a pair:
    out, cache = <op>_forward(x, params, ...)
    grads      = <op>_backward(dout, cache)
grads is keyed like params, plus "x" for the input gradient. Ops never
modify their arguments.
"""
import math
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from errors import NumericalError, ShapeError

Params = Mapping[str, np.ndarray]
Grads = Dict[str, np.ndarray]

BCE_CLAMP = 1e-7


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ShapeError(message)


def _finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite values in {name}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=axis, keepdims=True)


# ----------------------
# Dense / activations / loss
# ----------------------
def dense_forward(x: np.ndarray, params: Params) -> Tuple[np.ndarray, tuple]:
    W, b = params["W"], params["b"]
    _require(W.ndim == 2 and x.shape[-1] == W.shape[0], f"dense: input width {x.shape[-1]} vs weights {W.shape}")
    _require(b.shape == (W.shape[1],), f"dense: bias shape {b.shape} vs weights {W.shape}")
    return x @ W + b, (x, W)


def dense_backward(dout: np.ndarray, cache: tuple) -> Grads:
    x, W = cache
    flat_x = x.reshape(-1, W.shape[0])
    flat_d = dout.reshape(-1, W.shape[1])
    return {"x": dout @ W.T, "W": flat_x.T @ flat_d, "b": flat_d.sum(axis=0)}


def sigmoid_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    out = sigmoid(x)
    return out, out


def sigmoid_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return dout * out * (1.0 - out)


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]."""
    _require(p.shape == y.shape, f"bce: prediction shape {p.shape} vs labels {y.shape}")
    clamped = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.mean(y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped))
    _finite("loss", loss)
    return float(loss)


def bce_backward(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    clamped = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    grad = (clamped - y) / (clamped * (1.0 - clamped)) / p.size
    # the clamp is flat outside its range
    inside = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    return np.where(inside, grad, 0.0)


# ----------------------
# Convolution
# ----------------------
def conv1d_forward(x: np.ndarray, params: Params) -> Tuple[np.ndarray, tuple]:
    """Cross-correlation over time with "same" zero padding. W is (k, C_in, C_out)."""
    W, b = params["W"], params["b"]
    _require(x.ndim == 3, f"conv1d: expected (B, T, C) input, got {x.shape}")
    _require(W.ndim == 3 and W.shape[0] % 2 == 1, f"conv1d: kernel {W.shape} must be (odd k, C_in, C_out)")
    _require(W.shape[1] == x.shape[2], f"conv1d: input channels {x.shape[2]} vs kernel {W.shape}")
    _require(b.shape == (W.shape[2],), f"conv1d: bias shape {b.shape}")
    k = W.shape[0]
    pad = k // 2
    steps = x.shape[1]
    padded = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    out = np.broadcast_to(b, (x.shape[0], steps, W.shape[2])).copy()
    for j in range(k):
        out += padded[:, j:j + steps, :] @ W[j]
    return out, (padded, W, steps)


def conv1d_backward(dout: np.ndarray, cache: tuple) -> Grads:
    padded, W, steps = cache
    k = W.shape[0]
    pad = k // 2
    dpadded = np.zeros_like(padded)
    dW = np.zeros_like(W)
    for j in range(k):
        window = padded[:, j:j + steps, :]
        dW[j] = np.einsum("btc,btd->cd", window, dout)
        dpadded[:, j:j + steps, :] += dout @ W[j].T
    return {"x": dpadded[:, pad:pad + steps, :], "W": dW, "b": dout.sum(axis=(0, 1))}


# ----------------------
# LSTM
# ----------------------
# Gate layout in the 4H axis: input, forget, output, candidate.
def lstm_forward(x: np.ndarray, params: Params) -> Tuple[np.ndarray, tuple]:
    """Single-direction LSTM from a zero state. Wx (D, 4H), Wh (H, 4H), b (4H). Returns (B, T, H)."""
    Wx, Wh, b = params["Wx"], params["Wh"], params["b"]
    _require(x.ndim == 3, f"lstm: expected (B, T, D) input, got {x.shape}")
    H = Wh.shape[0]
    _require(Wh.shape == (H, 4 * H), f"lstm: recurrent weights {Wh.shape}")
    _require(Wx.shape == (x.shape[2], 4 * H), f"lstm: input weights {Wx.shape} vs input width {x.shape[2]}")
    _require(b.shape == (4 * H,), f"lstm: bias shape {b.shape}")

    batch, steps, _ = x.shape
    projected = x @ Wx + b
    hs = np.zeros((batch, steps + 1, H))
    cs = np.zeros((batch, steps + 1, H))
    gates = np.zeros((batch, steps, 4 * H))
    for t in range(steps):
        z = projected[:, t, :] + hs[:, t, :] @ Wh
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        o = sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        cs[:, t + 1, :] = f * cs[:, t, :] + i * g
        hs[:, t + 1, :] = o * np.tanh(cs[:, t + 1, :])
        gates[:, t, :] = np.concatenate([i, f, o, g], axis=1)
    out = hs[:, 1:, :]
    _finite("lstm output", out)
    return out.copy(), (x, Wx, Wh, hs, cs, gates)


def lstm_backward(dout: np.ndarray, cache: tuple) -> Grads:
    x, Wx, Wh, hs, cs, gates = cache
    batch, steps, _ = x.shape
    H = Wh.shape[0]
    dz_all = np.zeros((batch, steps, 4 * H))
    dh_next = np.zeros((batch, H))
    dc_next = np.zeros((batch, H))
    for t in reversed(range(steps)):
        i, f, o, g = (gates[:, t, n * H:(n + 1) * H] for n in range(4))
        tanh_c = np.tanh(cs[:, t + 1, :])
        dh = dout[:, t, :] + dh_next
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        dz_all[:, t, :] = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * cs[:, t, :] * f * (1.0 - f),
            dh * tanh_c * o * (1.0 - o),
            dc * i * (1.0 - g ** 2),
        ], axis=1)
        dh_next = dz_all[:, t, :] @ Wh.T
        dc_next = dc * f
    flat_dz = dz_all.reshape(-1, 4 * H)
    return {
        "x": dz_all @ Wx.T,
        "Wx": x.reshape(-1, x.shape[2]).T @ flat_dz,
        "Wh": hs[:, :-1, :].reshape(-1, H).T @ flat_dz,
        "b": flat_dz.sum(axis=0),
    }


def _direction(params: Params, prefix: str) -> Dict[str, np.ndarray]:
    return {name: params[f"{prefix}.{name}"] for name in ("Wx", "Wh", "b")}


def bilstm_forward(x: np.ndarray, params: Params) -> Tuple[np.ndarray, tuple]:
    """output[t] = concat(h_fwd[t], h_bwd[t]); params keyed fwd.* and bwd.*."""
    forward, fwd_cache = lstm_forward(x, _direction(params, "fwd"))
    reverse, bwd_cache = lstm_forward(x[:, ::-1, :], _direction(params, "bwd"))
    out = np.concatenate([forward, reverse[:, ::-1, :]], axis=2)
    return out, (fwd_cache, bwd_cache, forward.shape[2])


def bilstm_backward(dout: np.ndarray, cache: tuple) -> Grads:
    fwd_cache, bwd_cache, H = cache
    fwd = lstm_backward(dout[:, :, :H], fwd_cache)
    bwd = lstm_backward(dout[:, ::-1, H:], bwd_cache)
    grads = {"x": fwd["x"] + bwd["x"][:, ::-1, :]}
    for name in ("Wx", "Wh", "b"):
        grads[f"fwd.{name}"] = fwd[name]
        grads[f"bwd.{name}"] = bwd[name]
    return grads


# ----------------------
# Multi-head self-attention
# ----------------------
def _split_heads(a: np.ndarray, heads: int) -> np.ndarray:
    batch, steps, width = a.shape
    return a.reshape(batch, steps, heads, width // heads).transpose(0, 2, 1, 3)


def _merge_heads(a: np.ndarray) -> np.ndarray:
    batch, heads, steps, depth = a.shape
    return a.transpose(0, 2, 1, 3).reshape(batch, steps, heads * depth)


def mha_forward(x: np.ndarray, params: Params, heads: int) -> Tuple[np.ndarray, tuple]:
    """
    Scaled dot-product self-attention over time, heads concatenated then
    projected by Wo. Keys carry no bias: a key bias shifts every score in a
    row equally and is removed by the softmax.
    """
    _require(x.ndim == 3, f"attention: expected (B, T, D) input, got {x.shape}")
    width = x.shape[2]
    _require(heads > 0 and width % heads == 0, f"attention: width {width} not divisible by {heads} heads")
    for name in ("Wq", "Wk", "Wv", "Wo"):
        _require(params[name].shape == (width, width), f"attention: {name} shape {params[name].shape}")
    depth = width // heads

    q = _split_heads(x @ params["Wq"] + params["bq"], heads)
    k = _split_heads(x @ params["Wk"], heads)
    v = _split_heads(x @ params["Wv"] + params["bv"], heads)
    weights = softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(depth))
    context = _merge_heads(weights @ v)
    out = context @ params["Wo"] + params["bo"]
    return out, (x, params, heads, q, k, v, weights, context)


def mha_backward(dout: np.ndarray, cache: tuple) -> Grads:
    x, params, heads, q, k, v, weights, context = cache
    width = x.shape[2]
    depth = width // heads
    flat_x = x.reshape(-1, width)

    grads: Grads = {
        "Wo": context.reshape(-1, width).T @ dout.reshape(-1, width),
        "bo": dout.sum(axis=(0, 1)),
    }
    dcontext = _split_heads(dout @ params["Wo"].T, heads)
    dweights = dcontext @ v.transpose(0, 1, 3, 2)
    dv = weights.transpose(0, 1, 3, 2) @ dcontext
    dscores = weights * (dweights - np.sum(dweights * weights, axis=-1, keepdims=True))
    dscores /= math.sqrt(depth)
    dq = _merge_heads(dscores @ k)
    dk = _merge_heads(dscores.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)

    grads["Wq"] = flat_x.T @ dq.reshape(-1, width)
    grads["bq"] = dq.sum(axis=(0, 1))
    grads["Wk"] = flat_x.T @ dk.reshape(-1, width)
    grads["Wv"] = flat_x.T @ dv.reshape(-1, width)
    grads["bv"] = dv.sum(axis=(0, 1))
    grads["x"] = dq @ params["Wq"].T + dk @ params["Wk"].T + dv @ params["Wv"].T
    return grads


# ----------------------
# Dropout / pooling
# ----------------------
def dropout_forward(x: np.ndarray, rate: float, train: bool, seed: Optional[Union[int, Sequence[int]]] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Inverted dropout. Inference (or rate 0) is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate {rate} outside [0, 1)")
    if not train or rate == 0.0:
        return x.copy(), None
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return dout.copy() if mask is None else dout * mask


def mean_pool_forward(x: np.ndarray) -> Tuple[np.ndarray, int]:
    return x.mean(axis=1), x.shape[1]


def mean_pool_backward(dout: np.ndarray, steps: int) -> np.ndarray:
    return np.repeat(dout[:, None, :] / steps, steps, axis=1)
