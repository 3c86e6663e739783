"""
The day-sequence classifier:

    conv1d -> BiLSTM -> attention -> dropout -> BiLSTM -> attention -> dropout
           -> mean over time -> dense(1) -> sigmoid

Parameters live in a flat name -> array dict ("conv.W", "lstm1.fwd.Wx",
"attn2.Wo", "head.b", ...). Files use a small versioned container: magic,
JSON header (config + tensor table), little-endian float64 payload.
"""
import json
import logging
import struct
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from errors import ConfigError, ModelFileError, ShapeError
from helpers import ensure_parent
from nn import ops

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"PHASEMDL"
MODEL_VERSION = 1
FORGET_BIAS = 1.0


class PhaseModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    timesteps: int = 1440
    features: int = 17
    conv_filters: int = 32
    conv_kernel: int = 3
    lstm_hidden: int = 32
    attn_heads: int = 4
    dropout_rate: float = 0.2
    seed: int = 0

    @model_validator(mode="after")
    def _valid(self):
        for name in ("timesteps", "features", "conv_filters", "conv_kernel", "lstm_hidden", "attn_heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.conv_kernel % 2 != 1:
            raise ValueError("conv_kernel must be odd")
        if (2 * self.lstm_hidden) % self.attn_heads != 0:
            raise ValueError("2 * lstm_hidden must be divisible by attn_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        return self

    @classmethod
    def from_pipeline(cls, config, timesteps: int, features: int, seed: int) -> "PhaseModelConfig":
        try:
            return cls(
                timesteps=timesteps,
                features=features,
                conv_filters=config.conv_filters,
                conv_kernel=config.conv_kernel,
                lstm_hidden=config.lstm_hidden,
                attn_heads=config.attn_heads,
                dropout_rate=config.dropout,
                seed=seed,
            )
        except ValidationError as e:
            raise ConfigError(f"invalid model configuration: {e}") from e


class PhaseModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    config: PhaseModelConfig
    params: Dict[str, np.ndarray]

    def with_params(self, params: Dict[str, np.ndarray]) -> "PhaseModel":
        return self.model_copy(update={"params": params})


def param_shapes(config: PhaseModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Names and shapes, in initialization and file order."""
    F, C, k, H = config.features, config.conv_filters, config.conv_kernel, config.lstm_hidden
    D = 2 * H
    shapes: Dict[str, Tuple[int, ...]] = {"conv.W": (k, F, C), "conv.b": (C,)}
    for layer, width in (("lstm1", C), ("lstm2", D)):
        for direction in ("fwd", "bwd"):
            prefix = f"{layer}.{direction}"
            shapes[f"{prefix}.Wx"] = (width, 4 * H)
            shapes[f"{prefix}.Wh"] = (H, 4 * H)
            shapes[f"{prefix}.b"] = (4 * H,)
        attn = "attn1" if layer == "lstm1" else "attn2"
        for name in ("Wq", "Wk", "Wv", "Wo"):
            shapes[f"{attn}.{name}"] = (D, D)
        for name in ("bq", "bv", "bo"):
            shapes[f"{attn}.{name}"] = (D,)
    shapes["head.W"] = (D, 1)
    shapes["head.b"] = (1,)
    return shapes


def _glorot(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    if len(shape) == 3:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(config: PhaseModelConfig) -> PhaseModel:
    """Glorot-uniform weights, zero biases, forget-gate bias 1.0."""
    rng = np.random.default_rng(config.seed)
    H = config.lstm_hidden
    params: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            value = np.zeros(shape)
            if name.startswith("lstm") and name.endswith(".b"):
                value[H:2 * H] = FORGET_BIAS
        else:
            value = _glorot(rng, shape)
        params[name] = value
    return PhaseModel(config=config, params=params)


def _sub(params: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    head = prefix + "."
    return {name[len(head):]: value for name, value in params.items() if name.startswith(head)}


def _as_batch(x: np.ndarray, config: PhaseModelConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    if x.ndim != 3 or x.shape[1:] != (config.timesteps, config.features):
        raise ShapeError(f"input shape {x.shape} does not match model (T={config.timesteps}, F={config.features})")
    return x


def forward_with_cache(
    params: Dict[str, np.ndarray],
    config: PhaseModelConfig,
    x: np.ndarray,
    train: bool = False,
    seed: Optional[int] = None,
) -> Tuple[np.ndarray, list]:
    """Probabilities (B,) and the per-layer caches for backward."""
    x = _as_batch(x, config)
    rate = config.dropout_rate
    dropout_seed = 0 if seed is None else seed
    h, conv = ops.conv1d_forward(x, _sub(params, "conv"))
    h, lstm1 = ops.bilstm_forward(h, _sub(params, "lstm1"))
    h, attn1 = ops.mha_forward(h, _sub(params, "attn1"), config.attn_heads)
    h, drop1 = ops.dropout_forward(h, rate, train, (dropout_seed, 1))
    h, lstm2 = ops.bilstm_forward(h, _sub(params, "lstm2"))
    h, attn2 = ops.mha_forward(h, _sub(params, "attn2"), config.attn_heads)
    h, drop2 = ops.dropout_forward(h, rate, train, (dropout_seed, 2))
    h, steps = ops.mean_pool_forward(h)
    z, head = ops.dense_forward(h, _sub(params, "head"))
    p, _ = ops.sigmoid_forward(z)
    caches = [conv, lstm1, attn1, drop1, lstm2, attn2, drop2, steps, head, p]
    return p[:, 0], caches


def backward(dp: np.ndarray, caches: list) -> Dict[str, np.ndarray]:
    conv, lstm1, attn1, drop1, lstm2, attn2, drop2, steps, head, p = caches
    grads: Dict[str, np.ndarray] = {}

    def collect(prefix: str, layer: Dict[str, np.ndarray]) -> np.ndarray:
        for name, value in layer.items():
            if name != "x":
                grads[f"{prefix}.{name}"] = value
        return layer["x"]

    dz = ops.sigmoid_backward(dp[:, None], p)
    dh = collect("head", ops.dense_backward(dz, head))
    dh = ops.mean_pool_backward(dh, steps)
    dh = ops.dropout_backward(dh, drop2)
    dh = collect("attn2", ops.mha_backward(dh, attn2))
    dh = collect("lstm2", ops.bilstm_backward(dh, lstm2))
    dh = ops.dropout_backward(dh, drop1)
    dh = collect("attn1", ops.mha_backward(dh, attn1))
    dh = collect("lstm1", ops.bilstm_backward(dh, lstm1))
    collect("conv", ops.conv1d_backward(dh, conv))
    return grads


def forward(model: PhaseModel, x: np.ndarray, train: bool = False, seed: Optional[int] = None) -> np.ndarray:
    p, _ = forward_with_cache(model.params, model.config, x, train, seed)
    return p


def loss_and_grads(
    params: Dict[str, np.ndarray],
    config: PhaseModelConfig,
    x: np.ndarray,
    y: np.ndarray,
    seed: Optional[int] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean BCE of a training minibatch and its parameter gradients."""
    p, caches = forward_with_cache(params, config, x, train=True, seed=seed)
    y = np.asarray(y, dtype=np.float64)
    loss = ops.bce_loss(p, y)
    return loss, backward(ops.bce_backward(p, y), caches)


def predict_proba(model: PhaseModel, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Inference-mode probabilities for an (N, T, F) stack."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros(0)
    chunks = [forward(model, X[start:start + batch_size]) for start in range(0, X.shape[0], batch_size)]
    return np.concatenate(chunks)


# ----------------------
# Model file
# ----------------------
def save_model(model: PhaseModel, path: str, provenance: Optional[Dict[str, object]] = None) -> str:
    tensors: List[Dict[str, object]] = []
    payload = []
    offset = 0
    for name in param_shapes(model.config):
        value = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw = value.tobytes()
        tensors.append({"name": name, "shape": list(value.shape), "offset": offset, "length": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {
        "version": MODEL_VERSION,
        "config": model.config.model_dump(),
        "tensors": tensors,
        "provenance": provenance or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ensure_parent(path)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for raw in payload:
            fh.write(raw)
    logger.info(f"[MODEL] saved {len(tensors)} tensors to {path}")
    return path


def read_model_header(path: str) -> Tuple[dict, bytes]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise ModelFileError(f"Cannot read model file {path}: {e}") from e
    if blob[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFileError(f"{path} is not a model file")
    start = len(MODEL_MAGIC) + 4
    if len(blob) < start:
        raise ModelFileError(f"{path} is truncated")
    (header_length,) = struct.unpack("<I", blob[len(MODEL_MAGIC):start])
    try:
        header = json.loads(blob[start:start + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{path} has a corrupted header: {e}") from e
    return header, blob[start + header_length:]


def load_model(path: str) -> PhaseModel:
    header, payload = read_model_header(path)
    if header.get("version") != MODEL_VERSION:
        raise ModelFileError(f"{path} has model version {header.get('version')!r}; this build reads {MODEL_VERSION}")
    try:
        config = PhaseModelConfig(**header["config"])
    except (KeyError, TypeError, ValidationError) as e:
        raise ModelFileError(f"{path} has an invalid model config: {e}") from e

    expected = param_shapes(config)
    table = {entry.get("name"): entry for entry in header.get("tensors", [])}
    if set(table) != set(expected):
        raise ModelFileError(f"{path} tensor set does not match its config")
    params: Dict[str, np.ndarray] = {}
    for name, shape in expected.items():
        entry = table[name]
        if tuple(entry.get("shape", ())) != shape:
            raise ModelFileError(f"{path}: tensor {name} has shape {entry.get('shape')}, config implies {list(shape)}")
        offset, length = int(entry["offset"]), int(entry["length"])
        if length != int(np.prod(shape)) * 8 or offset < 0 or offset + length > len(payload):
            raise ModelFileError(f"{path}: tensor {name} payload is out of bounds")
        params[name] = np.frombuffer(payload, dtype="<f8", count=length // 8, offset=offset).reshape(shape).astype(np.float64)
    return PhaseModel(config=config, params=params)


def model_provenance(path: str) -> dict:
    header, _ = read_model_header(path)
    return header.get("provenance", {})
