import json
import struct
from types import SimpleNamespace

import numpy as np
import pytest

from errors import ConfigError, ModelFileError, ShapeError
from nn.gradcheck import grad_check
from phase.model import (
    MODEL_MAGIC,
    PhaseModelConfig,
    backward,
    forward,
    forward_with_cache,
    init_model,
    load_model,
    loss_and_grads,
    model_provenance,
    param_shapes,
    predict_proba,
    save_model,
)


def test_param_shapes(tiny_model_config):
    shapes = param_shapes(tiny_model_config)
    assert shapes["conv.W"] == (3, 4, 4)
    assert shapes["lstm1.fwd.Wx"] == (4, 16)
    assert shapes["lstm2.bwd.Wx"] == (8, 16)
    assert shapes["attn1.Wq"] == (8, 8)
    assert "attn1.bk" not in shapes
    assert shapes["head.W"] == (8, 1)


def test_init_is_seeded_with_forget_bias(tiny_model_config):
    a = init_model(tiny_model_config)
    b = init_model(tiny_model_config)
    assert all(np.array_equal(a.params[n], b.params[n]) for n in a.params)
    H = tiny_model_config.lstm_hidden
    bias = a.params["lstm1.fwd.b"]
    assert np.all(bias[H:2 * H] == 1.0)
    assert np.all(bias[:H] == 0.0)
    limit = np.sqrt(6.0 / (8 + 8))
    assert np.abs(a.params["attn2.Wo"]).max() <= limit


def test_forward_shape_and_range(tiny_model_config, rng):
    model = init_model(tiny_model_config)
    x = rng.uniform(size=(5, 8, 4))
    p = forward(model, x)
    assert p.shape == (5,)
    assert np.all((p > 0) & (p < 1))
    assert np.array_equal(p, forward(model, x))
    assert forward(model, x[0]).shape == (1,)


def test_forward_rejects_wrong_shape(tiny_model_config, rng):
    model = init_model(tiny_model_config)
    with pytest.raises(ShapeError):
        forward(model, rng.uniform(size=(2, 9, 4)))


def test_training_mode_dropout_is_seeded(tiny_model_config, rng):
    model = init_model(tiny_model_config)
    x = rng.uniform(size=(3, 8, 4))
    a = forward(model, x, train=True, seed=11)
    b = forward(model, x, train=True, seed=11)
    assert np.array_equal(a, b)
    assert not np.allclose(a, forward(model, x))


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_full_model_gradients(seed, rng):
    config = PhaseModelConfig(
        timesteps=8, features=4, conv_filters=4, conv_kernel=3,
        lstm_hidden=4, attn_heads=2, dropout_rate=0.2, seed=seed,
    )
    params = dict(init_model(config).params)
    # sharpen both attention layers so query/key gradients are not vanishing
    for name in ("attn1.Wq", "attn1.Wk", "attn2.Wq", "attn2.Wk"):
        params[name] = 3.0 * params[name]
    x = np.random.default_rng(seed).uniform(size=(2, 8, 4))

    def run(values):
        return forward_with_cache(values, config, x, train=True, seed=seed)

    error = grad_check(run, backward, params, seed=seed)
    assert error <= 1e-4


def test_loss_and_grads_cover_every_parameter(tiny_model_config, rng):
    model = init_model(tiny_model_config)
    loss, grads = loss_and_grads(model.params, tiny_model_config, rng.uniform(size=(4, 8, 4)), np.array([1, 0, 1, 0]), seed=1)
    assert np.isfinite(loss) and loss > 0
    assert set(grads) == set(model.params)
    assert all(grads[n].shape == model.params[n].shape for n in grads)


def test_predict_proba_is_batch_independent(tiny_model_config, rng):
    model = init_model(tiny_model_config)
    X = rng.uniform(size=(7, 8, 4))
    assert np.allclose(predict_proba(model, X, batch_size=2), predict_proba(model, X, batch_size=64), atol=1e-12)
    assert predict_proba(model, np.zeros((0, 8, 4))).shape == (0,)


def test_model_file_round_trip(tmp_path, tiny_model_config, rng):
    model = init_model(tiny_model_config)
    path = save_model(model, str(tmp_path / "nested" / "model.phase"), {"config_hash": "abc", "seed": 3})
    loaded = load_model(path)
    assert loaded.config == model.config
    assert all(np.array_equal(loaded.params[n], model.params[n]) for n in model.params)
    X = rng.uniform(size=(3, 8, 4))
    assert np.array_equal(predict_proba(loaded, X), predict_proba(model, X))
    assert model_provenance(path) == {"config_hash": "abc", "seed": 3}


def test_model_file_is_byte_stable(tmp_path, tiny_model_config):
    model = init_model(tiny_model_config)
    a = save_model(model, str(tmp_path / "a.phase"))
    b = save_model(model, str(tmp_path / "b.phase"))
    assert open(a, "rb").read() == open(b, "rb").read()


def _rewrite_header(path, mutate):
    blob = open(path, "rb").read()
    start = len(MODEL_MAGIC) + 4
    (length,) = struct.unpack("<I", blob[len(MODEL_MAGIC):start])
    header = json.loads(blob[start:start + length])
    mutate(header)
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC + struct.pack("<I", len(raw)) + raw + blob[start + length:])


def test_model_file_errors(tmp_path, tiny_model_config):
    model = init_model(tiny_model_config)

    not_model = tmp_path / "junk.phase"
    not_model.write_bytes(b"hello world")
    with pytest.raises(ModelFileError):
        load_model(str(not_model))

    version = save_model(model, str(tmp_path / "version.phase"))
    _rewrite_header(version, lambda h: h.update(version=2))
    with pytest.raises(ModelFileError):
        load_model(version)

    shape = save_model(model, str(tmp_path / "shape.phase"))
    _rewrite_header(shape, lambda h: h["config"].update(lstm_hidden=6, attn_heads=3))
    with pytest.raises(ModelFileError):
        load_model(shape)

    truncated = save_model(model, str(tmp_path / "short.phase"))
    blob = open(truncated, "rb").read()
    open(truncated, "wb").write(blob[:-16])
    with pytest.raises(ModelFileError):
        load_model(truncated)

    with pytest.raises(ModelFileError):
        load_model(str(tmp_path / "missing.phase"))


def test_from_pipeline_wraps_invalid_settings():
    settings = SimpleNamespace(conv_filters=4, conv_kernel=2, lstm_hidden=4, attn_heads=2, dropout=0.2)
    with pytest.raises(ConfigError):
        PhaseModelConfig.from_pipeline(settings, timesteps=8, features=4, seed=0)
