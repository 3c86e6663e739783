import itertools
import math

import numpy as np
import pytest

from errors import ConfigError, DataError, ShapeError
from explain.shapley import (
    PlayerGrouping,
    array_digest,
    by_feature,
    by_timestep,
    explain,
    explain_day,
    features_at_timestep,
    kernel_coalitions,
    kernel_shap,
    masked_inputs,
    mean_background,
    missing_background,
    model_predictor,
    shapley_exact,
    shapley_weights,
    time_blocks,
)
from features.binning import FEATURES, DaySequence
from features.codec import fit, transform
from phase.model import init_model


def toy_game(X):
    """x0*x1 + 2*x2 + x0 on a 1 x 3 grid; x3 (if present) is ignored."""
    x = X[:, 0, :]
    return x[:, 0] * x[:, 1] + 2.0 * x[:, 2] + x[:, 0]


def brute_force(predict, instance, background, grouping):
    """Average marginal contribution over every player ordering."""
    P = grouping.players

    def value(members):
        coalition = np.zeros((1, P))
        coalition[0, list(members)] = 1.0
        return float(predict(masked_inputs(instance, background, grouping, coalition))[0])

    phi = np.zeros(P)
    orders = list(itertools.permutations(range(P)))
    for order in orders:
        seen = []
        for player in order:
            before = value(seen)
            seen.append(player)
            phi[player] += value(seen) - before
    return phi / len(orders)


@pytest.fixture
def toy():
    instance = np.array([[1.0, 1.0, 1.0]])
    background = np.zeros((1, 3))
    return instance, background, by_feature(1, ["a", "b", "c"])


def test_exact_matches_brute_force(toy):
    instance, background, grouping = toy
    result = shapley_exact(toy_game, instance, background, grouping)
    assert np.allclose(result.player_values, brute_force(toy_game, instance, background, grouping), atol=1e-10)
    assert np.allclose(result.player_values, [1.5, 0.5, 2.0], atol=1e-10)
    assert result.efficiency_gap() <= 1e-8
    assert result.base_value == 0.0 and result.prediction == 4.0


def test_attributions_name_their_instance_and_background(toy):
    instance, background, grouping = toy
    result = shapley_exact(toy_game, instance, background, grouping)
    assert result.instance_id == array_digest(instance)
    assert result.background_id == array_digest(background)
    assert result.instance_id != result.background_id
    named = explain(
        toy_game, instance, background, grouping, method="kernel", n_samples=8,
        instance_id="10.0.0.5/2024-03-04", background_id="missing",
    )
    assert (named.instance_id, named.background_id) == ("10.0.0.5/2024-03-04", "missing")


def test_null_player_and_symmetry():
    def game(X):
        x = X[:, 0, :]
        return np.sin(x[:, 0] + x[:, 1]) + x[:, 2] ** 2

    instance = np.array([[0.7, 0.7, 0.3, 5.0]])
    background = np.array([[0.1, 0.1, -0.4, 0.0]])
    result = shapley_exact(game, instance, background, by_feature(1, ["a", "b", "c", "null"]))
    assert abs(result.player_values[3]) <= 1e-8
    assert abs(result.player_values[0] - result.player_values[1]) <= 1e-8
    assert result.efficiency_gap() <= 1e-8


def test_shapley_weights_sum_over_subsets():
    for P in range(1, 8):
        weights = shapley_weights(P)
        total = sum(math.comb(P - 1, s) * weights[s] for s in range(P))
        assert total == pytest.approx(1.0)


def test_grouped_exact_matches_brute_force(rng):
    W = rng.normal(size=(6, 2))

    def game(X):
        return np.tanh((X * W).sum(axis=(1, 2))) + X[:, 0, 0] * X[:, 5, 1]

    instance = rng.normal(size=(6, 2))
    background = rng.normal(size=(6, 2))
    grouping = time_blocks(6, 3, 2)
    result = shapley_exact(game, instance, background, grouping)
    assert np.allclose(result.player_values, brute_force(game, instance, background, grouping), atol=1e-10)
    # values are spread evenly over each block's cells
    assert result.values[0, 0] == pytest.approx(result.player_values[0] / 4)


@pytest.mark.parametrize("players", [3, 6, 10])
def test_kernel_agrees_with_exact(players, rng):
    W = rng.normal(size=players)

    def game(X):
        x = X[:, 0, :]
        return np.tanh(x @ W) + x[:, 0] * x[:, -1]

    instance = rng.normal(size=(1, players))
    background = rng.normal(size=(1, players))
    grouping = by_feature(1, [f"p{i}" for i in range(players)])
    exact = shapley_exact(game, instance, background, grouping)
    kernel = kernel_shap(game, instance, background, grouping, n_samples=8 * 2 ** players, seed=1)
    assert np.max(np.abs(kernel.player_values - exact.player_values)) <= 0.05
    assert kernel.efficiency_gap() <= 1e-8


def test_sampled_kernel_is_seeded_and_efficient(rng):
    W = rng.normal(size=16)

    def linear(X):
        return X[:, 0, :] @ W

    instance = rng.normal(size=(1, 16))
    background = np.zeros((1, 16))
    grouping = by_feature(1, [f"p{i}" for i in range(16)])
    a = kernel_shap(linear, instance, background, grouping, n_samples=200, seed=3)
    b = kernel_shap(linear, instance, background, grouping, n_samples=200, seed=3)
    assert np.array_equal(a.player_values, b.player_values)
    assert a.efficiency_gap() <= 1e-8
    # linear games are recovered from any full-rank coalition set
    assert np.allclose(a.player_values, W * instance[0], atol=1e-6)


def test_kernel_coalitions_respect_budget(rng):
    masks, weights = kernel_coalitions(5, 1000, rng)
    assert len(masks) == 2 ** 5 - 2
    assert weights.sum() == pytest.approx(1.0)
    masks, weights = kernel_coalitions(14, 100, rng)
    assert len(masks) <= 100
    assert np.all((masks.sum(axis=1) > 0) & (masks.sum(axis=1) < 14))


def test_estimator_limits(toy):
    instance = np.ones((1, 13))
    grouping = by_feature(1, [f"p{i}" for i in range(13)])
    with pytest.raises(ConfigError):
        shapley_exact(lambda X: X.sum(axis=(1, 2)), instance, np.zeros((1, 13)), grouping)
    with pytest.raises(ConfigError):
        kernel_shap(lambda X: X.sum(axis=(1, 2)), instance, np.zeros((1, 13)), grouping, n_samples=20)
    result = explain(lambda X: X.sum(axis=(1, 2)), instance, np.zeros((1, 13)), grouping, method="auto", n_samples=64)
    assert result.method == "kernel"
    toy_instance, toy_background, toy_grouping = toy
    assert explain(toy_game, toy_instance, toy_background, toy_grouping).method == "exact"


def test_shape_mismatch(toy):
    instance, _, grouping = toy
    with pytest.raises(ShapeError):
        shapley_exact(toy_game, instance, np.zeros((2, 3)), grouping)


def test_groupings():
    assert by_feature(4, FEATURES).covers_all()
    assert by_timestep(4, 3).players == 4
    assert time_blocks(10, 3, 2).players == 3
    single = features_at_timestep(2, 4, ["a", "b"])
    assert not single.covers_all()
    assert single.owner[2].tolist() == [0, 1]
    with pytest.raises(DataError):
        features_at_timestep(4, 4, ["a", "b"])
    with pytest.raises(ShapeError):
        PlayerGrouping.from_masks(["x", "y"], [np.ones((2, 2), bool), np.eye(2, dtype=bool)])


def test_masked_inputs_hold_unscoped_cells(rng):
    instance = rng.normal(size=(3, 2))
    background = np.zeros((3, 2))
    grouping = features_at_timestep(1, 3, ["a", "b"])
    batch = masked_inputs(instance, background, grouping, np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert np.array_equal(batch[0, [0, 2]], instance[[0, 2]])
    assert np.array_equal(batch[0, 1], [0.0, 0.0])
    assert np.array_equal(batch[1, 1], [instance[1, 0], 0.0])


def test_backgrounds(rng):
    assert np.array_equal(mean_background(np.ones((3, 4, 2))), np.ones((4, 2)))
    with pytest.raises(DataError):
        mean_background(np.zeros((0, 4, 2)))


def test_explain_day_on_the_model(small_model_config):
    rows = [[None] * len(FEATURES) for _ in range(24)]
    rows[9][FEATURES.index("norm_vol")] = 4
    rows[9][FEATURES.index("service")] = "ssl"
    rows[15][FEATURES.index("orig_bytes")] = 800.0
    day = DaySequence(entity="10.0.0.5", date="2024-03-04", rows=rows, label=1)
    codec = fit([day])
    x = transform(day, codec)
    predict = model_predictor(init_model(small_model_config))
    result = explain_day(predict, x, missing_background(codec), method="auto", n_samples=64, seed=2, timesteps=[9, 15])
    assert result.values.shape == (24, 17)
    assert result.method == "kernel"
    assert np.all(result.values[[0, 1, 2, 10, 23]] == 0.0)
    for t in (9, 15):
        assert result.base_values[t] + result.values[t].sum() == pytest.approx(result.prediction, abs=1e-8)
    assert np.isnan(result.base_values[0])
    again = explain_day(predict, x, missing_background(codec), method="auto", n_samples=64, seed=2, timesteps=[9, 15])
    assert np.array_equal(result.values, again.values)
