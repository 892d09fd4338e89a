"""Tests for the GRU cell, attention, the full model, and training."""

import numpy as np
import pytest

from conftest import assert_close_to_fd, central_difference, make_moderate_samples

from polytraj.autodiff import Tensor
from polytraj.data import Sample, gen_synthetic, build_samples
from polytraj.errors import ConfigError, DataError, NumericalError, ShapeError
from polytraj.model import (
    COORDINATES,
    POLYNOMIAL,
    GRUWeights,
    ModelConfig,
    TrainSettings,
    TrajectoryModel,
    attention,
    batch_loss,
    collate,
    gru_cell,
    load_model,
    save_model,
    train,
)
from polytraj.poly import trajectory_loss

# -- GRU cell -------------------------------------------------------------------


def _zero_weights(in_dim, units):
    return GRUWeights(
        w_x=np.zeros((in_dim, 3 * units)),
        u_zr=np.zeros((units, 2 * units)),
        u_c=np.zeros((units, units)),
        b=np.zeros(3 * units),
    )


def test_gru_zero_weights_zero_state():
    out = gru_cell(np.ones((1, 4)), np.zeros((1, 3)), _zero_weights(4, 3))
    np.testing.assert_array_equal(out, np.zeros((1, 3)))


def test_gru_saturated_update_gate_keeps_state():
    units = 3
    weights = _zero_weights(2, units)
    weights.b[:units] = 50.0  # update gate saturates toward keeping h
    h = np.array([[0.3, -0.7, 1.2]])
    out = gru_cell(np.ones((1, 2)), h, weights)
    np.testing.assert_allclose(out, h, atol=1e-12)


def test_gru_gradients_match_finite_differences(rng):
    in_dim, units = 3, 4
    weights = GRUWeights(
        w_x=Tensor(rng.normal(0, 0.5, size=(in_dim, 3 * units))),
        u_zr=Tensor(rng.normal(0, 0.5, size=(units, 2 * units))),
        u_c=Tensor(rng.normal(0, 0.5, size=(units, units))),
        b=Tensor(rng.normal(0, 0.2, size=3 * units)),
    )
    h = Tensor(rng.normal(0, 1, size=(2, units)))
    x = rng.normal(0, 1, size=(2, in_dim))
    mix = rng.normal(0, 1, size=(2, units))

    def forward():
        return (gru_cell(x, h, weights) * mix).sum()

    forward().backward()
    for param in (weights.w_x, weights.u_zr, weights.u_c, weights.b, h):
        numeric = central_difference(lambda: float(forward().data), param.data)
        assert_close_to_fd(param.grad, numeric)


def test_gru_shape_mismatch_raises():
    # numpy raises its own ValueError on the inference path; the graph path
    # raises ShapeError, which subclasses ValueError
    with pytest.raises(ValueError):
        gru_cell(np.ones((1, 5)), np.zeros((1, 3)), _zero_weights(4, 3))
    with pytest.raises(ShapeError):
        weights = _zero_weights(4, 3)
        gru_cell(np.ones((1, 5)), Tensor(np.zeros((1, 3))), GRUWeights(
            w_x=Tensor(weights.w_x), u_zr=Tensor(weights.u_zr),
            u_c=Tensor(weights.u_c), b=Tensor(weights.b),
        ))


# -- attention ------------------------------------------------------------------


def test_attention_singleton_returns_value(rng):
    value = rng.normal(0, 1, size=(1, 4))
    out = attention(rng.normal(0, 1, size=4), rng.normal(0, 1, size=(1, 4)), value)
    np.testing.assert_allclose(out, value[0])


def test_attention_identical_keys_average_values(rng):
    key = rng.normal(0, 1, size=4)
    values = rng.normal(0, 1, size=(2, 4))
    out = attention(rng.normal(0, 1, size=4), np.stack([key, key]), values)
    np.testing.assert_allclose(out, values.mean(axis=0))


def test_attention_orthogonal_query_gives_mean(rng):
    # all scores equal -> uniform softmax
    query = np.array([0.0, 0.0, 1.0])
    keys = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 2.0, 0.0]])
    values = rng.normal(0, 1, size=(3, 3))
    np.testing.assert_allclose(attention(query, keys, values), values.mean(axis=0))


def test_attention_rejects_empty_keys():
    with pytest.raises(ShapeError):
        attention(np.zeros(3), np.zeros((0, 3)), np.zeros((0, 3)))


# -- config and forward ------------------------------------------------------------


def test_coordinate_head_rejects_random_anchoring():
    with pytest.raises(ConfigError):
        ModelConfig(head=COORDINATES, anchor_mode="random")


def test_head_offsets_for_coordinates():
    cfg = ModelConfig(head=COORDINATES, anchor_mode="fixed", anchor_count=2, horizon=50)
    assert cfg.head_offsets == (25, 50)
    assert cfg.output_dim == 8


def test_zero_head_polynomial_is_origin_everywhere(rng):
    samples = make_moderate_samples(rng, 1)
    model = TrajectoryModel(ModelConfig(units=6, d_x=3, d_y=2), seed=3)
    model.zero_head()
    traj = model.predict(samples[0])
    np.testing.assert_array_equal(traj.a, np.zeros(3))
    np.testing.assert_array_equal(traj.b, np.zeros(2))
    assert np.all(traj.sigma_a > 0)
    positions = model.predict_positions(samples[0], [1, 10, 50])
    np.testing.assert_array_equal(positions, np.zeros((3, 2)))


def test_zero_head_coordinates_all_zero(rng):
    samples = make_moderate_samples(rng, 1)
    cfg = ModelConfig(head=COORDINATES, anchor_mode="fixed", anchor_count=3, horizon=30, units=6)
    model = TrajectoryModel(cfg, seed=3)
    model.zero_head()
    prediction = model.predict(samples[0])
    np.testing.assert_array_equal(prediction.points, np.zeros((3, 2)))


def test_history_length_one_and_five_both_accepted(rng):
    model = TrajectoryModel(ModelConfig(units=5), seed=0)
    for steps in (1, 5):
        sample = Sample(
            states=rng.normal(0, 1, size=(1, steps, 7)),
            mask=np.ones((1, steps)),
            future=np.zeros((60, 2)),
        )
        out = model.forward(sample)
        assert out.shape == (model.config.output_dim,)


def test_empty_history_rejected(rng):
    model = TrajectoryModel(ModelConfig(units=5), seed=0)
    sample = Sample(states=np.zeros((1, 0, 7)), mask=np.zeros((1, 0)), future=np.zeros((60, 2)))
    with pytest.raises(DataError):
        model.forward(sample)


def test_forward_deterministic_across_rebuilds(rng):
    samples = make_moderate_samples(rng, 1, agents=3)
    out1 = TrajectoryModel(ModelConfig(units=8), seed=(7, 7)).forward(samples[0])
    out2 = TrajectoryModel(ModelConfig(units=8), seed=(7, 7)).forward(samples[0])
    np.testing.assert_array_equal(out1, out2)


def test_neighbor_permutation_invariance(rng):
    samples = make_moderate_samples(rng, 1, agents=4)
    sample = samples[0]
    model = TrajectoryModel(ModelConfig(units=8), seed=11)
    base = model.forward(sample)
    order = [0, 3, 1, 2]  # reference agent stays in slot 0
    shuffled = Sample(
        states=sample.states[order],
        mask=sample.mask[order],
        future=sample.future,
    )
    np.testing.assert_allclose(model.forward(shuffled), base, atol=1e-12)


def test_train_and_inference_paths_agree(rng):
    samples = make_moderate_samples(rng, 3, agents=2)
    model = TrajectoryModel(ModelConfig(units=6), seed=5)
    states, mask = collate(samples)
    graph_out = model.forward_batch(states, mask, train=True)
    numpy_out = model.forward_batch(states, mask, train=False)
    np.testing.assert_allclose(numpy_out, graph_out.data, atol=1e-14)


# -- loss ---------------------------------------------------------------------------


def test_batch_loss_equals_trajectory_loss_contract(rng):
    samples = make_moderate_samples(rng, 1)
    model = TrajectoryModel(ModelConfig(units=6, d_x=3, d_y=3), seed=9)
    schedule = [7, 21, 42]
    loss, _ = batch_loss(model, samples, np.array([schedule]), train=False)
    traj = model.predict(samples[0])
    expected = trajectory_loss(traj, samples[0].future, schedule)
    assert float(loss) == pytest.approx(expected, rel=1e-12)


def test_coordinate_loss_only_sees_its_offsets(rng):
    samples = make_moderate_samples(rng, 1)
    cfg = ModelConfig(head=COORDINATES, anchor_mode="fixed", anchor_count=2, horizon=50, units=6)
    model = TrajectoryModel(cfg, seed=1)
    t_matrix = np.array([cfg.head_offsets])
    base, _ = batch_loss(model, samples, t_matrix, train=False)
    tweaked = Sample(
        states=samples[0].states,
        mask=samples[0].mask,
        future=samples[0].future.copy(),
    )
    tweaked.future[10] += 100.0  # not an anchor
    moved, _ = batch_loss(model, [tweaked], t_matrix, train=False)
    assert float(moved) == float(base)
    tweaked.future[25] += 1.0  # t_25 is an anchor
    moved, _ = batch_loss(model, [tweaked], t_matrix, train=False)
    assert float(moved) != float(base)


def test_batch_loss_rejects_offsets_beyond_future(rng):
    samples = make_moderate_samples(rng, 1, horizon=30)
    model = TrajectoryModel(ModelConfig(units=4), seed=0)
    with pytest.raises(DataError, match="sample 0"):
        batch_loss(model, samples, np.array([[10, 31]]), train=False)


def test_whole_model_gradient_check_mini(rng):
    samples = make_moderate_samples(rng, 2, agents=2, steps=4)
    cfg = ModelConfig(units=3, d_x=2, d_y=2, decoder_steps=2)
    model = TrajectoryModel(cfg, seed=13)
    t_matrix = np.array([[5, 20, 50], [5, 20, 50]])

    loss, _ = batch_loss(model, samples, t_matrix, train=True)
    loss.backward()
    for name, node in model.params.items():
        numeric = central_difference(
            lambda: float(batch_loss(model, samples, t_matrix, train=False)[0]),
            node.data,
            step=1e-3,
        )
        analytic = node.grad if node.grad is not None else np.zeros_like(node.data)
        assert_close_to_fd(analytic, numeric)


# -- training --------------------------------------------------------------------------


def test_degenerate_random_range_reproduces_fixed_training(rng):
    samples = make_moderate_samples(rng, 8)
    common = dict(units=5, d_x=2, d_y=2, anchor_count=5, horizon=50)
    random_cfg = ModelConfig(anchor_mode="random", anchor_min=50, anchor_max=50, **common)
    fixed_cfg = ModelConfig(anchor_mode="fixed", **common)
    settings = TrainSettings(lr=0.01, epochs=2, batch=4, seed=(3, 4))

    model_r = TrajectoryModel(random_cfg, seed=(3, 4))
    curve_r = train(model_r, samples, settings).loss_curve
    model_f = TrajectoryModel(fixed_cfg, seed=(3, 4))
    curve_f = train(model_f, samples, settings).loss_curve

    assert curve_r == curve_f
    for name in model_r.params:
        np.testing.assert_array_equal(model_r.params[name].data, model_f.params[name].data)


def test_training_is_bit_deterministic(rng):
    samples = make_moderate_samples(rng, 6)
    settings = TrainSettings(lr=0.01, epochs=1, batch=3, seed=(0, 1))

    def run():
        model = TrajectoryModel(ModelConfig(units=4), seed=(0, 1))
        train(model, samples, settings)
        return {name: node.data.copy() for name, node in model.params.items()}

    first, second = run(), run()
    for name in first:
        np.testing.assert_array_equal(first[name], second[name])


def test_lr_zero_keeps_parameters(rng):
    samples = make_moderate_samples(rng, 4)
    model = TrajectoryModel(ModelConfig(units=4), seed=2)
    before = {name: node.data.copy() for name, node in model.params.items()}
    train(model, samples, TrainSettings(lr=0.0, epochs=1, batch=2, seed=(0, 0)))
    for name, node in model.params.items():
        np.testing.assert_array_equal(node.data, before[name])


def test_empty_dataset_rejected():
    model = TrajectoryModel(ModelConfig(units=4), seed=0)
    with pytest.raises(DataError):
        train(model, [], TrainSettings())


def test_nan_loss_aborts_with_sample_id(rng):
    samples = make_moderate_samples(rng, 4)
    samples[2].future[:] = np.nan
    model = TrajectoryModel(ModelConfig(units=4), seed=2)
    with pytest.raises(NumericalError, match=r"sample\(s\) \[2\]"):
        train(model, samples, TrainSettings(lr=0.01, epochs=1, batch=4, seed=(0, 0)))


def test_anchor_range_must_fit_future(rng):
    samples = make_moderate_samples(rng, 2, horizon=40)
    model = TrajectoryModel(ModelConfig(units=4, anchor_mode="random", anchor_min=35, anchor_max=55), seed=0)
    with pytest.raises(DataError, match="55"):
        train(model, samples, TrainSettings(epochs=1))


def test_sgd_optimizer_also_trains(rng):
    samples = make_moderate_samples(rng, 4)
    model = TrajectoryModel(ModelConfig(units=4), seed=2)
    before = model.params["head.w"].data.copy()
    train(model, samples, TrainSettings(lr=0.01, epochs=1, batch=2, optimizer="sgd", seed=(0, 0)))
    assert not np.array_equal(model.params["head.w"].data, before)


# -- persistence ----------------------------------------------------------------------


def test_save_load_round_trip_preserves_predictions(tmp_path, rng):
    samples = make_moderate_samples(rng, 1)
    model = TrajectoryModel(ModelConfig(units=6, d_x=2, d_y=3), seed=21)
    path = tmp_path / "model.ckpt"
    save_model(model, path, extra_meta={"fingerprint": "abc"})
    restored, meta = load_model(path)
    assert meta["fingerprint"] == "abc"
    assert restored.config == model.config
    np.testing.assert_array_equal(restored.forward(samples[0]), model.forward(samples[0]))


def test_collate_pads_variable_agent_counts(rng):
    a = make_moderate_samples(rng, 1, agents=1)[0]
    b = make_moderate_samples(rng, 1, agents=3)[0]
    states, mask = collate([a, b])
    assert states.shape == (2, 3, 6, 7)
    assert mask[0, 1:].sum() == 0.0
