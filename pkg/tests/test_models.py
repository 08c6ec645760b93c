import numpy as np
import pytest

from salescast.errors import ConstructionError, ContractError, DimensionError
from salescast.models import (
    KINDS,
    ModelSpec,
    backward,
    build,
    forward,
    param_count,
)
from salescast.optim import mse_loss
from salescast.tensor import RngStream


def small_spec(kind, channels=3, **kw):
    defaults = dict(conv=((3, 4), (5, 6)), hidden=5, dropout_rate=0.3)
    defaults.update(kw)
    return ModelSpec(kind=kind, input_channels=channels, **defaults)


def closed_form_param_count(spec: ModelSpec) -> int:
    """Independent oracle: parameter count from layer shapes."""
    total = 0
    in_ch = spec.input_channels
    t = spec.window_len
    if spec.kind in ("cnn_lstm", "cnn"):
        for k, filters in spec.conv:
            total += filters * in_ch * k + filters  # conv kernel + bias
            total += 2 * filters  # batch norm gamma + beta
            in_ch = filters
            t //= 2
    if spec.kind == "cnn_lstm":
        feat = spec.conv[-1][1]
    elif spec.kind == "cnn":
        return total + spec.output_dim * (spec.conv[-1][1] * t) + spec.output_dim
    else:
        feat = spec.input_channels
    if spec.kind in ("cnn_lstm", "lstm"):
        for _ in range(spec.lstm_layers):
            total += 4 * (spec.hidden * feat + spec.hidden * spec.hidden + spec.hidden)
            feat = spec.hidden
    elif spec.kind == "rnn":
        for _ in range(spec.lstm_layers):
            total += spec.hidden * feat + spec.hidden * spec.hidden + spec.hidden
            feat = spec.hidden
    total += spec.output_dim * spec.hidden + spec.output_dim
    return total


class TestSpec:
    def test_defaults_match_architecture_constants(self):
        spec = ModelSpec(kind="cnn_lstm", input_channels=5)
        assert spec.conv == ((3, 64), (5, 128))
        assert spec.lstm_layers == 2
        assert spec.hidden == 128
        assert spec.dropout_rate == 0.3
        assert spec.window_len == 8
        assert spec.output_dim == 1

    def test_window_too_short_for_pooling(self):
        with pytest.raises(ConstructionError):
            ModelSpec(kind="cnn_lstm", input_channels=2, window_len=3).validate()

    def test_unknown_kind(self):
        with pytest.raises(ConstructionError):
            ModelSpec(kind="transformer", input_channels=2).validate()

    def test_even_kernel_rejected(self):
        with pytest.raises(ConstructionError):
            ModelSpec(kind="cnn", input_channels=2, conv=((4, 8),)).validate()

    def test_lstm_sees_two_timesteps_at_window_8(self):
        spec = ModelSpec(kind="cnn_lstm", input_channels=2)
        assert spec.pooled_len == 2  # 8 -> 4 -> 2


class TestBuild:
    @pytest.mark.parametrize("kind", KINDS)
    def test_same_seed_bit_identical(self, kind):
        a = build(small_spec(kind), RngStream(11))
        b = build(small_spec(kind), RngStream(11))
        assert list(a.params) == list(b.params)
        for name in a.params:
            assert np.array_equal(a.params[name].value, b.params[name].value)

    @pytest.mark.parametrize("kind", KINDS)
    def test_param_count_matches_closed_form(self, kind):
        spec = small_spec(kind)
        assert param_count(build(spec, RngStream(0))) == closed_form_param_count(spec)

    def test_full_size_param_count(self):
        spec = ModelSpec(kind="cnn_lstm", input_channels=10)
        assert param_count(build(spec, RngStream(0))) == closed_form_param_count(spec)

    def test_forget_bias_initialized_to_one(self):
        m = build(small_spec("lstm"), RngStream(0))
        assert np.all(m.param("lstm1.b_f") == 1.0)
        assert np.all(m.param("lstm1.b_i") == 0.0)


class TestForward:
    @pytest.mark.parametrize("kind", KINDS)
    def test_output_shape(self, kind, rng):
        m = build(small_spec(kind), rng)
        y, _ = forward(m, RngStream(1).uniform(-1, 1, (5, 3, 8)), "infer")
        assert y.shape == (5, 1)

    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_parameters_give_zero_output(self, kind, rng):
        m = build(small_spec(kind), rng)
        for p in m.params.values():
            p.value = np.zeros_like(p.value)
        y, _ = forward(m, RngStream(1).uniform(-1, 1, (4, 3, 8)), "infer")
        assert np.allclose(y, 0.0)

    def test_infer_is_pure_given_frozen_state(self, rng):
        m = build(small_spec("cnn_lstm"), rng)
        x = RngStream(2).uniform(-1, 1, (3, 3, 8))
        m.reset_states()
        y1, _ = forward(m, x, "infer")
        m.reset_states()
        y2, _ = forward(m, x, "infer")
        assert np.array_equal(y1, y2)

    def test_infer_never_mutates_params(self, rng):
        m = build(small_spec("cnn_lstm"), rng)
        snapshot = {k: p.value.copy() for k, p in m.params.items()}
        buffers = {k: v.copy() for k, v in m.buffers.items()}
        forward(m, RngStream(3).uniform(-1, 1, (2, 3, 8)), "infer")
        for k in snapshot:
            assert np.array_equal(m.params[k].value, snapshot[k])
        for k in buffers:
            assert np.array_equal(m.buffers[k], buffers[k])

    def test_shape_mismatch(self, rng):
        m = build(small_spec("cnn"), rng)
        with pytest.raises(DimensionError):
            forward(m, np.zeros((2, 4, 8)), "infer")

    def test_train_without_rng_raises_for_dropout_kinds(self, rng):
        m = build(small_spec("lstm"), rng)
        with pytest.raises(ContractError):
            forward(m, np.zeros((4, 3, 8)), "train")

    def test_state_batch_mismatch(self, rng):
        m = build(small_spec("lstm"), rng)
        forward(m, RngStream(1).uniform(-1, 1, (4, 3, 8)), "infer")
        with pytest.raises(DimensionError):
            forward(m, RngStream(1).uniform(-1, 1, (2, 3, 8)), "infer")


class TestStatefulness:
    def test_reset_then_forward_matches_fresh_model(self):
        a = build(small_spec("lstm"), RngStream(5))
        b = build(small_spec("lstm"), RngStream(5))
        x = RngStream(1).uniform(-1, 1, (2, 3, 8))
        forward(a, x, "infer")  # leaves carried state behind
        a.reset_states()
        ya, _ = forward(a, x, "infer")
        yb, _ = forward(b, x, "infer")
        assert np.array_equal(ya, yb)

    def test_reset_idempotent(self, rng):
        m = build(small_spec("rnn"), rng)
        forward(m, RngStream(1).uniform(-1, 1, (2, 3, 8)), "infer")
        m.reset_states()
        first = dict(m.state)
        m.reset_states()
        assert m.state == first == {}

    def test_carried_state_changes_output(self, rng):
        m = build(small_spec("lstm"), rng)
        xa = RngStream(1).uniform(-1, 1, (2, 3, 8))
        xb = RngStream(2).uniform(-1, 1, (2, 3, 8))
        m.reset_states()
        forward(m, xa, "infer")
        y_carried, _ = forward(m, xb, "infer")
        m.reset_states()
        y_reset, _ = forward(m, xb, "infer")
        assert not np.allclose(y_carried, y_reset)

    def test_cnn_kind_is_stateless(self, rng):
        m = build(small_spec("cnn"), rng)
        forward(m, RngStream(1).uniform(-1, 1, (2, 3, 8)), "infer")
        assert m.state == {}

    def test_persistent_state_is_detached_copy(self, rng):
        m = build(small_spec("lstm"), rng)
        forward(m, RngStream(1).uniform(-1, 1, (2, 3, 8)), "infer")
        h_before = m.state["lstm1"][0].copy()
        forward(m, RngStream(2).uniform(-1, 1, (2, 3, 8)), "infer")
        assert not np.array_equal(m.state["lstm1"][0], h_before)


class TestBackward:
    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_cotangent_zero_grads(self, kind, rng):
        m = build(small_spec(kind), rng)
        m.reset_states()
        y, ctxs = forward(m, RngStream(1).uniform(-1, 1, (3, 3, 8)), "train",
                          RngStream(2))
        backward(m, ctxs, np.zeros_like(y))
        for name, p in m.params.items():
            assert np.all(p.grad == 0), name

    def test_loss_gradients_populate_every_param(self, rng):
        m = build(small_spec("cnn_lstm"), rng)
        m.reset_states()
        x = RngStream(1).uniform(-1, 1, (4, 3, 8))
        y = RngStream(2).uniform(-1, 1, (4, 1))
        y_hat, ctxs = forward(m, x, "train", RngStream(3))
        _, gy = mse_loss(y_hat, y)
        backward(m, ctxs, gy)
        nonzero = [name for name, p in m.params.items() if np.any(p.grad != 0)]
        assert len(nonzero) > len(m.params) * 0.8
