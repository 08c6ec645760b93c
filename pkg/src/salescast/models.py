"""The CNN-LSTM forecaster and its three baselines behind one interface.

Architectures (window-first input x: [batch, channels, window_len]):

- cnn_lstm: conv(3,64) -> BN -> ReLU -> pool(2) -> conv(5,128) -> BN -> ReLU
  -> pool(2) -> [batch, T', 128] sequence -> LSTM(128) -> dropout(0.3)
  -> LSTM(128) -> last hidden -> dense(128 -> 1)
- cnn: same conv stack -> flatten -> dense
- lstm: raw window as a [batch, window, channels] sequence -> LSTM(128)
  -> dropout -> LSTM(128) -> last hidden -> dense
- rnn: two stacked vanilla tanh recurrence layers (128 units) -> dense

The LSTM-bearing kinds (cnn_lstm, lstm) are stateful: the final hidden and
cell state of each LSTM layer is kept, detached, and used as the initial
state of the next forward until reset_states() is called. The cnn and rnn
baselines are stateless; every forward starts from zero state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ConstructionError, ContractError, DimensionError
from .optim import ParamTensor
from .tensor import RngStream, Tensor

KINDS = ("cnn_lstm", "cnn", "lstm", "rnn")
STATEFUL_KINDS = ("cnn_lstm", "lstm")


@dataclass
class ModelSpec:
    kind: str
    input_channels: int
    window_len: int = 8
    conv: tuple = ((3, 64), (5, 128))
    lstm_layers: int = 2
    hidden: int = 128
    dropout_rate: float = 0.3
    output_dim: int = 1

    def validate(self):
        if self.kind not in KINDS:
            raise ConstructionError(f"unknown model kind {self.kind!r}")
        if self.input_channels < 1:
            raise ConstructionError("input_channels must be >= 1")
        if self.window_len < 1:
            raise ConstructionError("window_len must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConstructionError("dropout_rate must be in [0, 1)")
        if self.kind in ("cnn_lstm", "cnn"):
            n_pool = len(self.conv)
            if self.window_len < 2**n_pool:
                raise ConstructionError(
                    f"window_len {self.window_len} too short for {n_pool} "
                    f"pooling layers (needs >= {2 ** n_pool})"
                )
            for k, _ in self.conv:
                if k % 2 == 0:
                    raise ConstructionError(f"conv kernel sizes must be odd, got {k}")

    @property
    def pooled_len(self) -> int:
        t = self.window_len
        for _ in self.conv:
            t //= 2
        return t

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_channels": self.input_channels,
            "window_len": self.window_len,
            "conv": [list(c) for c in self.conv],
            "lstm_layers": self.lstm_layers,
            "hidden": self.hidden,
            "dropout_rate": self.dropout_rate,
            "output_dim": self.output_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["conv"] = tuple(tuple(c) for c in d["conv"])
        return cls(**d)


@dataclass
class Model:
    spec: ModelSpec
    params: dict = field(default_factory=dict)  # name -> ParamTensor
    buffers: dict = field(default_factory=dict)  # batch-norm running stats
    state: dict = field(default_factory=dict)  # recurrent (h, c) carried over
    meta: dict | None = None  # preprocessing info attached at training time

    def param(self, name: str) -> Tensor:
        return self.params[name].value

    def reset_states(self):
        self.state = {}


def _glorot(rng: RngStream, shape, fan_in, fan_out) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def _add_conv(m: Model, rng, name, in_ch, out_ch, k):
    m.params[f"{name}.kernel"] = ParamTensor(
        _glorot(rng, (out_ch, in_ch, k), in_ch * k, out_ch * k)
    )
    m.params[f"{name}.bias"] = ParamTensor(np.zeros(out_ch))


def _add_bn(m: Model, name, ch):
    m.params[f"{name}.gamma"] = ParamTensor(np.ones(ch))
    m.params[f"{name}.beta"] = ParamTensor(np.zeros(ch))
    m.buffers[f"{name}.running_mean"] = np.zeros(ch)
    m.buffers[f"{name}.running_var"] = np.ones(ch)


def _add_lstm(m: Model, rng, name, input_dim, hidden):
    for g in ("i", "f", "g", "o"):
        m.params[f"{name}.W_{g}"] = ParamTensor(
            _glorot(rng, (hidden, input_dim), input_dim, hidden)
        )
        m.params[f"{name}.U_{g}"] = ParamTensor(_glorot(rng, (hidden, hidden), hidden, hidden))
        # forget-gate bias starts at 1 to stabilize early training
        m.params[f"{name}.b_{g}"] = ParamTensor(
            np.ones(hidden) if g == "f" else np.zeros(hidden)
        )


def _add_rnn(m: Model, rng, name, input_dim, hidden):
    m.params[f"{name}.W"] = ParamTensor(_glorot(rng, (hidden, input_dim), input_dim, hidden))
    m.params[f"{name}.U"] = ParamTensor(_glorot(rng, (hidden, hidden), hidden, hidden))
    m.params[f"{name}.b"] = ParamTensor(np.zeros(hidden))


def _add_dense(m: Model, rng, name, in_dim, out_dim):
    m.params[f"{name}.W"] = ParamTensor(_glorot(rng, (out_dim, in_dim), in_dim, out_dim))
    m.params[f"{name}.b"] = ParamTensor(np.zeros(out_dim))


def build(spec: ModelSpec, rng: RngStream) -> Model:
    """Construct a model with Glorot-uniform weights, deterministic per seed."""
    spec.validate()
    m = Model(spec=spec)
    s = spec
    if s.kind in ("cnn_lstm", "cnn"):
        in_ch = s.input_channels
        for idx, (k, filters) in enumerate(s.conv, start=1):
            _add_conv(m, rng, f"conv{idx}", in_ch, filters, k)
            _add_bn(m, f"bn{idx}", filters)
            in_ch = filters
    if s.kind == "cnn_lstm":
        feat = s.conv[-1][1]
        for i in range(1, s.lstm_layers + 1):
            _add_lstm(m, rng, f"lstm{i}", feat, s.hidden)
            feat = s.hidden
        _add_dense(m, rng, "dense", s.hidden, s.output_dim)
    elif s.kind == "cnn":
        flat = s.conv[-1][1] * s.pooled_len
        _add_dense(m, rng, "dense", flat, s.output_dim)
    elif s.kind == "lstm":
        feat = s.input_channels
        for i in range(1, s.lstm_layers + 1):
            _add_lstm(m, rng, f"lstm{i}", feat, s.hidden)
            feat = s.hidden
        _add_dense(m, rng, "dense", s.hidden, s.output_dim)
    elif s.kind == "rnn":
        feat = s.input_channels
        for i in range(1, s.lstm_layers + 1):
            _add_rnn(m, rng, f"rnn{i}", feat, s.hidden)
            feat = s.hidden
        _add_dense(m, rng, "dense", s.hidden, s.output_dim)
    return m


def param_count(m: Model) -> int:
    return sum(p.value.size for p in m.params.values())


def _conv_params(m: Model, name) -> L.Conv1dParams:
    return L.Conv1dParams(kernels=m.param(f"{name}.kernel"), bias=m.param(f"{name}.bias"))


def _bn_params(m: Model, name) -> L.BatchNormParams:
    return L.BatchNormParams(
        gamma=m.param(f"{name}.gamma"),
        beta=m.param(f"{name}.beta"),
        running_mean=m.buffers[f"{name}.running_mean"],
        running_var=m.buffers[f"{name}.running_var"],
    )


def _lstm_params(m: Model, name) -> L.LstmParams:
    return L.LstmParams(**{
        f"{w}_{g}": m.param(f"{name}.{w}_{g}")
        for w in ("W", "U", "b") for g in ("i", "f", "g", "o")
    })


def _rnn_params(m: Model, name) -> L.RnnParams:
    return L.RnnParams(W=m.param(f"{name}.W"), U=m.param(f"{name}.U"), b=m.param(f"{name}.b"))


def _initial_state(m: Model, name, batch, hidden, with_cell=True):
    if name in m.state:
        st = m.state[name]
        if st[0].shape[0] != batch:
            raise DimensionError(
                f"persistent state for {name} has batch {st[0].shape[0]}, input has {batch}"
            )
        return st
    z = np.zeros((batch, hidden))
    return (z, z.copy()) if with_cell else (z,)


def _conv_stack_forward(m: Model, x, mode, ctxs):
    h = x
    for idx in range(1, len(m.spec.conv) + 1):
        bnp = _bn_params(m, f"bn{idx}")
        h, ctxs[f"conv{idx}"] = L.conv1d_forward(h, _conv_params(m, f"conv{idx}"))
        h, ctxs[f"bn{idx}"] = L.batchnorm_forward(h, bnp, mode)
        if mode == "train":  # commit updated running stats
            m.buffers[f"bn{idx}.running_mean"] = bnp.running_mean
            m.buffers[f"bn{idx}.running_var"] = bnp.running_var
        h, ctxs[f"relu{idx}"] = L.relu(h)
        h, ctxs[f"pool{idx}"] = L.maxpool1d_forward(h)
    return h


def _conv_stack_backward(m: Model, grad, ctxs):
    for idx in range(len(m.spec.conv), 0, -1):
        grad = L.maxpool1d_backward(ctxs[f"pool{idx}"], grad)
        grad = L.relu_backward(ctxs[f"relu{idx}"], grad)
        grad, g_gamma, g_beta = L.batchnorm_backward(ctxs[f"bn{idx}"], grad)
        m.params[f"bn{idx}.gamma"].grad += g_gamma
        m.params[f"bn{idx}.beta"].grad += g_beta
        grad, g_k, g_b = L.conv1d_backward(ctxs[f"conv{idx}"], grad)
        m.params[f"conv{idx}.kernel"].grad += g_k
        m.params[f"conv{idx}.bias"].grad += g_b
    return grad


def _recurrent_head_forward(m: Model, seq, mode, rng, ctxs):
    """Stacked LSTMs with dropout in between, then dense head on last hidden."""
    batch = seq.shape[0]
    h = seq
    for i in range(1, m.spec.lstm_layers + 1):
        name = f"lstm{i}"
        h0, c0 = _initial_state(m, name, batch, m.spec.hidden)
        hs, hT, cT, ctxs[name] = L.lstm_sequence_forward(h, h0, c0, _lstm_params(m, name))
        m.state[name] = (hT.copy(), cT.copy())  # detached carry-over
        h = hs
        if i < m.spec.lstm_layers:
            h, ctxs[f"drop{i}"] = L.dropout(h, m.spec.dropout_rate, mode, rng)
    last = h[:, -1, :]
    y, ctxs["dense"] = L.dense_forward(last, m.param("dense.W"), m.param("dense.b"))
    ctxs["seq_shape"] = h.shape
    return y


def _recurrent_head_backward(m: Model, grad_y, ctxs):
    grad_last, g_W, g_b = L.dense_backward(ctxs["dense"], grad_y)
    m.params["dense.W"].grad += g_W
    m.params["dense.b"].grad += g_b
    batch, T, hidden = ctxs["seq_shape"]
    grad_hs = np.zeros((batch, T, hidden))
    grad_hs[:, -1, :] = grad_last
    for i in range(m.spec.lstm_layers, 0, -1):
        if i < m.spec.lstm_layers:
            grad_hs = L.dropout_backward(ctxs[f"drop{i}"], grad_hs)
        grad_hs, _, _, grads = L.lstm_sequence_backward(ctxs[f"lstm{i}"], grad_hs)
        for k, v in grads.items():
            m.params[f"lstm{i}.{k}"].grad += v
    return grad_hs


def forward(m: Model, x: Tensor, mode: str, rng: RngStream | None = None):
    """Run the model; returns (y_hat [batch, 1], contexts for backward)."""
    s = m.spec
    if x.ndim != 3 or x.shape[1] != s.input_channels or x.shape[2] != s.window_len:
        raise DimensionError(
            f"forward: input {x.shape} vs expected "
            f"[batch, {s.input_channels}, {s.window_len}]"
        )
    if mode == "train" and rng is None and s.kind in ("cnn_lstm", "lstm") and s.dropout_rate > 0:
        raise ContractError("train-mode forward needs an RngStream for dropout")
    ctxs = {"kind": s.kind}
    if s.kind == "cnn_lstm":
        h = _conv_stack_forward(m, x, mode, ctxs)
        seq = np.ascontiguousarray(h.transpose(0, 2, 1))  # [batch, T', filters]
        y = _recurrent_head_forward(m, seq, mode, rng, ctxs)
    elif s.kind == "cnn":
        h = _conv_stack_forward(m, x, mode, ctxs)
        ctxs["flat_shape"] = h.shape
        flat = h.reshape(h.shape[0], -1)
        y, ctxs["dense"] = L.dense_forward(flat, m.param("dense.W"), m.param("dense.b"))
    elif s.kind == "lstm":
        seq = np.ascontiguousarray(x.transpose(0, 2, 1))  # [batch, window, channels]
        y = _recurrent_head_forward(m, seq, mode, rng, ctxs)
    elif s.kind == "rnn":
        seq = np.ascontiguousarray(x.transpose(0, 2, 1))
        h = seq
        batch = x.shape[0]
        for i in range(1, s.lstm_layers + 1):
            name = f"rnn{i}"
            h0 = np.zeros((batch, s.hidden))
            hs, _, ctxs[name] = L.rnn_sequence_forward(h, h0, _rnn_params(m, name))
            h = hs
        last = h[:, -1, :]
        y, ctxs["dense"] = L.dense_forward(last, m.param("dense.W"), m.param("dense.b"))
        ctxs["seq_shape"] = h.shape
    else:
        raise ConstructionError(f"unknown model kind {s.kind!r}")
    return y, ctxs


def backward(m: Model, ctxs: dict, grad_y: Tensor) -> Tensor:
    """Accumulate parameter gradients; returns the gradient wrt the input."""
    s = m.spec
    if s.kind == "cnn_lstm":
        grad_seq = _recurrent_head_backward(m, grad_y, ctxs)
        grad_h = grad_seq.transpose(0, 2, 1)
        return _conv_stack_backward(m, grad_h, ctxs)
    if s.kind == "cnn":
        grad_flat, g_W, g_b = L.dense_backward(ctxs["dense"], grad_y)
        m.params["dense.W"].grad += g_W
        m.params["dense.b"].grad += g_b
        grad_h = grad_flat.reshape(ctxs["flat_shape"])
        return _conv_stack_backward(m, grad_h, ctxs)
    if s.kind == "lstm":
        grad_seq = _recurrent_head_backward(m, grad_y, ctxs)
        return grad_seq.transpose(0, 2, 1)
    if s.kind == "rnn":
        grad_last, g_W, g_b = L.dense_backward(ctxs["dense"], grad_y)
        m.params["dense.W"].grad += g_W
        m.params["dense.b"].grad += g_b
        batch, T, hidden = ctxs["seq_shape"]
        grad_hs = np.zeros((batch, T, hidden))
        grad_hs[:, -1, :] = grad_last
        for i in range(s.lstm_layers, 0, -1):
            grad_hs, _, grads = L.rnn_sequence_backward(ctxs[f"rnn{i}"], grad_hs)
            for k, v in grads.items():
                m.params[f"rnn{i}.{k}"].grad += v
        return grad_hs.transpose(0, 2, 1)
    raise ConstructionError(f"unknown model kind {s.kind!r}")
