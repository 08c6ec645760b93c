"""Differentiable layers with hand-derived forward and backward passes.

Every forward returns (output, LayerContext); the matching backward consumes
the context exactly once. There is no autodiff tape: the network is a fixed
chain, so each gradient is derived by hand and checked against central finite
differences in the test suite.

Conventions fixed here (and relied on by the tests):
- conv1d uses zero same-padding, so temporal length is preserved; kernel
  sizes must be odd.
- maxpool breaks ties toward the first (leftmost) position.
- batch norm uses biased (divide-by-N) batch variance.
- dropout is inverted: survivors are scaled by 1/(1-rate) at train time,
  inference is the identity.
- ReLU's subgradient at exactly 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    DegenerateBatchError,
    DimensionError,
    ParameterError,
)
from .tensor import RngStream, Tensor


@dataclass
class LayerContext:
    """Cached forward intermediates; single-use."""

    kind: str
    out_shape: tuple
    cache: dict = field(default_factory=dict)
    consumed: bool = False

    def take(self, grad_out: Tensor) -> dict:
        if self.consumed:
            raise ContractError(f"{self.kind} context already consumed")
        if grad_out.shape != self.out_shape:
            raise DimensionError(
                f"{self.kind} backward: grad shape {grad_out.shape} "
                f"!= forward output shape {self.out_shape}"
            )
        self.consumed = True
        return self.cache


def sigmoid(x: Tensor) -> Tensor:
    # numerically stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Conv1dParams:
    kernels: Tensor  # [out_ch, in_ch, k], k odd
    bias: Tensor  # [out_ch]


def conv1d_forward(x: Tensor, p: Conv1dParams):
    """Cross-correlation along time with zero same-padding.

    x: [batch, in_ch, T] -> [batch, out_ch, T].
    """
    out_ch, in_ch, k = p.kernels.shape
    if k % 2 == 0:
        raise ParameterError(f"kernel size must be odd, got {k}")
    if x.ndim != 3 or x.shape[1] != in_ch:
        raise DimensionError(
            f"conv1d: input {x.shape} incompatible with kernels {p.kernels.shape}"
        )
    batch, _, T = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    # im2col: one matmul instead of a loop over kernel taps
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [b, i, T, j]
    xcol = win.transpose(0, 2, 1, 3).reshape(batch * T, in_ch * k)
    w_flat = p.kernels.reshape(out_ch, in_ch * k)
    out = (xcol @ w_flat.T).reshape(batch, T, out_ch).transpose(0, 2, 1) + p.bias[None, :, None]
    ctx = LayerContext(
        "conv1d", out.shape,
        {"xcol": xcol, "p": p, "T": T, "pad": pad, "batch": batch},
    )
    return out, ctx


def conv1d_backward(ctx: LayerContext, grad_out: Tensor):
    c = ctx.take(grad_out)
    xcol, p, T, pad, batch = c["xcol"], c["p"], c["T"], c["pad"], c["batch"]
    out_ch, in_ch, k = p.kernels.shape
    g2 = grad_out.transpose(0, 2, 1).reshape(batch * T, out_ch)
    grad_k = (g2.T @ xcol).reshape(out_ch, in_ch, k)
    gcol = (g2 @ p.kernels.reshape(out_ch, in_ch * k)).reshape(batch, T, in_ch, k)
    grad_xp = np.zeros((batch, in_ch, T + 2 * pad))
    for j in range(k):  # scatter-add each kernel tap back onto the padded input
        grad_xp[:, :, j : j + T] += gcol[:, :, :, j].transpose(0, 2, 1)
    grad_x = grad_xp[:, :, pad : pad + T] if pad else grad_xp
    grad_bias = grad_out.sum(axis=(0, 2))
    return grad_x, grad_k, grad_bias


@dataclass
class BatchNormParams:
    gamma: Tensor  # [ch]
    beta: Tensor  # [ch]
    running_mean: Tensor  # [ch]
    running_var: Tensor  # [ch]
    momentum: float = 0.1
    eps: float = 1e-5


def batchnorm_forward(x: Tensor, p: BatchNormParams, mode: str):
    """Per-channel normalization over the (batch, time) axes.

    Train mode uses biased batch statistics and updates the running stats
    in place: running <- (1-momentum)*running + momentum*batch_stat.
    """
    if x.ndim != 3 or x.shape[1] != p.gamma.shape[0]:
        raise DimensionError(f"batchnorm: input {x.shape} vs {p.gamma.shape[0]} channels")
    batch, ch, T = x.shape
    if mode == "train":
        if batch * T < 2:
            raise DegenerateBatchError(
                "train-mode batch norm needs at least 2 values per channel"
            )
        mu = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))  # biased, /N
        p.running_mean = (1 - p.momentum) * p.running_mean + p.momentum * mu
        p.running_var = (1 - p.momentum) * p.running_var + p.momentum * var
    elif mode == "infer":
        mu, var = p.running_mean, p.running_var
    else:
        raise ParameterError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mu[None, :, None]) * inv_std[None, :, None]
    out = p.gamma[None, :, None] * xhat + p.beta[None, :, None]
    ctx = LayerContext(
        "batchnorm",
        out.shape,
        {"xhat": xhat, "inv_std": inv_std, "gamma": p.gamma, "mode": mode, "n": batch * T},
    )
    return out, ctx


def batchnorm_backward(ctx: LayerContext, grad_out: Tensor):
    c = ctx.take(grad_out)
    xhat, inv_std, gamma, n = c["xhat"], c["inv_std"], c["gamma"], c["n"]
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2))
    grad_beta = grad_out.sum(axis=(0, 2))
    dxhat = grad_out * gamma[None, :, None]
    if c["mode"] == "infer":
        grad_x = dxhat * inv_std[None, :, None]
    else:
        # batch statistics depend on x: full train-mode derivative
        s1 = dxhat.sum(axis=(0, 2))[None, :, None]
        s2 = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
        grad_x = inv_std[None, :, None] / n * (n * dxhat - s1 - xhat * s2)
    return grad_x, grad_gamma, grad_beta


def relu(x: Tensor):
    out = np.maximum(0.0, x)
    return out, LayerContext("relu", out.shape, {"mask": x > 0})


def relu_backward(ctx: LayerContext, grad_out: Tensor) -> Tensor:
    c = ctx.take(grad_out)
    return grad_out * c["mask"]


def maxpool1d_forward(x: Tensor, pool: int = 2):
    """Non-overlapping max pooling along time; odd trailing element dropped."""
    if x.ndim != 3 or x.shape[2] < pool:
        raise DimensionError(f"maxpool: need T >= {pool}, got input {x.shape}")
    batch, ch, T = x.shape
    T_out = T // pool
    win = x[:, :, : T_out * pool].reshape(batch, ch, T_out, pool)
    # argmax picks the first position on ties
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    ctx = LayerContext("maxpool1d", out.shape, {"arg": arg, "T": T, "pool": pool})
    return out, ctx


def maxpool1d_backward(ctx: LayerContext, grad_out: Tensor) -> Tensor:
    c = ctx.take(grad_out)
    arg, T, pool = c["arg"], c["T"], c["pool"]
    batch, ch, T_out = grad_out.shape
    grad_win = np.zeros((batch, ch, T_out, pool))
    np.put_along_axis(grad_win, arg[..., None], grad_out[..., None], axis=3)
    grad_x = np.zeros((batch, ch, T))
    grad_x[:, :, : T_out * pool] = grad_win.reshape(batch, ch, T_out * pool)
    return grad_x


@dataclass
class LstmParams:
    """One LSTM layer: per-gate input, recurrent, and bias parameters.

    Gates follow the classic formulation: input i, forget f, candidate g,
    output o; W_* : [hidden, input_dim], U_* : [hidden, hidden], b_* : [hidden].
    """

    W_i: Tensor
    W_f: Tensor
    W_g: Tensor
    W_o: Tensor
    U_i: Tensor
    U_f: Tensor
    U_g: Tensor
    U_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_g: Tensor
    b_o: Tensor

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1]


def _lstm_gates(x_t, h_prev, p: LstmParams):
    i = sigmoid(x_t @ p.W_i.T + h_prev @ p.U_i.T + p.b_i)
    f = sigmoid(x_t @ p.W_f.T + h_prev @ p.U_f.T + p.b_f)
    g = np.tanh(x_t @ p.W_g.T + h_prev @ p.U_g.T + p.b_g)
    o = sigmoid(x_t @ p.W_o.T + h_prev @ p.U_o.T + p.b_o)
    return i, f, g, o


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams):
    """One recurrence step: gates, cell update, hidden output."""
    if x_t.ndim != 2 or x_t.shape[1] != p.input_dim:
        raise DimensionError(f"lstm_step: input {x_t.shape} vs input_dim {p.input_dim}")
    if h_prev.shape != (x_t.shape[0], p.hidden) or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape} "
            f"vs expected {(x_t.shape[0], p.hidden)}"
        )
    i, f, g, o = _lstm_gates(x_t, h_prev, p)
    c_t = f * c_prev + i * g
    tanh_c = np.tanh(c_t)
    h_t = o * tanh_c
    ctx = LayerContext(
        "lstm_step",
        h_t.shape,
        {
            "x_t": x_t, "h_prev": h_prev, "c_prev": c_prev,
            "i": i, "f": f, "g": g, "o": o, "tanh_c": tanh_c, "p": p,
        },
    )
    return h_t, c_t, ctx


def _lstm_step_grads(cache, dh, dc):
    """Shared step backward: returns (dx, dh_prev, dc_prev, per-gate grads)."""
    p = cache["p"]
    i, f, g, o, tanh_c = cache["i"], cache["f"], cache["g"], cache["o"], cache["tanh_c"]
    x_t, h_prev, c_prev = cache["x_t"], cache["h_prev"], cache["c_prev"]
    do = dh * tanh_c
    dc = dc + dh * o * (1.0 - tanh_c**2)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    da_i = di * i * (1 - i)
    da_f = df * f * (1 - f)
    da_g = dg * (1 - g**2)
    da_o = do * o * (1 - o)
    grads = {}
    for name, da in (("i", da_i), ("f", da_f), ("g", da_g), ("o", da_o)):
        grads[f"W_{name}"] = da.T @ x_t
        grads[f"U_{name}"] = da.T @ h_prev
        grads[f"b_{name}"] = da.sum(axis=0)
    dx = da_i @ p.W_i + da_f @ p.W_f + da_g @ p.W_g + da_o @ p.W_o
    dh_prev = da_i @ p.U_i + da_f @ p.U_f + da_g @ p.U_g + da_o @ p.U_o
    return dx, dh_prev, dc_prev, grads


def lstm_step_backward(ctx: LayerContext, grad_h: Tensor, grad_c: Tensor):
    """Gradients of one step wrt input, previous state, and all parameters."""
    cache = ctx.take(grad_h)
    return _lstm_step_grads(cache, grad_h, grad_c)


def lstm_sequence_forward(xs: Tensor, h0: Tensor, c0: Tensor, p: LstmParams):
    """Iterate lstm_step over xs [batch, T, input_dim]; returns all hiddens."""
    if xs.ndim != 3:
        raise DimensionError(f"lstm_sequence: expected rank-3 input, got {xs.shape}")
    batch, T, _ = xs.shape
    h, c = h0, c0
    hs = np.zeros((batch, T, p.hidden))
    steps = []
    for t in range(T):
        h, c, step_ctx = lstm_step(xs[:, t, :], h, c, p)
        hs[:, t, :] = h
        steps.append(step_ctx)
    ctx = LayerContext("lstm_sequence", hs.shape, {"steps": steps, "p": p})
    return hs, h, c, ctx


def lstm_sequence_backward(ctx: LayerContext, grad_hs: Tensor, grad_hT=None, grad_cT=None):
    """Full backpropagation through time; parameter grads summed over steps."""
    c = ctx.take(grad_hs)
    steps, p = c["steps"], c["p"]
    batch, T, hidden = grad_hs.shape
    dh = np.zeros((batch, hidden)) if grad_hT is None else grad_hT.copy()
    dc = np.zeros((batch, hidden)) if grad_cT is None else grad_cT.copy()
    grad_xs = np.zeros((batch, T, p.input_dim))
    acc = {k: 0.0 for k in (
        "W_i", "W_f", "W_g", "W_o", "U_i", "U_f", "U_g", "U_o",
        "b_i", "b_f", "b_g", "b_o",
    )}
    for t in range(T - 1, -1, -1):
        dh = dh + grad_hs[:, t, :]
        dx, dh, dc, grads = _lstm_step_grads(steps[t].take(grad_hs[:, t, :]), dh, dc)
        grad_xs[:, t, :] = dx
        for k, v in grads.items():
            acc[k] = acc[k] + v
    return grad_xs, dh, dc, acc


def dropout(x: Tensor, rate: float, mode: str, rng: RngStream | None = None):
    """Inverted dropout; identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        out = x.copy()
        return out, LayerContext("dropout", out.shape, {"mask": None})
    if rng is None:
        raise ContractError("train-mode dropout needs an RngStream")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    out = x * mask
    return out, LayerContext("dropout", out.shape, {"mask": mask})


def dropout_backward(ctx: LayerContext, grad_out: Tensor) -> Tensor:
    c = ctx.take(grad_out)
    if c["mask"] is None:
        return grad_out.copy()
    return grad_out * c["mask"]


def dense_forward(x: Tensor, W: Tensor, b: Tensor):
    """Affine map x W^T + b; x: [batch, in], W: [out, in]."""
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise DimensionError(f"dense: input {x.shape} vs weight {W.shape}")
    out = x @ W.T + b
    return out, LayerContext("dense", out.shape, {"x": x, "W": W})


def dense_backward(ctx: LayerContext, grad_out: Tensor):
    c = ctx.take(grad_out)
    grad_x = grad_out @ c["W"]
    grad_W = grad_out.T @ c["x"]
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_W, grad_b


@dataclass
class RnnParams:
    """One vanilla tanh recurrence layer: h_t = tanh(x W^T + h_prev U^T + b)."""

    W: Tensor  # [hidden, input_dim]
    U: Tensor  # [hidden, hidden]
    b: Tensor  # [hidden]

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


def rnn_sequence_forward(xs: Tensor, h0: Tensor, p: RnnParams):
    if xs.ndim != 3 or xs.shape[2] != p.input_dim:
        raise DimensionError(f"rnn_sequence: input {xs.shape} vs input_dim {p.input_dim}")
    batch, T, _ = xs.shape
    h = h0
    hs = np.zeros((batch, T, p.hidden))
    h_prevs = []
    for t in range(T):
        h_prevs.append(h)
        h = np.tanh(xs[:, t, :] @ p.W.T + h @ p.U.T + p.b)
        hs[:, t, :] = h
    ctx = LayerContext("rnn_sequence", hs.shape, {"xs": xs, "hs": hs, "h_prevs": h_prevs, "p": p})
    return hs, h, ctx


def rnn_sequence_backward(ctx: LayerContext, grad_hs: Tensor, grad_hT=None):
    c = ctx.take(grad_hs)
    xs, hs, h_prevs, p = c["xs"], c["hs"], c["h_prevs"], c["p"]
    batch, T, hidden = grad_hs.shape
    dh = np.zeros((batch, hidden)) if grad_hT is None else grad_hT.copy()
    grad_xs = np.zeros_like(xs)
    gW = np.zeros_like(p.W)
    gU = np.zeros_like(p.U)
    gb = np.zeros_like(p.b)
    for t in range(T - 1, -1, -1):
        dh = dh + grad_hs[:, t, :]
        da = dh * (1.0 - hs[:, t, :] ** 2)
        gW += da.T @ xs[:, t, :]
        gU += da.T @ h_prevs[t]
        gb += da.sum(axis=0)
        grad_xs[:, t, :] = da @ p.W
        dh = da @ p.U
    return grad_xs, dh, {"W": gW, "U": gU, "b": gb}
