"""MSE training loop with Adam, stateful-LSTM handling, and serialization.

Statefulness convention: recurrent kinds iterate batches in chronological
order, carry their (h, c) state between batches within an epoch (detached,
so gradients never flow across batch boundaries), and reset state at the
start of every epoch. Stateless kinds may shuffle.

Model files: binary container `magic | version | header-json | params | crc32`
with every parameter stored as (name, rank, dims, row-major float64 little-
endian values). The CRC32 covers everything between the magic and the
trailing checksum.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import WindowedDataset, eval_batches
from .errors import (
    ConfigError,
    CorruptModelError,
    DivergedTrainingError,
)
from .models import STATEFUL_KINDS, Model, ModelSpec, backward, forward
from .optim import adam_step, clip_gradients, mse_loss
from .tensor import RngStream


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle: bool | None = None  # None: decided by model kind
    gradient_clip_norm: float | None = 5.0

    def validate(self, n_train: int, kind: str):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.batch_size > n_train:
            raise ConfigError(
                f"batch_size {self.batch_size} must be in [1, {n_train}] "
                f"(training-set size)"
            )
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def effective_shuffle(self, kind: str) -> bool:
        if kind in STATEFUL_KINDS:
            return False  # chronological order is semantically required
        return True if self.shuffle is None else self.shuffle


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # (train_mse, val_mse) per epoch

    def append(self, train_mse: float, val_mse: float):
        self.epochs.append((train_mse, val_mse))

    def __len__(self):
        return len(self.epochs)

    def final_train_mse(self) -> float:
        return self.epochs[-1][0] if self.epochs else math.nan

    def to_csv(self) -> str:
        lines = ["epoch,train_mse,val_mse"]
        for i, (tr, va) in enumerate(self.epochs, start=1):
            lines.append(f"{i},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


def _batches(n: int, batch_size: int, order):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _epoch_val_mse(m: Model, val_set) -> float:
    """Validation MSE matching evaluation semantics: reset once, then carry
    state quarter to quarter (one batch per target quarter)."""
    if val_set is None or len(val_set) == 0:
        return math.nan
    saved_state = dict(m.state)
    m.reset_states()
    se = 0.0
    for idx in eval_batches(val_set):
        y_hat, _ = forward(m, val_set.x[idx], "infer")
        se += float(np.sum((y_hat[:, 0] - val_set.y[idx, 0]) ** 2))
    m.state = saved_state
    return se / len(val_set)


def train(m: Model, train_set: WindowedDataset, val_set: WindowedDataset | None,
          cfg: TrainConfig) -> TrainHistory:
    """Run the full training loop; deterministic given (seed, data, config)."""
    cfg.validate(len(train_set), m.spec.kind)
    rng = RngStream(cfg.seed)
    dropout_rng = rng.split()
    shuffle_rng = rng.split()
    shuffle = cfg.effective_shuffle(m.spec.kind)
    params = list(m.params.values())
    history = TrainHistory()
    n = len(train_set)
    for epoch in range(cfg.epochs):
        m.reset_states()
        order = shuffle_rng.permutation(n) if shuffle else np.arange(n)
        se_sum = 0.0
        for idx in _batches(n, cfg.batch_size, order):
            xb = train_set.x[idx]
            yb = train_set.y[idx]
            if m.spec.kind in STATEFUL_KINDS and m.state:
                # final partial batch: state batch dim no longer matches
                if next(iter(m.state.values()))[0].shape[0] != xb.shape[0]:
                    m.reset_states()
            y_hat, ctxs = forward(m, xb, "train", dropout_rng)
            loss, grad_y = mse_loss(y_hat, yb)
            if not math.isfinite(loss):
                raise DivergedTrainingError(epoch + 1)
            se_sum += loss * xb.shape[0]
            backward(m, ctxs, grad_y)
            clip_gradients(params, cfg.gradient_clip_norm)
            for p in params:
                adam_step(p, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                          cfg.adam_eps)
        history.append(se_sum / n, _epoch_val_mse(m, val_set))
    return history


MAGIC = b"SALESCASTMDL"
FORMAT_VERSION = 1


def _pack_params(m: Model) -> bytes:
    out = [struct.pack("<I", len(m.params))]
    for name, p in m.params.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(p.value, dtype="<f8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def save_model(m: Model, path):
    header = {
        "spec": m.spec.to_dict(),
        "buffers": {k: list(v) for k, v in m.buffers.items()},
        "meta": m.meta,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = struct.pack("<I", FORMAT_VERSION)
    payload += struct.pack("<I", len(hb)) + hb
    payload += _pack_params(m)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC + payload + struct.pack("<I", crc))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptModelError("model file truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))[0]


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptModelError(f"{path}: not a salescast model file (bad magic)")
    payload, crc_bytes = blob[len(MAGIC) : -4], blob[-4:]
    if zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise CorruptModelError(f"{path}: checksum mismatch")
    r = _Reader(payload)
    version = r.u("<I")
    if version != FORMAT_VERSION:
        raise CorruptModelError(f"{path}: unsupported format version {version}")
    header = json.loads(r.take(r.u("<I")).decode("utf-8"))
    spec = ModelSpec.from_dict(header["spec"])
    from .models import build  # params rebuilt below; build gives the structure
    m = build(spec, RngStream(0))
    m.meta = header.get("meta")
    for k, v in header.get("buffers", {}).items():
        m.buffers[k] = np.array(v, dtype=np.float64)
    n_params = r.u("<I")
    if n_params != len(m.params):
        raise CorruptModelError(
            f"{path}: expected {len(m.params)} parameters, file has {n_params}"
        )
    from .optim import ParamTensor
    for _ in range(n_params):
        name = r.take(r.u("<H")).decode("utf-8")
        rank = r.u("<B")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = 1
        for d in dims:
            count *= d
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims).copy()
        if name not in m.params or m.params[name].value.shape != arr.shape:
            raise CorruptModelError(f"{path}: unexpected parameter {name} {dims}")
        m.params[name] = ParamTensor(arr)
    if r.pos != len(payload):
        raise CorruptModelError(f"{path}: trailing bytes after parameters")
    m.reset_states()
    return m
