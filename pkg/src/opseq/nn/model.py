"""CNN-LSTM classifier: configuration, parameters, forward and backward passes.

Pipeline per sample::

    [conv -> ELU -> maxpool] x len(conv_filters)
    -> flatten to sequence (spatial positions as timesteps)
    -> stacked LSTM (inverted dropout between layers while training)
    -> dense on the top layer's last hidden state -> logits
"""
import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import FormatError, InputTooSmall, MissingFile
from ..seeding import substream
from . import layers as L


@dataclass
class ModelConfig:
    conv_filters: tuple = (32, 64, 128)
    conv_kernel: int = 9
    pool_kernel: int = 3
    pool_stride: int = 3
    lstm_hidden: int = 512
    lstm_depth: int = 3
    dropout: float = 0.3
    window: int = 200
    classes: int = 20
    epochs: int = 200
    batch: int = 64
    lr: float = 0.001
    seed: int = 0
    in_channels: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise ValueError("conv_filters must be a non-empty list of positive ints")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be a positive odd integer")
        if self.pool_stride != self.pool_kernel:
            raise ValueError("only non-overlapping pooling (stride == kernel) is supported")
        if self.lstm_hidden < 1 or self.lstm_depth < 1 or self.window < 1:
            raise ValueError("lstm_hidden, lstm_depth and window must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.classes < 2 or self.batch < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("invalid classes/batch/epochs/lr")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def small(cls, **overrides):
        """Desk-scale preset."""
        base = dict(conv_filters=(4, 8, 8), lstm_hidden=16, epochs=20)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def output_side(self, side):
        """Spatial side after all conv/pool stages; raises if a stage is
        starved."""
        for stage in range(len(self.conv_filters)):
            if side < self.pool_kernel:
                raise InputTooSmall(
                    f"pool stage {stage + 1} receives side {side} < {self.pool_kernel}")
            side //= self.pool_kernel
        return side

    def sequence_length(self, side):
        out = self.output_side(side)
        return min(out * out, self.window)


@dataclass
class ModelState:
    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))
            self.step.setdefault(name, 0)

    def copy(self):
        return ModelState({k: p.copy() for k, p in self.params.items()},
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()},
                          dict(self.step))


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_state(config):
    """Glorot-uniform weights; forget-gate bias 1, other biases 0."""
    rng = substream(config.seed, "init")
    dt = np.dtype(config.dtype)
    k = config.conv_kernel
    params = {}
    c_in = config.in_channels
    for i, f in enumerate(config.conv_filters):
        params[f"conv{i}.weight"] = _glorot(rng, (f, c_in, k, k), c_in * k * k, f * k * k, dt)
        params[f"conv{i}.bias"] = np.zeros(f, dtype=dt)
        c_in = f
    Hd = config.lstm_hidden
    for layer in range(config.lstm_depth):
        n_in = c_in if layer == 0 else Hd
        params[f"lstm{layer}.W"] = _glorot(rng, (n_in, 4 * Hd), n_in, 4 * Hd, dt)
        params[f"lstm{layer}.U"] = _glorot(rng, (Hd, 4 * Hd), Hd, 4 * Hd, dt)
        b = np.zeros(4 * Hd, dtype=dt)
        b[Hd:2 * Hd] = 1.0
        params[f"lstm{layer}.b"] = b
    params["dense.weight"] = _glorot(rng, (Hd, config.classes), Hd, config.classes, dt)
    params["dense.bias"] = np.zeros(config.classes, dtype=dt)
    return ModelState(params)


def classify_forward(x, state, config, training=False, dropout_rng=None):
    """Logits ``(N, K)`` for inputs ``x (N, C, H, W)`` (or ``(K,)`` for a single
    ``(C, H, W)`` input). Returns ``(logits, trace)``; ``trace`` holds what
    :func:`classify_backward` needs."""
    single = x.ndim == 3
    if single:
        x = x[None]
    x = x.astype(config.dtype, copy=False)
    config.output_side(min(x.shape[2], x.shape[3]))
    P = state.params
    trace = {"conv": [], "single": single}
    h = x
    for i in range(len(config.conv_filters)):
        z, conv_cache = L.conv2d_forward(h, P[f"conv{i}.weight"], P[f"conv{i}.bias"])
        a = L.elu(z)
        h, pool_cache = L.maxpool_forward(a, config.pool_kernel)
        trace["conv"].append((conv_cache, z, a, pool_cache))
    seq, fmap_shape = L.flatten_to_sequence(h, config.window)
    trace["fmap_shape"] = fmap_shape
    lstm = []
    for layer in range(config.lstm_depth):
        hs, cache = L.lstm_layer_forward(seq, P[f"lstm{layer}.W"], P[f"lstm{layer}.U"],
                                         P[f"lstm{layer}.b"])
        mask = None
        if training and config.dropout > 0 and layer < config.lstm_depth - 1:
            if dropout_rng is None:
                raise ValueError("training with dropout needs a dropout_rng")
            mask = L.dropout_mask(hs.shape, config.dropout, dropout_rng, hs.dtype)
            hs = hs * mask
        lstm.append((cache, mask))
        seq = hs
    trace["lstm"] = lstm
    last = seq[:, -1]
    trace["last"] = last
    logits = L.dense_forward(last, P["dense.weight"], P["dense.bias"])
    return (logits[0] if single else logits), trace


def classify_backward(trace, grad_logits, state, config, input_grad=True):
    """Gradients of every parameter given ``d loss / d logits``; also the input
    gradient (key ``"input"``) unless ``input_grad`` is false."""
    P = state.params
    if trace["single"]:
        grad_logits = grad_logits[None]
    grads = {}
    d_last, grads["dense.weight"], grads["dense.bias"] = L.dense_backward(
        trace["last"], P["dense.weight"], grad_logits)
    cache_top = trace["lstm"][-1][0]
    N, T = cache_top[0].shape[:2]
    d_seq = np.zeros((N, T, config.lstm_hidden), dtype=d_last.dtype)
    d_seq[:, -1] = d_last
    for layer in reversed(range(config.lstm_depth)):
        cache, mask = trace["lstm"][layer]
        if mask is not None:
            d_seq = d_seq * mask
        d_seq, gW, gU, gb, _, _ = L.lstm_layer_backward(cache, d_seq)
        grads[f"lstm{layer}.W"], grads[f"lstm{layer}.U"], grads[f"lstm{layer}.b"] = gW, gU, gb
    d = L.flatten_to_sequence_backward(trace["fmap_shape"], d_seq)
    for i in reversed(range(len(config.conv_filters))):
        conv_cache, z, a, pool_cache = trace["conv"][i]
        d = L.maxpool_backward(pool_cache, d)
        d = L.elu_backward(z, a, d)
        d, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = L.conv2d_backward(
            conv_cache, d, need_input_grad=input_grad or i > 0)
    if input_grad:
        grads["input"] = d[0] if trace["single"] else d
    return grads


def predict(state, config, x, batch=256):
    preds = []
    for s in range(0, len(x), batch):
        logits, _ = classify_forward(x[s:s + batch], state, config, training=False)
        preds.append(logits.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


# -- checkpoint ------------------------------------------------------------------
# magic OPSM, version u32, u32 len + config JSON, u32 flags (bit 0: Adam state),
# u32 count, count x record; with Adam state: u32 len + JSON step counters,
# then count x m-records and count x v-records.
# record: u16 name length, name, u32 rank, u32 x rank dims, float32 data.

CKPT_MAGIC = b"OPSM"
CKPT_VERSION = 1


def _record(name, arr):
    nb = name.encode("utf-8")
    arr = np.asarray(arr)
    return (struct.pack("<H", len(nb)) + nb + struct.pack("<I", arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape)
            + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _blob(obj):
    b = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(path, state, config, with_moments=False):
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), _blob(config.to_dict()),
             struct.pack("<II", 1 if with_moments else 0, len(state.params))]
    parts += [_record(name, p) for name, p in state.params.items()]
    if with_moments:
        parts.append(_blob({k: int(s) for k, s in state.step.items()}))
        parts += [_record(name, state.m[name]) for name in state.params]
        parts += [_record(name, state.v[name]) for name in state.params]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(state, config)``; parameters come back in ``config.dtype``."""
    try:
        data = open(path, "rb").read()
    except OSError:
        raise MissingFile(f"checkpoint not readable: {path}") from None
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    def blob():
        nonlocal pos
        (n,) = take("<I")
        obj = json.loads(data[pos:pos + n].decode("utf-8"))
        pos += n
        return obj

    def record():
        nonlocal pos
        (n,) = take("<H")
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        return name, arr.astype(config.dtype)

    (version,) = take("<I")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    config = ModelConfig.from_dict(blob())
    flags, count = take("<II")
    params = dict(record() for _ in range(count))
    state = ModelState(params)
    if flags & 1:
        state.step.update(blob())
        state.m.update(dict(record() for _ in range(count)))
        state.v.update(dict(record() for _ in range(count)))
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return state, config
