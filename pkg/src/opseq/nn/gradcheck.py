"""Finite-difference verification of every analytic gradient.

Each check builds a scalar loss ``sum(output * R)`` with a fixed random ``R``
(or the real cross-entropy for the classifier), perturbs every input and
parameter entry by ``+-h`` and compares the central difference with the
backward pass. The error of one tensor is

    max|analytic - numeric| / max(max|analytic|, max|numeric|)

i.e. the max-norm error relative to that tensor's gradient scale. All checks
run in float64.
"""
from dataclasses import dataclass

import numpy as np

from ..seeding import counter_stream, substream
from . import layers as L
from . import model as M

STEP = 1e-5
TOLERANCE = 1e-5


@dataclass
class CheckResult:
    layer: str
    tensor: str
    error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error < self.tolerance)


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(loss_fn, arr, h=STEP):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``arr``
    (perturbed in place and restored)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        plus = loss_fn()
        arr[idx] = orig - h
        minus = loss_fn()
        arr[idx] = orig
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def check_conv(rng):
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    R = rng.normal(size=(2, 3, 6, 6))

    def loss():
        return float((L.conv2d_forward(x, w, b)[0] * R).sum())

    _, cache = L.conv2d_forward(x, w, b)
    gx, gw, gb = L.conv2d_backward(cache, R)
    return [CheckResult("conv", name, relative_error(a, numeric_grad(loss, arr)))
            for name, a, arr in (("input", gx, x), ("weight", gw, w), ("bias", gb, b))]


def check_elu(rng):
    x = _away_from_zero(rng, (3, 4, 5))
    R = rng.normal(size=x.shape)

    def loss():
        return float((L.elu(x) * R).sum())

    ga = L.elu_backward(x, L.elu(x), R)
    return [CheckResult("elu", "input", relative_error(ga, numeric_grad(loss, x)))]


def check_pool(rng):
    x = rng.normal(size=(2, 2, 7, 7))
    R = rng.normal(size=(2, 2, 2, 2))

    def loss():
        return float((L.maxpool_forward(x)[0] * R).sum())

    _, cache = L.maxpool_forward(x)
    ga = L.maxpool_backward(cache, R)
    return [CheckResult("maxpool", "input", relative_error(ga, numeric_grad(loss, x)))]


def check_flatten(rng):
    out = []
    for window in (5, 50):
        x = rng.normal(size=(2, 3, 3, 3))
        T = min(9, window)
        R = rng.normal(size=(2, T, 3))

        def loss():
            return float((L.flatten_to_sequence(x, window)[0] * R).sum())

        ga = L.flatten_to_sequence_backward(x.shape, R)
        out.append(CheckResult("flatten", f"input(window={window})",
                               relative_error(ga, numeric_grad(loss, x))))
    return out


GATES = ("input_gate", "forget_gate", "output_gate", "cell_candidate")


def check_lstm(rng):
    """Two stacked layers over 4 timesteps; every gate block of W, U, b and
    the initial state are checked separately."""
    N, T, C, Hd = 2, 4, 3, 4
    seq = rng.normal(size=(N, T, C))
    params = [(rng.normal(scale=0.5, size=(C, 4 * Hd)), rng.normal(scale=0.5, size=(Hd, 4 * Hd)),
               rng.normal(scale=0.5, size=4 * Hd)),
              (rng.normal(scale=0.5, size=(Hd, 4 * Hd)), rng.normal(scale=0.5, size=(Hd, 4 * Hd)),
               rng.normal(scale=0.5, size=4 * Hd))]
    h0 = rng.normal(size=(N, Hd))
    c0 = rng.normal(size=(N, Hd))
    R = rng.normal(size=(N, T, Hd))

    def forward():
        hs1, cache1 = L.lstm_layer_forward(seq, *params[0], h0=h0, c0=c0)
        hs2, cache2 = L.lstm_layer_forward(hs1, *params[1])
        return hs2, cache1, cache2

    def loss():
        return float((forward()[0] * R).sum())

    _, cache1, cache2 = forward()
    d1, *g2, _, _ = L.lstm_layer_backward(cache2, R)
    dseq, *g1, dh0, dc0 = L.lstm_layer_backward(cache1, d1)
    results = [CheckResult("lstm", "sequence_input", relative_error(dseq, numeric_grad(loss, seq))),
               CheckResult("lstm", "h0", relative_error(dh0, numeric_grad(loss, h0))),
               CheckResult("lstm", "c0", relative_error(dc0, numeric_grad(loss, c0)))]
    for layer, (grads, arrs) in enumerate(((g1, params[0]), (g2, params[1]))):
        for pname, ga, arr in zip(("W", "U", "b"), grads, arrs):
            num = numeric_grad(loss, arr)
            for k, gate in enumerate(GATES):
                sl = (Ellipsis, slice(k * Hd, (k + 1) * Hd))
                results.append(CheckResult(
                    "lstm", f"layer{layer}.{pname}.{gate}", relative_error(ga[sl], num[sl])))
    return results


def check_dense_softmax(rng):
    x = rng.normal(size=(3, 5))
    W = rng.normal(size=(5, 4))
    b = rng.normal(size=4)
    y = np.array([0, 3, 1])

    def loss():
        return L.softmax_cross_entropy(L.dense_forward(x, W, b), y)[0]

    _, g = L.softmax_cross_entropy(L.dense_forward(x, W, b), y)
    gx, gW, gb = L.dense_backward(x, W, g)
    return [CheckResult("dense+softmax", name, relative_error(a, numeric_grad(loss, arr)))
            for name, a, arr in (("input", gx, x), ("weight", gW, W), ("bias", gb, b))]


NETWORK_CONFIGS = {
    # tiny CNN-LSTM with 3x3 pools: smallest grid that survives three pools
    "pool3_side27": (dict(conv_filters=(2, 2, 2), conv_kernel=3, lstm_hidden=4,
                          lstm_depth=3, dropout=0.3, classes=4, dtype="float64"), 27),
    # 2x2 pools on the 8x8 grid of a 32-term vocabulary
    "pool2_side8": (dict(conv_filters=(2, 2, 2), conv_kernel=3, pool_kernel=2, pool_stride=2,
                         lstm_hidden=4, lstm_depth=3, dropout=0.3, classes=4,
                         dtype="float64"), 8),
}


def check_network(seed, name):
    kwargs, side = NETWORK_CONFIGS[name]
    config = M.ModelConfig(seed=seed, **kwargs)
    state = M.init_state(config)
    rng = substream(seed, "gradcheck", 99)
    # random biases so no pre-activation sits on the ELU kink by construction
    for k, p in state.params.items():
        p += rng.normal(scale=0.1, size=p.shape)
    x = rng.normal(size=(2, 2, side, side))
    y = np.array([1, 3])

    def run():
        # the same dropout masks on every call
        logits, trace = M.classify_forward(x, state, config, training=True,
                                           dropout_rng=counter_stream(seed, "dropout", 0, 0))
        return logits, trace

    def loss():
        return L.softmax_cross_entropy(run()[0], y)[0]

    logits, trace = run()
    _, g = L.softmax_cross_entropy(logits, y)
    grads = M.classify_backward(trace, g, state, config)
    results = [CheckResult(f"network[{name}]", "input", relative_error(grads["input"], numeric_grad(loss, x)))]
    for pname, p in state.params.items():
        results.append(CheckResult(f"network[{name}]", pname,
                                   relative_error(grads[pname], numeric_grad(loss, p))))
    return results


def run_all(seed=0):
    results = []
    for i, check in enumerate((check_conv, check_elu, check_pool, check_flatten,
                               check_lstm, check_dense_softmax)):
        results += check(substream(seed, "gradcheck", i))
    for name in NETWORK_CONFIGS:
        results += check_network(seed, name)
    return results


def worst_by_layer(results):
    worst = {}
    for r in results:
        if r.layer not in worst or not (r.error <= worst[r.layer].error):
            worst[r.layer] = r
    return worst
