"""Forward/backward primitives for the CNN-LSTM.

Every array carries a leading batch axis: images are ``(N, C, H, W)`` and
sequences ``(N, T, features)``. Single-sample inputs without the batch axis
are accepted by the convolution and pooling entry points.

Forward functions return ``(output, cache)``; the matching ``*_backward``
takes that cache and the upstream gradient.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InputTooSmall, LabelOutOfRange, ShapeMismatch

ELU_ALPHA = 1.0


# -- convolution ---------------------------------------------------------------

def _im2col(xp, k, H, W):
    """Patch matrix of a padded batch: rows (n, i, j), columns (c, u, v)."""
    N, C = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, C, H, W, k, k)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * k * k)


def conv2d_forward(x, w, b):
    """Stride-1 convolution with 'same' zero padding of ``(k - 1) / 2``.

    ``out[n, f, i, j] = b[f] + sum_{c,u,v} x[n, c, i+u-p, j+v-p] * w[f, c, u, v]``
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-D input and weights, got {x.shape}, {w.shape}")
    F, C, k, k2 = w.shape
    if x.shape[1] != C or k != k2 or k % 2 == 0 or b.shape != (F,):
        raise ShapeMismatch(
            f"conv2d: input {x.shape}, weights {w.shape}, bias {b.shape} are incompatible")
    N, _, H, W = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k, H, W)
    out = (cols @ w.reshape(F, -1).T).reshape(N, H, W, F).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out) + b[None, :, None, None]
    return (out[0] if single else out), (cols, w, x.shape, single)


def conv2d_backward(cache, grad_out, need_input_grad=True):
    """Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is
    ``None`` when ``need_input_grad`` is false."""
    cols, w, x_shape, single = cache
    if single:
        grad_out = grad_out[None]
    F, C, k, _ = w.shape
    N, _, H, W = x_shape
    if grad_out.shape != (N, F, H, W):
        raise ShapeMismatch(f"conv2d_backward: grad shape {grad_out.shape} does not match forward")
    p = (k - 1) // 2
    grad_b = grad_out.sum(axis=(0, 2, 3))
    g_rows = grad_out.transpose(0, 2, 3, 1).reshape(N * H * W, F)
    grad_w = (g_rows.T @ cols).reshape(F, C, k, k)
    grad_x = None
    if need_input_grad:
        # full correlation of the output gradient with the flipped kernel
        gp = np.pad(grad_out, ((0, 0), (0, 0), (p, p), (p, p)))
        w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
        grad_x = (_im2col(gp, k, H, W) @ w_flip.T).reshape(N, H, W, C).transpose(0, 3, 1, 2)
        grad_x = np.ascontiguousarray(grad_x)
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


# -- activations -----------------------------------------------------------------

def elu(x):
    return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0)))


def elu_backward(x, out, grad_out):
    return grad_out * np.where(x > 0, 1.0, out + ELU_ALPHA)


def sigmoid(x):
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# -- max pooling ------------------------------------------------------------------

def maxpool_forward(x, kernel=3):
    """Non-overlapping ``kernel x kernel`` max pooling (stride = kernel).

    Trailing rows/columns that do not fill a window are dropped. Ties resolve
    to the first position in row-major window order.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    N, C, H, W = x.shape
    if H < kernel or W < kernel:
        raise InputTooSmall(f"max pooling needs a spatial side >= {kernel}, got {H}x{W}")
    Ho, Wo = H // kernel, W // kernel
    win = (x[:, :, :Ho * kernel, :Wo * kernel]
           .reshape(N, C, Ho, kernel, Wo, kernel)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(N, C, Ho, Wo, kernel * kernel))
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    cache = (arg, x.shape, kernel, single)
    return (out[0] if single else out), cache


def maxpool_backward(cache, grad_out):
    arg, shape, kernel, single = cache
    if single:
        grad_out = grad_out[None]
    N, C, H, W = shape
    Ho, Wo = arg.shape[2:]
    win = np.zeros((N, C, Ho, Wo, kernel * kernel), dtype=grad_out.dtype)
    np.put_along_axis(win, arg[..., None], grad_out[..., None], axis=-1)
    grad = np.zeros(shape, dtype=grad_out.dtype)
    grad[:, :, :Ho * kernel, :Wo * kernel] = (
        win.reshape(N, C, Ho, Wo, kernel, kernel)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(N, C, Ho * kernel, Wo * kernel))
    return grad[0] if single else grad


def pooled_side(side, kernel=3):
    return side // kernel


# -- flatten to sequence ----------------------------------------------------------

def flatten_to_sequence(fmap, window):
    """Spatial positions (row-major) become timesteps, channels become the
    per-step features; only the first ``window`` timesteps are kept."""
    N, C, H, W = fmap.shape
    seq = fmap.transpose(0, 2, 3, 1).reshape(N, H * W, C)
    return np.ascontiguousarray(seq[:, :window]), fmap.shape


def flatten_to_sequence_backward(shape, grad_seq):
    N, C, H, W = shape
    full = np.zeros((N, H * W, C), dtype=grad_seq.dtype)
    full[:, :grad_seq.shape[1]] = grad_seq
    return full.reshape(N, H, W, C).transpose(0, 3, 1, 2)


# -- LSTM ----------------------------------------------------------------------------
# Gate blocks along the last axis of W (in, 4H), U (H, 4H), b (4H): i, f, o, g.

def lstm_step(x, h_prev, c_prev, W, U, b):
    """One LSTM cell step; returns ``(h, c, gates)`` where ``gates`` is
    ``(i, f, o, g, tanh(c))`` for the backward pass."""
    Hd = h_prev.shape[-1]
    if W.shape != (x.shape[-1], 4 * Hd) or U.shape != (Hd, 4 * Hd) or b.shape != (4 * Hd,):
        raise ShapeMismatch(
            f"lstm_step: x {x.shape}, h {h_prev.shape}, W {W.shape}, U {U.shape}, b {b.shape}")
    z = x @ W + h_prev @ U + b
    i = sigmoid(z[..., :Hd])
    f = sigmoid(z[..., Hd:2 * Hd])
    o = sigmoid(z[..., 2 * Hd:3 * Hd])
    g = np.tanh(z[..., 3 * Hd:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, o, g, tc)


def lstm_layer_forward(seq, W, U, b, h0=None, c0=None):
    """Run one LSTM layer over ``seq (N, T, in)``; returns hidden states
    ``(N, T, H)`` and the cache for BPTT."""
    N, T, _ = seq.shape
    Hd = U.shape[0]
    h = np.zeros((N, Hd), dtype=seq.dtype) if h0 is None else h0
    c = np.zeros((N, Hd), dtype=seq.dtype) if c0 is None else c0
    hs = np.zeros((N, T, Hd), dtype=seq.dtype)
    steps = []
    for t in range(T):
        h_prev, c_prev = h, c
        h, c, gates = lstm_step(seq[:, t], h_prev, c_prev, W, U, b)
        hs[:, t] = h
        steps.append((h_prev, c_prev, gates))
    return hs, (seq, W, U, steps)


def lstm_layer_backward(cache, grad_hs, grad_h_last=None, grad_c_last=None):
    """BPTT through one layer. ``grad_hs`` is the loss gradient w.r.t. every
    emitted hidden state. Returns ``(grad_seq, grad_W, grad_U, grad_b,
    grad_h0, grad_c0)``."""
    seq, W, U, steps = cache
    N, T, _ = seq.shape
    Hd = U.shape[0]
    grad_seq = np.zeros_like(seq)
    gW, gU = np.zeros_like(W), np.zeros_like(U)
    gb = np.zeros(4 * Hd, dtype=W.dtype)
    dh_next = np.zeros((N, Hd), dtype=seq.dtype) if grad_h_last is None else grad_h_last
    dc_next = np.zeros((N, Hd), dtype=seq.dtype) if grad_c_last is None else grad_c_last
    for t in reversed(range(T)):
        h_prev, c_prev, (i, f, o, g, tc) = steps[t]
        dh = grad_hs[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                             do * o * (1.0 - o), dg * (1.0 - g * g)], axis=-1)
        gW += seq[:, t].T @ dz
        gU += h_prev.T @ dz
        gb += dz.sum(axis=0)
        grad_seq[:, t] = dz @ W.T
        dh_next = dz @ U.T
        dc_next = dc * f
    return grad_seq, gW, gU, gb, dh_next, dc_next


# -- dropout ---------------------------------------------------------------------------

def dropout_mask(shape, rate, rng, dtype=np.float64):
    """Inverted-dropout mask: kept entries scaled by ``1 / (1 - rate)``."""
    keep = 1.0 - rate
    return ((rng.random(shape) < keep) / keep).astype(dtype)


# -- dense + loss -----------------------------------------------------------------------

def dense_forward(x, W, b):
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeMismatch(f"dense: input {x.shape}, weights {W.shape}, bias {b.shape}")
    return x @ W + b


def dense_backward(x, W, grad_out):
    return grad_out @ W.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Accepts a single ``logits[K]`` with an integer label, or a batch
    ``logits[N, K]`` with ``labels[N]``. Returns ``(loss, grad_logits)``.
    """
    single = np.ndim(logits) == 1
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    N, K = logits.shape
    if labels.shape != (N,):
        raise ShapeMismatch(f"{N} logit rows but labels of shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= K):
        raise LabelOutOfRange(f"labels must lie in [0, {K}), got {labels.tolist()}")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_norm[:, None]
    rows = np.arange(N)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    grad /= N
    return float(loss), (grad[0] if single else grad)
