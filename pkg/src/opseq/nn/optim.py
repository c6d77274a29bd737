import numpy as np

from ..errors import NonFiniteGradient

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_update(state, grads, lr=0.001, beta1=BETA1, beta2=BETA2, eps=EPS):
    """In-place Adam step with bias correction for every parameter in
    ``grads``. Each parameter keeps its own step counter."""
    for name, g in grads.items():
        if name not in state.params:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    for name, g in grads.items():
        if name not in state.params:
            continue
        p = state.params[name]
        g = g.astype(p.dtype, copy=False)
        t = state.step[name] + 1
        state.step[name] = t
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
