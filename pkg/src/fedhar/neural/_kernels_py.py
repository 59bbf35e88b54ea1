"""Pure numpy implementation of the MLP kernels.

Used when the compiled ``_kernels`` extension is unavailable, or when
``FEDHAR_BACKEND=python`` is set.  Both backends expose the same two
functions and must agree to rounding error.

Parameter layout: for every layer ``l`` the weight matrix ``W_l`` of shape
``(fan_in, fan_out)`` in row-major order, followed by its bias ``b_l``.
"""

import numpy as np

LOG_FLOOR = 1e-12


def _unpack(params, sizes):
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def forward_probs(params, sizes, x, slope):
    a = x
    layers = _unpack(params, sizes)
    for w, b in layers[:-1]:
        z = a @ w + b
        a = np.where(z > 0.0, z, slope * z)
    w, b = layers[-1]
    return _softmax_rows(a @ w + b)


def loss_and_grad(params, sizes, x, y, slope):
    """Mean cross-entropy and its gradient w.r.t. the flat parameters."""
    layers = _unpack(params, sizes)
    n = x.shape[0]
    acts = [x]
    pre = []
    a = x
    for w, b in layers[:-1]:
        z = a @ w + b
        pre.append(z)
        a = np.where(z > 0.0, z, slope * z)
        acts.append(a)
    w, b = layers[-1]
    probs = _softmax_rows(a @ w + b)

    rows = np.arange(n)
    loss = float(-np.log(np.maximum(probs[rows, y], LOG_FLOOR)).sum() / n)

    grad = np.empty_like(params)
    dz = probs
    dz[rows, y] -= 1.0
    dz /= n
    # walk layers backwards, filling grad from the tail
    end = params.size
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        fan_in, fan_out = w.shape
        grad[end - fan_out:end] = dz.sum(axis=0)
        end -= fan_out
        grad[end - fan_in * fan_out:end] = (acts[l].T @ dz).ravel()
        end -= fan_in * fan_out
        if l > 0:
            da = dz @ w.T
            dz = np.where(pre[l - 1] > 0.0, da, slope * da)
    return loss, grad
