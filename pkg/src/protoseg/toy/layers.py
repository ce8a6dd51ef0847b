"""Single-image layer primitives with explicit backward passes.

Activations are ``(channels, height, width)`` float64 arrays.  Convolutions
are stride 1 with zero "same" padding, lowered to one matrix product via an
im2col buffer that the backward pass reuses.
"""

import numpy as np


def im2col(x, kh, kw):
    c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    if kh == 1 and kw == 1:
        return x.reshape(c, h * w)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((c, kh, kw, h, w))
    for dy in range(kh):
        for dx in range(kw):
            cols[:, dy, dx] = xp[:, dy:dy + h, dx:dx + w]
    return cols.reshape(c * kh * kw, h * w)


def col2im(cols, shape, kh, kw):
    c, h, w = shape
    if kh == 1 and kw == 1:
        return cols.reshape(c, h, w)
    ph, pw = kh // 2, kw // 2
    cols = cols.reshape(c, kh, kw, h, w)
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    for dy in range(kh):
        for dx in range(kw):
            xp[:, dy:dy + h, dx:dx + w] += cols[:, dy, dx]
    return xp[:, ph:ph + h, pw:pw + w]


def conv_forward(x, weight, bias):
    o, c, kh, kw = weight.shape
    if x.shape[0] != c:
        raise ValueError(f"conv expects {c} input channels, got {x.shape[0]}")
    cols = im2col(x, kh, kw)
    out = weight.reshape(o, -1) @ cols + bias[:, None]
    return out.reshape(o, x.shape[1], x.shape[2]), cols


def conv_backward(dout, x_shape, cols, weight):
    """Return ``(dx, dweight, dbias)``."""
    o, c, kh, kw = weight.shape
    d2 = dout.reshape(o, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1)
    dx = col2im(weight.reshape(o, -1).T @ d2, x_shape, kh, kw)
    return dx, dweight, dbias


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return np.where(x > 0, dout, 0.0)


def avgpool2_forward(x):
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 pooling needs even dimensions, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def avgpool2_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) * 0.25


def sigmoid(x):
    # exact branch split keeps exp() from overflowing for large |x|
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
