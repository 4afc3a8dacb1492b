"""Forward/backward pairs for the closed layer set.

Tensors are plain numpy arrays, NCHW for feature maps and (N, D) for
vectors. Every op computes in the dtype of its input so the same code runs
in float32 for training and float64 for gradient checking. Forward functions
return ``(out, cache)``; backward functions take the cache and the upstream
gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """(N*Ho*Wo, k*k*C) patch matrix, columns ordered (u, v, c)."""
    n, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((n, ho, wo, k, k * c), dtype=x.dtype)
    sn, sh, sw, sc = xp.strides
    for u in range(k):
        # for one kernel row the k taps x C channels are contiguous in NHWC memory
        rows = as_strided(xp[:, u:], shape=(n, ho, wo, k * c), strides=(sn, stride * sh, stride * sw, sc),
                          writeable=False)
        cols[:, :, :, u, :] = rows
    return cols.reshape(n * ho * wo, k * k * c), ho, wo


def conv2d(x: np.ndarray, k: np.ndarray, b: np.ndarray | None = None, stride: int = 1, pad: int = 0):
    """Cross-correlation with zero padding; ``k`` is (Cout, Cin, kh, kw), square kernels only."""
    if x.ndim != 4 or k.ndim != 4:
        raise ValueError("conv2d expects (N, C, H, W) input and (Cout, Cin, k, k) kernel")
    n, c, h, w = x.shape
    cout, cin, kh, kw = k.shape
    if cin != c or kh != kw:
        raise ValueError(f"kernel {k.shape} does not fit input {x.shape}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ValueError("kernel larger than padded input")
    k = k.astype(x.dtype, copy=False)
    cols, ho, wo = _im2col(x, kh, stride, pad)
    wmat = k.transpose(2, 3, 1, 0).reshape(kh * kw * c, cout)
    out = cols @ wmat
    if b is not None:
        out += b.astype(x.dtype, copy=False)
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    return out, (x.shape, cols, k, wmat, stride, pad, ho, wo)


def conv2d_backward(dout: np.ndarray, cache, input_grad: bool = True):
    """Returns (dx, dk, db); dx is None when ``input_grad`` is false."""
    (n, c, h, w), cols, k, wmat, stride, pad, ho, wo = cache
    cout, _, ks, _ = k.shape
    d = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout).astype(cols.dtype, copy=False)
    dk = (cols.T @ d).reshape(ks, ks, c, cout).transpose(3, 2, 0, 1)
    db = d.sum(axis=0)
    if not input_grad:
        return None, dk, db
    if stride == 1 and 2 * pad == ks - 1:
        # "same" convolution: the input gradient is a convolution with the flipped kernel
        flipped = k.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
        dx, _ = conv2d(dout.astype(cols.dtype, copy=False), flipped, None, 1, pad)
        return dx, dk, db
    dcols = (d @ wmat.T).reshape(n, ho, wo, ks, ks, c)
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for u in range(ks):
        for v in range(ks):
            dxp[:, u:u + stride * (ho - 1) + 1:stride, v:v + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, u, v, :]
    dx = dxp[:, pad:pad + h, pad:pad + w, :].transpose(0, 3, 1, 2)
    return dx, dk, db


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

def _channels_last(x: np.ndarray) -> np.ndarray:
    """(M, C) view of a feature map; free when the map is backed by NHWC memory."""
    if x.ndim == 2:
        return x
    return x.transpose(0, 2, 3, 1).reshape(-1, x.shape[1])


def _like(flat: np.ndarray, ref_shape: tuple) -> np.ndarray:
    if len(ref_shape) == 2:
        return flat
    n, c, h, w = ref_shape
    return flat.reshape(n, h, w, c).transpose(0, 3, 1, 2)


def batch_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, running_mean: np.ndarray,
               running_var: np.ndarray, train: bool, eps: float = 1e-5, momentum: float = 0.9):
    """Per-channel normalization over (N, H, W), or over N for 2-D input.

    In training mode the running statistics are updated in place:
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    dt = x.dtype
    x2 = _channels_last(x)
    if train:
        if x.shape[0] < 2:
            raise ValueError("batch norm in training mode needs a batch of at least 2")
        m = x2.shape[0]
        mean = x2.mean(axis=0, dtype=np.float64)
        centered = x2 - mean.astype(dt)
        var = np.einsum("ij,ij->j", centered, centered, dtype=np.float64) / m
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var * m / max(m - 1, 1)
    else:
        mean, var = running_mean.astype(np.float64), running_var.astype(np.float64)
        centered = x2 - mean.astype(dt)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = centered
    xhat *= inv_std
    out = xhat * gamma.astype(dt) + beta.astype(dt)
    return _like(out, x.shape), (xhat, inv_std, gamma.astype(dt), x.shape, train)


def batch_norm_backward(dout: np.ndarray, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma, shape, train = cache
    d2 = _channels_last(dout).astype(xhat.dtype, copy=False)
    dbeta = d2.sum(axis=0, dtype=np.float64)
    dgamma = np.einsum("ij,ij->j", d2, xhat, dtype=np.float64)
    scale = (gamma * inv_std).astype(np.float64)
    if not train:
        return _like(d2 * scale.astype(xhat.dtype), shape), dgamma.astype(xhat.dtype), dbeta.astype(xhat.dtype)
    m = d2.shape[0]
    dx = d2 * scale.astype(xhat.dtype)
    dx -= xhat * (scale * dgamma / m).astype(xhat.dtype)
    dx -= (scale * dbeta / m).astype(xhat.dtype)
    return _like(dx, shape), dgamma.astype(xhat.dtype), dbeta.astype(xhat.dtype)


# ---------------------------------------------------------------------------
# activations, pooling
# ---------------------------------------------------------------------------

def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def max_pool(x: np.ndarray, window: int = 2, stride: int = 2):
    """Non-overlapping max pooling (window == stride); ties go to the first index."""
    if window != stride:
        raise ValueError("max_pool supports window == stride only")
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ValueError(f"spatial size {h}x{w} not divisible by {window}")
    ho, wo = h // window, w // window
    xt = x.transpose(0, 2, 3, 1)
    tiles = xt.reshape(n, ho, window, wo, window, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, -1)
    arg = tiles.argmax(axis=-1)
    out = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]
    return out.transpose(0, 3, 1, 2), (x.shape, arg, window)


def max_pool_backward(dout: np.ndarray, cache) -> np.ndarray:
    (n, c, h, w), arg, window = cache
    ho, wo = h // window, w // window
    tiles = np.zeros((n, ho, wo, c, window * window), dtype=dout.dtype)
    np.put_along_axis(tiles, arg[..., None], dout.transpose(0, 2, 3, 1)[..., None], axis=-1)
    dx = tiles.reshape(n, ho, wo, c, window, window).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
    return dx.transpose(0, 3, 1, 2)


def avg_pool(x: np.ndarray, window: int = 3, stride: int = 2, pad: int = 1):
    """Window mean; padded positions are excluded from the divisor."""
    n, c, h, w = x.shape
    ho, wo = _out_size(h, window, stride, pad), _out_size(w, window, stride, pad)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    ones = np.zeros((h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    ones[pad:pad + h, pad:pad + w] = 1
    total = np.zeros((n, c, ho, wo), dtype=x.dtype)
    count = np.zeros((ho, wo), dtype=x.dtype)
    for u in range(window):
        for v in range(window):
            sl = (slice(u, u + stride * (ho - 1) + 1, stride), slice(v, v + stride * (wo - 1) + 1, stride))
            total += xp[(slice(None), slice(None)) + sl]
            count += ones[sl]
    return total / count, (x.shape, count, window, stride, pad)


def avg_pool_backward(dout: np.ndarray, cache) -> np.ndarray:
    (n, c, h, w), count, window, stride, pad = cache
    ho, wo = count.shape
    g = dout / count
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for u in range(window):
        for v in range(window):
            dxp[:, :, u:u + stride * (ho - 1) + 1:stride, v:v + stride * (wo - 1) + 1:stride] += g
    return dxp[:, :, pad:pad + h, pad:pad + w]


def global_avg_pool(x: np.ndarray):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dout: np.ndarray, shape) -> np.ndarray:
    n, c, h, w = shape
    return np.broadcast_to((dout / (h * w))[:, :, None, None], shape).copy()


# ---------------------------------------------------------------------------
# dense, dropout, loss
# ---------------------------------------------------------------------------

def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None):
    """``x @ w.T + b`` with ``w`` of shape (Dout, Din)."""
    out = x @ w.astype(x.dtype, copy=False).T
    if b is not None:
        out = out + b.astype(x.dtype, copy=False)
    return out, (x, w.astype(x.dtype, copy=False))


def dense_backward(dout: np.ndarray, cache):
    """Returns (dx, dw, db)."""
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def dropout(x: np.ndarray, p: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout: survivors are scaled by 1 / (1 - p); identity in eval mode."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0:
        return x, None
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask) -> np.ndarray:
    return dout if mask is None else dout * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or np.any((labels < 0) | (labels >= k)):
        raise ValueError(f"labels must be integers in [0, {k})")
    labels = labels.astype(np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_z
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n
