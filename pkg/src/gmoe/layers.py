"""Differentiable building blocks: dense, LSTM, dropout, input standardization.

Every forward returns a cache holding exactly the intermediates its backward
needs; a cache is only valid for the inputs of the forward call that produced
it. All functions accept batched inputs with a leading batch axis.

Conventions:

* LSTM gate order is (input i, forget f, cell g, output o); the packed weight
  matrices have width ``4h`` with the gates occupying consecutive ``h``-wide
  slices in that order. The forget-gate bias slice is initialized to 1.0.
* Dropout is inverted: surviving activations are scaled by ``1/(1-rate)`` at
  train time so evaluation is the exact identity.
* Weight init is uniform in ``+-sqrt(6/(fan_in+fan_out))`` for all matrices
  (recurrent ones included); biases start at zero except the forget gate.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, matmul, sigmoid, tanh


STD_FLOOR = 1e-8


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform((fan_in, fan_out)) * 2.0 - 1.0) * limit


# -----------------------------------------------------------------------------
# Dense
# -----------------------------------------------------------------------------

@dataclass
class DenseParams:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray    # (out,)

    @classmethod
    def init(cls, rng, n_in, n_out):
        return cls(weight=glorot_uniform(rng, n_in, n_out), bias=np.zeros(n_out))


@dataclass
class DenseCache:
    x: np.ndarray


def dense_forward(p, x):
    """y = x W + b with the bias broadcast across rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.weight.shape[0]:
        raise ShapeError(
            f"dense expects (batch, {p.weight.shape[0]}), got {x.shape}")
    return matmul(x, p.weight) + p.bias, DenseCache(x=x)


def dense_backward(p, cache, upstream):
    """Gradients of x W + b: (grad_x, grad_w, grad_b)."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cache.x.shape[0], p.weight.shape[1]):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match forward "
            f"({cache.x.shape[0]}, {p.weight.shape[1]})")
    grad_w = matmul(cache.x.T, upstream)
    grad_b = upstream.sum(axis=0)
    grad_x = matmul(upstream, p.weight.T)
    return grad_x, grad_w, grad_b


# -----------------------------------------------------------------------------
# LSTM
# -----------------------------------------------------------------------------

@dataclass
class LstmParams:
    wx: np.ndarray    # (in, 4h)
    wh: np.ndarray    # (h, 4h)
    bias: np.ndarray  # (4h,)

    @property
    def hidden(self):
        return self.wh.shape[0]

    @classmethod
    def init(cls, rng, n_in, hidden):
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0  # forget gate opens early training
        return cls(
            wx=glorot_uniform(rng, n_in, 4 * hidden),
            wh=glorot_uniform(rng, hidden, 4 * hidden),
            bias=bias,
        )


@dataclass
class LstmCache:
    xs: np.ndarray       # (B, W, in)
    gates_i: np.ndarray  # (B, W, h) post-sigmoid
    gates_f: np.ndarray
    gates_g: np.ndarray  # post-tanh
    gates_o: np.ndarray
    c_prev: np.ndarray   # (B, W, h) cell state entering each step
    h_prev: np.ndarray   # (B, W, h) hidden state entering each step
    tanh_c: np.ndarray   # (B, W, h)


def _lift_seq(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        return xs[None, :, :], True
    if xs.ndim == 3:
        return xs, False
    raise ShapeError(f"LSTM input must be (W, in) or (B, W, in), got {xs.shape}")


def lstm_seq_forward(p, xs, h0=None, c0=None):
    """Run the LSTM recurrence over a window.

    c_t = f . c_{t-1} + i . g,  h_t = o . tanh(c_t)

    Returns (hidden states over all steps, final h, final c, cache). Input is
    (W, in) for a single window or (B, W, in) batched; outputs follow suit.
    Initial state defaults to zeros per window.
    """
    xs, squeeze = _lift_seq(xs)
    B, W, n_in = xs.shape
    h = p.hidden
    if n_in != p.wx.shape[0]:
        raise ShapeError(f"LSTM expects input width {p.wx.shape[0]}, got {n_in}")

    # Input-side projections for every step in one product.
    pre = (matmul(xs.reshape(B * W, n_in), p.wx) + p.bias).reshape(B, W, 4 * h)

    hs = np.empty((B, W, h))
    gi = np.empty((B, W, h)); gf = np.empty((B, W, h))
    gg = np.empty((B, W, h)); go = np.empty((B, W, h))
    cp = np.empty((B, W, h)); hp = np.empty((B, W, h))
    tc = np.empty((B, W, h))

    h_t = np.zeros((B, h)) if h0 is None else np.array(h0, dtype=np.float64)
    c_t = np.zeros((B, h)) if c0 is None else np.array(c0, dtype=np.float64)
    for t in range(W):
        hp[:, t] = h_t
        cp[:, t] = c_t
        z = pre[:, t] + matmul(h_t, p.wh)
        i = sigmoid(z[:, 0 * h:1 * h])
        f = sigmoid(z[:, 1 * h:2 * h])
        g = tanh(z[:, 2 * h:3 * h])
        o = sigmoid(z[:, 3 * h:4 * h])
        c_t = f * c_t + i * g
        tct = np.tanh(c_t)
        h_t = o * tct
        gi[:, t] = i; gf[:, t] = f; gg[:, t] = g; go[:, t] = o
        tc[:, t] = tct
        hs[:, t] = h_t

    cache = LstmCache(xs=xs, gates_i=gi, gates_f=gf, gates_g=gg, gates_o=go,
                      c_prev=cp, h_prev=hp, tanh_c=tc)
    if squeeze:
        return hs[0], h_t[0], c_t[0], cache
    return hs, h_t, c_t, cache


def lstm_seq_backward(p, cache, upstream_h, upstream_h_final=None,
                      upstream_c_final=None):
    """Exact backpropagation through time over the cached window.

    ``upstream_h`` carries gradients for every step's hidden output (zeros
    where unused); optional final-state gradients cover heads that consume
    only the last hidden or cell state. Returns
    ((grad_wx, grad_wh, grad_bias), grad_xs).
    """
    B, W, h = cache.gates_i.shape
    upstream_h = np.asarray(upstream_h, dtype=np.float64)
    if upstream_h.ndim == 2:
        upstream_h = upstream_h[None, :, :]
    if upstream_h.shape != (B, W, h):
        raise ShapeError(
            f"upstream shape {upstream_h.shape} does not match cache {(B, W, h)}")

    dz = np.empty((B, W, 4 * h))
    dh_next = np.zeros((B, h)) if upstream_h_final is None \
        else np.array(upstream_h_final, dtype=np.float64).reshape(B, h)
    dc_next = np.zeros((B, h)) if upstream_c_final is None \
        else np.array(upstream_c_final, dtype=np.float64).reshape(B, h)

    for t in range(W - 1, -1, -1):
        i = cache.gates_i[:, t]; f = cache.gates_f[:, t]
        g = cache.gates_g[:, t]; o = cache.gates_o[:, t]
        tct = cache.tanh_c[:, t]
        dh = upstream_h[:, t] + dh_next
        do = dh * tct
        dc = dc_next + dh * o * (1.0 - tct * tct)
        di = dc * g
        df = dc * cache.c_prev[:, t]
        dg = dc * i
        dz[:, t, 0 * h:1 * h] = di * i * (1.0 - i)
        dz[:, t, 1 * h:2 * h] = df * f * (1.0 - f)
        dz[:, t, 2 * h:3 * h] = dg * (1.0 - g * g)
        dz[:, t, 3 * h:4 * h] = do * o * (1.0 - o)
        dh_next = matmul(dz[:, t], p.wh.T)
        dc_next = dc * f

    n_in = cache.xs.shape[2]
    dz_flat = dz.reshape(B * W, 4 * h)
    grad_wx = matmul(cache.xs.reshape(B * W, n_in).T, dz_flat)
    grad_wh = matmul(cache.h_prev.reshape(B * W, h).T, dz_flat)
    grad_bias = dz_flat.sum(axis=0)
    grad_xs = matmul(dz_flat, p.wx.T).reshape(B, W, n_in)
    return (grad_wx, grad_wh, grad_bias), grad_xs


# -----------------------------------------------------------------------------
# Dropout
# -----------------------------------------------------------------------------

def dropout_forward(x, rate, mode, rng=None):
    """Inverted dropout. Train: zero with probability ``rate``, survivors
    scaled by 1/(1-rate). Eval: exact identity.

    The returned mask already carries the survivor scaling, so backward is
    ``upstream * mask``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.uniform(x.shape) >= rate
    mask = keep.astype(np.float64) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, upstream):
    return np.asarray(upstream, dtype=np.float64) * mask


# -----------------------------------------------------------------------------
# Input standardization
# -----------------------------------------------------------------------------

@dataclass
class Standardizer:
    """Per-feature affine normalization, fitted on the training split only.

    The standard deviation is floored at 1e-8 so constant features map to
    zero instead of dividing by zero. ``apply`` acts on the trailing feature
    axis and is identical at train and inference time.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, width):
        return cls(mean=np.zeros(width), std=np.ones(width))

    @classmethod
    def fit(cls, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise ValueError("standardizer needs at least 2 training rows")
        mean = features.mean(axis=0)
        std = np.maximum(features.std(axis=0), STD_FLOOR)
        return cls(mean=mean, std=std)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def unapply(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean
