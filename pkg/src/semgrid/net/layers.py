"""NHWC layer primitives with explicit forward/backward passes.

Each layer keeps whatever its backward pass needs from the latest forward
call. Parameters live in ``params`` and their gradients in ``grads`` under the
same keys.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def same_padding(k: int) -> tuple[int, int]:
    before = (k - 1) // 2
    return before, k - 1 - before


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, H, W, C) -> (B*H*W, k*k*C) patches with 'same' zero padding."""
    b, h, w, c = x.shape
    lo, hi = same_padding(k)
    xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B, H, W, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * h * w, k * k * c)


def col2im(dcols_fn, shape: tuple[int, int, int, int], k: int, dtype) -> np.ndarray:
    """Adjoint of :func:`im2col`, accumulated one kernel offset at a time.

    ``dcols_fn(i, j)`` returns the (B*H*W, C) gradient for offset (i, j).
    """
    b, h, w, c = shape
    lo, _ = same_padding(k)
    xp = np.zeros((b, h + k - 1, w + k - 1, c), dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i : i + h, j : j + w, :] += dcols_fn(i, j).reshape(b, h, w, c)
    return xp[:, lo : lo + h, lo : lo + w, :]


class Conv2D:
    """Stride-1 convolution with 'same' padding; kernel shape (k, k, C_in, C_out)."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, dtype=np.float32):
        self.k, self.c_in, self.c_out = k, c_in, c_out
        bound = np.sqrt(6.0 / (k * k * c_in))
        self.params = {
            "w": rng.uniform(-bound, bound, (k, k, c_in, c_out)).astype(dtype),
            "b": np.zeros(c_out, dtype),
        }
        self.grads = {}
        self.cols = None

    def forward(self, x, train=False):
        self.x_shape = x.shape
        cols = im2col(x, self.k)
        self.cols = cols
        out = cols @ self.params["w"].reshape(-1, self.c_out) + self.params["b"]
        return out.reshape(*x.shape[:3], self.c_out)

    def backward(self, dy):
        dy2 = dy.reshape(-1, self.c_out)
        self.grads["w"] = (self.cols.T @ dy2).reshape(self.params["w"].shape)
        self.grads["b"] = dy2.sum(0)
        self.cols = None
        w = self.params["w"]
        return col2im(lambda i, j: dy2 @ w[i, j].T, self.x_shape, self.k, dy.dtype)


class BatchNorm:
    """Per-channel normalization; batch statistics in training, running ones otherwise."""

    def __init__(self, c: int, dtype=np.float32, momentum: float = 0.9, eps: float = 1e-5):
        self.momentum, self.eps = momentum, eps
        self.params = {"gamma": np.ones(c, dtype), "beta": np.zeros(c, dtype)}
        self.buffers = {"mean": np.zeros(c, dtype), "var": np.ones(c, dtype)}
        self.grads = {}

    def forward(self, x, train=False):
        c = x.shape[-1]
        flat = x.reshape(-1, c)
        if train:
            mean = flat.mean(0)
            var = flat.var(0)
            m = self.momentum
            self.buffers["mean"] = (m * self.buffers["mean"] + (1 - m) * mean).astype(x.dtype)
            self.buffers["var"] = (m * self.buffers["var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.buffers["mean"], self.buffers["var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (flat - mean) * inv
        self.cache = (xhat, inv, train)
        return (xhat * self.params["gamma"] + self.params["beta"]).reshape(x.shape)

    def backward(self, dy):
        xhat, inv, train = self.cache
        c = dy.shape[-1]
        d = dy.reshape(-1, c)
        self.grads["gamma"] = (d * xhat).sum(0)
        self.grads["beta"] = d.sum(0)
        dxhat = d * self.params["gamma"]
        if train:
            n = d.shape[0]
            dx = inv / n * (n * dxhat - dxhat.sum(0) - xhat * (dxhat * xhat).sum(0))
        else:
            dx = dxhat * inv
        self.cache = None
        return dx.reshape(dy.shape)


class ReLU:
    params: dict = {}

    def forward(self, x, train=False):
        self.mask = x > 0
        return x * self.mask

    def backward(self, dy):
        return dy * self.mask


class MaxPool2:
    params: dict = {}

    def forward(self, x, train=False):
        b, h, w, c = x.shape
        blocks = x.reshape(b, h // 2, 2, w // 2, 2, c)
        out = blocks.max(axis=(2, 4))
        # first maximum of each window takes the whole gradient
        flat = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(b, h // 2, w // 2, c, 4)
        self.arg = flat.argmax(-1)
        self.shape = x.shape
        return out

    def backward(self, dy):
        b, h, w, c = self.shape
        onehot = np.eye(4, dtype=dy.dtype)[self.arg] * dy[..., None]  # (b, h/2, w/2, c, 4)
        dx = onehot.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return dx.reshape(b, h, w, c)


class Dropout:
    params: dict = {}

    def __init__(self, rate: float):
        self.rate = rate
        self.mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self.mask = None
            return x
        keep = 1.0 - self.rate
        self.mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        return x * self.mask

    def backward(self, dy):
        return dy if self.mask is None else dy * self.mask


class Upsample2:
    """Nearest-neighbour x2."""

    params: dict = {}

    def forward(self, x, train=False):
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, dy):
        b, h, w, c = dy.shape
        return dy.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (p * dp).sum(-1, keepdims=True))
