"""Small numpy classifiers that keep their weights in one flat vector.

A flat vector is what FedAvg averages, so every model here exposes
``init``, ``loss_and_grad`` and ``logits`` over a single 1-D array and
slices it into layer views internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = len(y)
    loss = -float(log_probs[np.arange(n), y].mean())
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), y] -= 1.0
    return loss, dlogits / n


@dataclass(frozen=True)
class Layout:
    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]
    fan_in: tuple[int, ...]  # 0 marks a bias, which starts at zero

    @property
    def size(self) -> int:
        return sum(math.prod(s) for s in self.shapes)

    def unpack(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shape in zip(self.names, self.shapes):
            n = math.prod(shape)
            out[name] = flat[offset:offset + n].reshape(shape)
            offset += n
        return out

    def pack(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([parts[name].ravel() for name in self.names])


class Model:
    arch = "base"
    layout: Layout

    @property
    def size(self) -> int:
        return self.layout.size

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
        parts = {}
        for name, shape, fan_in in zip(self.layout.names, self.layout.shapes, self.layout.fan_in):
            if fan_in:
                bound = 1.0 / math.sqrt(fan_in)
                parts[name] = rng.uniform(-bound, bound, size=shape)
            else:
                parts[name] = np.zeros(shape)
        return self.layout.pack(parts)

    def logits(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def loss(self, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        return softmax_xent(self.logits(params, X), y)[0]

    def predict(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(params, X), axis=1)


class LinearModel(Model):
    """Multinomial logistic regression."""

    arch = "linear"

    def __init__(self, dim: int, num_classes: int):
        self.layout = Layout(("W", "b"), ((dim, num_classes), (num_classes,)), (dim, 0))

    def logits(self, params, X):
        p = self.layout.unpack(params)
        return X @ p["W"] + p["b"]

    def loss_and_grad(self, params, X, y):
        p = self.layout.unpack(params)
        loss, d = softmax_xent(X @ p["W"] + p["b"], y)
        return loss, self.layout.pack({"W": X.T @ d, "b": d.sum(axis=0)})


class MLPModel(Model):
    """One ReLU hidden layer."""

    arch = "mlp"

    def __init__(self, dim: int, num_classes: int, hidden: int = 32):
        self.hidden = hidden
        self.layout = Layout(
            ("W1", "b1", "W2", "b2"),
            ((dim, hidden), (hidden,), (hidden, num_classes), (num_classes,)),
            (dim, 0, hidden, 0),
        )

    def logits(self, params, X):
        p = self.layout.unpack(params)
        h = np.maximum(X @ p["W1"] + p["b1"], 0.0)
        return h @ p["W2"] + p["b2"]

    def loss_and_grad(self, params, X, y):
        p = self.layout.unpack(params)
        pre = X @ p["W1"] + p["b1"]
        h = np.maximum(pre, 0.0)
        loss, d = softmax_xent(h @ p["W2"] + p["b2"], y)
        dh = (d @ p["W2"].T) * (pre > 0)
        grads = {"W1": X.T @ dh, "b1": dh.sum(axis=0), "W2": h.T @ d, "b2": d.sum(axis=0)}
        return loss, self.layout.pack(grads)


def _conv_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # (B, C, H', W', k, k)
    return np.einsum("bchwij,ocij->bohw", win, w, optimize=True) + b[None, :, None, None], win


def _conv_backward(dout, win, w) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = w.shape[-1]
    dw = np.einsum("bchwij,bohw->ocij", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    pwin = sliding_window_view(padded, (k, k), axis=(2, 3))
    dx = np.einsum("bohwij,ocij->bchw", pwin, w[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


class CNNModel(Model):
    """Two 5x5 valid convolutions, one 2x2 max pool, two dense layers.

    Works on single-channel images; ``image_shape`` minus 8 must be even.
    """

    arch = "cnn"

    def __init__(self, image_shape: tuple[int, int], num_classes: int,
                 channels: tuple[int, int] = (8, 16), hidden: int = 64, kernel: int = 5):
        rows, cols = image_shape
        r2, c2 = rows - 2 * (kernel - 1), cols - 2 * (kernel - 1)
        if r2 <= 0 or c2 <= 0 or r2 % 2 or c2 % 2:
            raise ValueError(f"image shape {image_shape} incompatible with two {kernel}x{kernel} convs + 2x2 pool")
        self.image_shape = (rows, cols)
        c1, c2ch = channels
        flat = c2ch * (r2 // 2) * (c2 // 2)
        self.layout = Layout(
            ("K1", "k1", "K2", "k2", "W3", "b3", "W4", "b4"),
            ((c1, 1, kernel, kernel), (c1,), (c2ch, c1, kernel, kernel), (c2ch,),
             (flat, hidden), (hidden,), (hidden, num_classes), (num_classes,)),
            (kernel * kernel, 0, c1 * kernel * kernel, 0, flat, 0, hidden, 0),
        )

    def _forward(self, params, X):
        p = self.layout.unpack(params)
        x = X.reshape(len(X), 1, *self.image_shape)
        z1, win1 = _conv_valid(x, p["K1"], p["k1"])
        a1 = np.maximum(z1, 0.0)
        z2, win2 = _conv_valid(a1, p["K2"], p["k2"])
        a2 = np.maximum(z2, 0.0)
        B, C, H, W = a2.shape
        blocks = a2.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
        arg = blocks.argmax(axis=-1)
        pooled = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        f = pooled.reshape(B, -1)
        pre3 = f @ p["W3"] + p["b3"]
        h3 = np.maximum(pre3, 0.0)
        logits = h3 @ p["W4"] + p["b4"]
        cache = (p, z1, win1, a1, z2, win2, arg, f, pre3, h3, a2.shape)
        return logits, cache

    def logits(self, params, X):
        return self._forward(params, X)[0]

    def loss_and_grad(self, params, X, y):
        logits, (p, z1, win1, a1, z2, win2, arg, f, pre3, h3, shape2) = self._forward(params, X)
        loss, d = softmax_xent(logits, y)
        g = {"W4": h3.T @ d, "b4": d.sum(axis=0)}
        dh3 = (d @ p["W4"].T) * (pre3 > 0)
        g["W3"], g["b3"] = f.T @ dh3, dh3.sum(axis=0)
        dpool = (dh3 @ p["W3"].T).reshape(arg.shape)
        B, C, H, W = shape2
        dblocks = np.zeros((*arg.shape, 4))
        np.put_along_axis(dblocks, arg[..., None], dpool[..., None], axis=-1)
        da2 = dblocks.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape2)
        dz2 = da2 * (z2 > 0)
        da1, g["K2"], g["k2"] = _conv_backward(dz2, win2, p["K2"])
        dz1 = da1 * (z1 > 0)
        _, g["K1"], g["k1"] = _conv_backward(dz1, win1, p["K1"])
        return loss, self.layout.pack(g)


def build_model(arch: str, dim: int, num_classes: int, hidden: int = 32,
                image_shape: tuple[int, int] | None = None) -> Model:
    if arch == "linear":
        return LinearModel(dim, num_classes)
    if arch == "mlp":
        return MLPModel(dim, num_classes, hidden)
    if arch == "cnn":
        if image_shape is None:
            raise ValueError("the cnn model needs image-shaped features")
        return CNNModel(image_shape, num_classes, hidden=hidden)
    raise ValueError(f"unknown model architecture {arch!r}")
