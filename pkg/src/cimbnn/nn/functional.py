"""Hand-written forward/backward kernels.

Batch norm works on stacked group outputs shaped (G, M, C): G split groups,
M samples (batch x spatial positions), C channels. Statistics are taken over
M independently for every (group, channel) pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, FoldError, ParameterError
from ..tensor_core import col2im_batch, im2col_batch


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, n_groups, channels, eps=1e-5, momentum=0.1):
        shape = (n_groups, channels)
        return cls(np.ones(shape), np.zeros(shape), np.zeros(shape), np.ones(shape), eps, momentum)

    @property
    def shape(self):
        return self.gamma.shape


def batchnorm_forward(x, p: BnParams, training: bool):
    """Normalize (G, M, C) inputs; training mode also updates running stats in place."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or (x.shape[0], x.shape[2]) != p.shape:
        raise DimensionError(f"batch norm params {p.shape} do not match input {x.shape}")
    if training:
        m = x.shape[1]
        if m < 2:
            raise ParameterError("training-mode batch norm needs at least 2 samples per channel")
        mu = x.mean(axis=1)
        var = x.var(axis=1)
        p.running_mean *= 1.0 - p.momentum
        p.running_mean += p.momentum * mu
        p.running_var *= 1.0 - p.momentum
        p.running_var += p.momentum * var * (m / (m - 1))
    else:
        mu, var = p.running_mean, p.running_var
    std = np.sqrt(var + p.eps)
    xhat = (x - mu[:, None, :]) / std[:, None, :]
    y = p.gamma[:, None, :] * xhat + p.beta[:, None, :]
    return y, (xhat, std, p.gamma.copy(), training)


def batchnorm_backward(grad_y, cache):
    xhat, std, gamma, training = cache
    grad_y = np.asarray(grad_y, dtype=np.float64)
    grad_gamma = (grad_y * xhat).sum(axis=1)
    grad_beta = grad_y.sum(axis=1)
    dxhat = grad_y * gamma[:, None, :]
    if not training:
        return dxhat / std[:, None, :], grad_gamma, grad_beta
    m = grad_y.shape[1]
    grad_x = (m * dxhat - dxhat.sum(axis=1, keepdims=True)
              - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)) / (m * std[:, None, :])
    return grad_x, grad_gamma, grad_beta


def fold_bn_threshold(p: BnParams, thresh: float):
    """Fold batch norm + binary activation into a comparator per (group, channel).

    Returns ``(x_th, direction)``: the output bit is ``x >= x_th`` where
    direction is +1 (gamma > 0) and ``x <= x_th`` where it is -1 (gamma < 0).
    """
    gamma = np.asarray(p.gamma, dtype=np.float64)
    if np.any(gamma == 0):
        bad = [tuple(int(v) for v in i) for i in np.argwhere(gamma == 0)]
        raise FoldError(f"gamma == 0 at (group, channel) {bad[:5]}")
    std = np.sqrt(p.running_var + p.eps)
    x_th = (thresh - p.beta) / gamma * std + p.running_mean
    direction = np.where(gamma > 0, 1.0, -1.0)
    return x_th, direction


def threshold_compare(x, x_th, direction):
    return np.where(direction > 0, x >= x_th, x <= x_th).astype(np.float64)


def conv_forward(x, w, kernel, stride=1, pad=0):
    """x (N, C, H, W), w (C*k*k, C_out) -> (N, C_out, H_out, W_out)."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, wd = x.shape
    if w.shape[0] != c * kernel * kernel:
        raise DimensionError(f"weight rows {w.shape[0]} != {c}*{kernel}*{kernel}")
    cols = im2col_batch(x, kernel, stride, pad)
    _, L, K = cols.shape
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = L // oh
    y = (cols.reshape(n * L, K) @ w).reshape(n, oh, ow, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (cols, x.shape, w, kernel, stride, pad)


def conv_backward(grad_y, cache):
    cols, x_shape, w, kernel, stride, pad = cache
    n, cout, oh, ow = grad_y.shape
    g = grad_y.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
    grad_w = cols.reshape(n * oh * ow, -1).T @ g
    grad_cols = (g @ w.T).reshape(n, oh * ow, -1)
    grad_x = col2im_batch(grad_cols, x_shape, kernel, stride, pad)
    return grad_x, grad_w


def fc_forward(x, w):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"fc input {x.shape} vs weight {w.shape}")
    return x @ w, (x, w)


def fc_backward(grad_y, cache):
    x, w = cache
    return grad_y @ w.T, x.T @ grad_y


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient (softmax - one_hot) / batch."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= k):
        raise ParameterError(f"labels must be {n} integers in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# layout helpers: feature maps <-> (1, M, C) batch-norm view

def nchw_to_mc(x):
    n, c, h, w = x.shape
    return x.transpose(0, 2, 3, 1).reshape(n * h * w, c)


def mc_to_nchw(x, n, h, w):
    return np.ascontiguousarray(x.reshape(n, h, w, -1).transpose(0, 3, 1, 2))
