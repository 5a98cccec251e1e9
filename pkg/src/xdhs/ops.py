"""Layer primitives and loss functions with recorded backward passes.

All inputs/outputs are single-image tensors: feature maps are [C, H, W],
losses reduce to scalars by mean over the masked pixels. No bias terms
anywhere (batch norm follows every convolution except the classifier).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Rng
from .tensor import Tape, Tensor


class BatchNormState:
    """Per-channel batch normalization parameters and running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5,
                 dtype=np.float32, name: str = "bn"):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must be in (0,1)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True,
                            name=f"{name}/gamma")
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True,
                           name=f"{name}/beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.epsilon = epsilon
        self.mode = "train"

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


def conv2d(tape: Tape, x: Tensor, weight: Tensor, pad: int) -> Tensor:
    """Same-size 2D convolution, zero padding, no bias.

    x: [Cin, H, W], weight: [Cout, Cin, k, k] with odd k and pad == (k-1)/2.
    """
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ValueError("conv2d expects x[Cin,H,W] and weight[Cout,Cin,k,k]")
    cout, cin, k, k2 = weight.shape
    if k != k2:
        raise ValueError("conv2d kernels must be square")
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if pad != (k - 1) // 2:
        raise ValueError(f"pad must be (k-1)/2 = {(k - 1) // 2}, got {pad}")
    if x.shape[0] != cin:
        raise ValueError(f"conv2d channel mismatch: input has {x.shape[0]}, weight expects {cin}")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # [Cin, H, W, k, k]
    out_data = np.tensordot(weight.data, win, axes=((1, 2, 3), (0, 3, 4)))
    out = Tensor(out_data)

    def backward_fn(g):
        gx = None
        if tape.needs_grad(x):
            w_flip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gp = np.pad(g, ((0, 0), (pad, pad), (pad, pad)))
            gwin = sliding_window_view(gp, (k, k), axis=(1, 2))
            gx = np.tensordot(w_flip, gwin, axes=((1, 2, 3), (0, 3, 4)))
        gw = None
        if tape.needs_grad(weight):
            gw = np.tensordot(g, win, axes=((1, 2), (1, 2)))
        return gx, gw

    tape.record("conv2d", [x, weight], out, backward_fn)
    return out


def relu(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0  # subgradient 0 at exactly 0

    def backward_fn(g):
        return (g * mask,)

    tape.record("relu", [x], out, backward_fn)
    return out


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        return g, g

    tape.record("add", [a, b], out, backward_fn)
    return out


def tensor_sum(tape: Tape, x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))

    def backward_fn(g):
        return (np.full_like(x.data, g),)

    tape.record("sum", [x], out, backward_fn)
    return out


def batchnorm(tape: Tape, x: Tensor, state: BatchNormState) -> Tensor:
    """Batch norm over all H*W positions of one image, per channel."""
    if x.data.ndim != 3:
        raise ValueError("batchnorm expects x[C,H,W]")
    c = x.shape[0]
    if c != state.channels:
        raise ValueError(f"batchnorm channel mismatch: input {c}, state {state.channels}")
    gamma, beta = state.gamma, state.beta
    eps = state.epsilon
    n = x.shape[1] * x.shape[2]

    if state.mode == "train":
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        state.running_mean[...] = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var[...] = (1 - state.momentum) * state.running_var + state.momentum * var
    elif state.mode == "eval":
        mu = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"unknown batchnorm mode {state.mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv_std[:, None, None]
    out = Tensor(gamma.data[:, None, None] * xhat + beta.data[:, None, None])
    train = state.mode == "train"

    def backward_fn(g):
        g_gamma = (g * xhat).sum(axis=(1, 2)) if tape.needs_grad(gamma) else None
        g_beta = g.sum(axis=(1, 2)) if tape.needs_grad(beta) else None
        gx = None
        if tape.needs_grad(x):
            gh = g * gamma.data[:, None, None]
            if train:
                m1 = gh.mean(axis=(1, 2))
                m2 = (gh * xhat).mean(axis=(1, 2))
                gx = inv_std[:, None, None] * (gh - m1[:, None, None] - xhat * m2[:, None, None])
            else:
                gx = gh * inv_std[:, None, None]
        return gx, g_gamma, g_beta

    tape.record("batchnorm", [x, gamma, beta], out, backward_fn)
    return out


def _masked_log_softmax(logits: Tensor, labels: np.ndarray,
                        rows: np.ndarray, cols: np.ndarray):
    if logits.data.ndim != 3:
        raise ValueError("loss expects logits[C,H,W]")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("loss mask is empty")
    c = logits.shape[0]
    lab = np.asarray(labels)[rows, cols].astype(np.int64)
    if np.any(lab < 1) or np.any(lab > c):
        bad = lab[(lab < 1) | (lab > c)][0]
        raise ValueError(f"masked pixel has label {bad}, expected 1..{c}")
    z = logits.data[:, rows, cols].astype(np.float64)  # [C, M]
    z = z - z.max(axis=0)
    logp = z - np.log(np.exp(z).sum(axis=0))
    return logp, lab - 1, rows, cols


def softmax_ce_loss(tape: Tape, logits: Tensor, labels: np.ndarray,
                    rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Mean cross-entropy over the masked pixels."""
    logp, t, rows, cols = _masked_log_softmax(logits, labels, rows, cols)
    m = t.size
    idx = np.arange(m)
    loss = -logp[t, idx].mean()
    out = Tensor(np.asarray(loss, dtype=logits.dtype))

    def backward_fn(g):
        if not tape.needs_grad(logits):
            return (None,)
        p = np.exp(logp)
        p[t, idx] -= 1.0
        gl = np.zeros_like(logits.data)
        gl[:, rows, cols] = (float(g) / m) * p
        return (gl,)

    tape.record("softmax_ce", [logits], out, backward_fn)
    return out


def focal_loss(tape: Tape, logits: Tensor, labels: np.ndarray,
               rows: np.ndarray, cols: np.ndarray, gamma: float, alpha: float,
               background_class: Optional[int] = None) -> Tensor:
    """Mean focal loss -alpha_t * (1-p_t)^gamma * log(p_t) over masked pixels.

    alpha_t is alpha for foreground classes and (1-alpha) for the designated
    background class; with no background class it is alpha everywhere.
    """
    if gamma < 0:
        raise ValueError("focal gamma must be >= 0")
    if not 0.0 < alpha < 1.0:
        raise ValueError("focal alpha must be in (0,1)")
    logp, t, rows, cols = _masked_log_softmax(logits, labels, rows, cols)
    m = t.size
    idx = np.arange(m)
    logpt = logp[t, idx]
    pt = np.exp(logpt)
    if background_class is None:
        alpha_t = np.full(m, alpha)
    else:
        alpha_t = np.where(t == background_class - 1, 1.0 - alpha, alpha)
    one_minus = 1.0 - pt
    if gamma == 0.0:
        mod = np.ones(m)  # exactly 1 so focal == alpha_t * CE
    else:
        mod = one_minus ** gamma
    loss = (alpha_t * mod * (-logpt)).mean()
    out = Tensor(np.asarray(loss, dtype=logits.dtype))

    def backward_fn(g):
        if not tape.needs_grad(logits):
            return (None,)
        if gamma == 0.0:
            w = -alpha_t
        else:
            # d/dp_t scaled by p_t; the (1-p_t)^(gamma-1) factor is zeroed
            # where p_t has saturated to 1 to avoid inf*0
            pow_gm1 = np.where(one_minus > 0, one_minus ** max(gamma - 1.0, 0.0), 0.0)
            if gamma < 1.0:
                with np.errstate(divide="ignore"):
                    pow_gm1 = np.where(one_minus > 0, one_minus ** (gamma - 1.0), 0.0)
            w = alpha_t * (gamma * pow_gm1 * logpt * pt - one_minus ** gamma)
        p = np.exp(logp)
        delta = np.zeros_like(p)
        delta[t, idx] = 1.0
        gl = np.zeros_like(logits.data)
        gl[:, rows, cols] = (float(g) / m) * w * (delta - p)
        return (gl,)

    tape.record("focal", [logits], out, backward_fn)
    return out


def gaussian_init(shape, std: float, rng: Rng, dtype=np.float32, name: str = "") -> Tensor:
    """Fresh trainable tensor with i.i.d. Gaussian(0, std^2) entries."""
    if std <= 0:
        raise ValueError("std must be positive")
    n = int(np.prod(shape))
    data = rng.gaussian(n, std=std).reshape(shape).astype(dtype)
    return Tensor(data, requires_grad=True, name=name)
