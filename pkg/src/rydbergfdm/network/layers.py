"""Layer primitives of the spectrum decoder, forward and backward.

Tensors are batch first. Convolution and pooling operate on ``(batch, time,
channels)``; the network input is single-channel ``(batch, time)``. Every forward
function is pure except ``batchnorm_forward`` in training mode, which updates the
running statistics held by its parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import ShapeError, TrainingError


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(x):
    return expit(x)


def minmax_scale(x) -> np.ndarray:
    """Scale to [0, 1] along the last axis; constant rows map to zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ShapeError("Cannot scale an empty vector")
    lo = x.min(axis=-1, keepdims=True)
    span = x.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


# ---------------------------------------------------------------------------
# Convolution


@dataclass
class Conv1DParams:
    kernels: np.ndarray  # (filters, kernel_len)
    bias: np.ndarray  # (filters,)

    def __post_init__(self):
        self.kernels = np.atleast_2d(np.asarray(self.kernels, dtype=np.float64))
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.kernels.shape[1] < 1 or self.bias.size != self.kernels.shape[0]:
            raise ShapeError(
                f"Conv kernels {self.kernels.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def kernel_len(self) -> int:
        return self.kernels.shape[1]


def _as_signal_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        if x.shape[-1] != 1:
            raise ShapeError(f"Expected a single input channel, got {x.shape[-1]}")
        x = x[..., 0]
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"Expected (batch, time) input, got shape {x.shape}")
    return x


def conv1d_forward(x, p: Conv1DParams) -> np.ndarray:
    """Valid cross-correlation of every filter with the signal, plus bias.

    Returns ``(batch, time - kernel_len + 1, filters)``; a 1-D input returns
    ``(time - kernel_len + 1, filters)``.
    """
    single = np.ndim(x) == 1
    signal = _as_signal_batch(x)
    if signal.shape[1] < p.kernel_len:
        raise ShapeError(
            f"Input length {signal.shape[1]} is shorter than kernel {p.kernel_len}"
        )
    windows = sliding_window_view(signal, p.kernel_len, axis=1)
    out = windows @ p.kernels.T + p.bias
    return out[0] if single else out


def conv1d_backward(x, p: Conv1DParams, dy: np.ndarray):
    """Gradients ``(dx, dkernels, dbias)`` for upstream gradient ``dy``."""
    signal = _as_signal_batch(x)
    dy = dy.reshape(signal.shape[0], -1, p.kernels.shape[0])
    windows = sliding_window_view(signal, p.kernel_len, axis=1)
    dkernels = np.einsum("blk,blf->fk", windows, dy)
    dbias = dy.sum(axis=(0, 1))
    dx = np.zeros_like(signal)
    out_len = dy.shape[1]
    for k in range(p.kernel_len):
        dx[:, k : k + out_len] += dy @ p.kernels[:, k]
    return dx, dkernels, dbias


# ---------------------------------------------------------------------------
# Batch normalisation


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-3
    momentum: float = 0.99
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64).ravel()
        self.beta = np.asarray(self.beta, dtype=np.float64).ravel()
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.running_mean is None:
            self.running_mean = np.zeros_like(self.gamma)
        if self.running_var is None:
            self.running_var = np.ones_like(self.gamma)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-3, momentum: float = 0.99) -> BatchNormParams:
        return cls(np.ones(channels), np.zeros(channels), eps=eps, momentum=momentum)


def _batch_statistics(x: np.ndarray):
    axes = tuple(range(x.ndim - 1))
    return x.mean(axis=axes), x.var(axis=axes)


def batchnorm_forward(x, p: BatchNormParams, training: bool) -> np.ndarray:
    """Normalise per channel (last axis) over batch and time.

    Training mode uses the mini-batch mean and (biased) variance and folds them into
    the running statistics; inference mode uses the running statistics.
    """
    x = np.asarray(x, dtype=np.float64)
    if training:
        if x.shape[0] < 2:
            raise TrainingError("Batch normalisation in training mode needs a batch of 2 or more")
        mean, var = _batch_statistics(x)
        p.running_mean = p.momentum * p.running_mean + (1 - p.momentum) * mean
        p.running_var = p.momentum * p.running_var + (1 - p.momentum) * var
    else:
        mean, var = p.running_mean, p.running_var
    x_hat = (x - mean) / np.sqrt(var + p.eps)
    return p.gamma * x_hat + p.beta


def batchnorm_backward(x, p: BatchNormParams, dy: np.ndarray):
    """Training-mode gradients ``(dx, dgamma, dbeta)``."""
    x = np.asarray(x, dtype=np.float64)
    axes = tuple(range(x.ndim - 1))
    m = x.size // x.shape[-1]
    mean, var = _batch_statistics(x)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = (x - mean) * inv_std
    dgamma = (dy * x_hat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dx_hat = dy * p.gamma
    dx = (inv_std / m) * (
        m * dx_hat - dx_hat.sum(axis=axes) - x_hat * (dx_hat * x_hat).sum(axis=axes)
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Activation and pooling


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, dy: np.ndarray) -> np.ndarray:
    return dy * (np.asarray(x) > 0)


def maxpool1d(x, window: int) -> np.ndarray:
    """Non-overlapping max pooling over time; a trailing remainder is dropped."""
    if window < 1:
        raise ValueError(f"Pooling window must be at least 1, got {window}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return maxpool1d(x[None, :, None], window)[0, :, 0]
    batch, length, channels = x.shape
    out_len = length // window
    blocks = x[:, : out_len * window].reshape(batch, out_len, window, channels)
    return blocks.max(axis=2)


def maxpool1d_backward(x, window: int, dy: np.ndarray) -> np.ndarray:
    """Route each pooled gradient to the first maximum of its window."""
    batch, length, channels = x.shape
    out_len = length // window
    blocks = x[:, : out_len * window].reshape(batch, out_len, window, channels)
    winners = blocks.argmax(axis=2)[:, :, None, :]
    dblocks = np.zeros_like(blocks)
    np.put_along_axis(dblocks, winners, dy[:, :, None, :], axis=2)
    dx = np.zeros_like(x)
    dx[:, : out_len * window] = dblocks.reshape(batch, out_len * window, channels)
    return dx


# ---------------------------------------------------------------------------
# LSTM

_GATES = ("f", "i", "C", "o")


@dataclass
class LSTMParams:
    """Gate weights act on the concatenation ``[h_{t-1}, x_t]``."""

    W_f: np.ndarray
    W_i: np.ndarray
    W_C: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        for gate in _GATES:
            setattr(self, f"W_{gate}", np.atleast_2d(np.asarray(getattr(self, f"W_{gate}"), dtype=np.float64)))
            setattr(self, f"b_{gate}", np.asarray(getattr(self, f"b_{gate}"), dtype=np.float64).ravel())
        hidden = self.W_f.shape[0]
        for gate in _GATES:
            w, b = getattr(self, f"W_{gate}"), getattr(self, f"b_{gate}")
            if w.shape != self.W_f.shape or b.shape != (hidden,):
                raise ShapeError(f"Gate {gate} has inconsistent shapes {w.shape}, {b.shape}")
        if self.W_f.shape[1] <= hidden:
            raise ShapeError("Gate weights must cover [h, x] with a non-empty input")

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1] - self.hidden_size

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> LSTMParams:
        w = np.zeros((hidden_size, hidden_size + input_size))
        b = np.zeros(hidden_size)
        return cls(w, w.copy(), w.copy(), w.copy(), b, b.copy(), b.copy(), b.copy())

    @classmethod
    def glorot(cls, rng: np.random.Generator, input_size: int, hidden_size: int, forget_bias: float = 1.0) -> LSTMParams:
        shape = (hidden_size, hidden_size + input_size)
        weights = [glorot_uniform(rng, shape, shape[1], hidden_size) for _ in _GATES]
        b_f = np.full(hidden_size, forget_bias)
        zeros = np.zeros(hidden_size)
        return cls(*weights, b_f, zeros.copy(), zeros.copy(), zeros.copy())

    def stacked(self):
        """Gate weights stacked as ``(4 H, H + D)`` and biases as ``(4 H,)``."""
        w = np.concatenate([self.W_f, self.W_i, self.W_C, self.W_o], axis=0)
        b = np.concatenate([self.b_f, self.b_i, self.b_C, self.b_o])
        return w, b


def lstm_step(x_t, h_prev, C_prev, p: LSTMParams):
    """One LSTM cell update; returns ``(h_t, C_t)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    C_prev = np.asarray(C_prev, dtype=np.float64)
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeError(
            f"lstm_step expects input {p.input_size} and hidden {p.hidden_size}, "
            f"got {x_t.shape[-1]} and {h_prev.shape[-1]}"
        )
    joined = np.concatenate([h_prev, x_t], axis=-1)
    f_t = sigmoid(joined @ p.W_f.T + p.b_f)
    i_t = sigmoid(joined @ p.W_i.T + p.b_i)
    C_tilde = np.tanh(joined @ p.W_C.T + p.b_C)
    C_t = f_t * C_prev + i_t * C_tilde
    o_t = sigmoid(joined @ p.W_o.T + p.b_o)
    h_t = o_t * np.tanh(C_t)
    return h_t, C_t


@dataclass
class _LSTMCache:
    x: np.ndarray
    reverse: bool
    gates: np.ndarray  # (batch, time, 4H) post-activation
    c: np.ndarray  # (batch, time, H)
    h: np.ndarray  # (batch, time, H)


def _order(length: int, reverse: bool):
    return range(length - 1, -1, -1) if reverse else range(length)


def lstm_sequence(x, p: LSTMParams, reverse: bool = False):
    """Run the cell over ``(batch, time, features)``; outputs stay time aligned.

    With ``reverse`` the sequence is consumed from the last step to the first and
    ``h[:, t]`` is the state after consuming ``x[:, t:]``. Returns ``(h, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.input_size:
        raise ShapeError(f"LSTM expects {p.input_size} features, got {x.shape[-1]}")
    batch, length, _ = x.shape
    hidden = p.hidden_size
    w, b = p.stacked()
    w_h, w_x = w[:, :hidden], w[:, hidden:]
    z_x = x @ w_x.T + b
    gates = np.empty((batch, length, 4 * hidden))
    c = np.empty((batch, length, hidden))
    h = np.empty((batch, length, hidden))
    h_prev = np.zeros((batch, hidden))
    c_prev = np.zeros((batch, hidden))
    for t in _order(length, reverse):
        z = z_x[:, t] + h_prev @ w_h.T
        act = np.empty_like(z)
        act[:, : 2 * hidden] = sigmoid(z[:, : 2 * hidden])
        act[:, 2 * hidden : 3 * hidden] = np.tanh(z[:, 2 * hidden : 3 * hidden])
        act[:, 3 * hidden :] = sigmoid(z[:, 3 * hidden :])
        f_t, i_t, g_t, o_t = np.split(act, 4, axis=1)
        c_prev = f_t * c_prev + i_t * g_t
        h_prev = o_t * np.tanh(c_prev)
        gates[:, t], c[:, t], h[:, t] = act, c_prev, h_prev
    return h, _LSTMCache(x, reverse, gates, c, h)


def lstm_sequence_backward(cache: _LSTMCache, p: LSTMParams, dh: np.ndarray):
    """Backpropagation through time.

    ``dh`` is the loss gradient with respect to every output ``h[:, t]``. Returns
    ``(dx, grads)`` where ``grads`` maps ``W_f`` ... ``b_o`` to arrays.
    """
    batch, length, _ = cache.x.shape
    hidden = p.hidden_size
    w, _ = p.stacked()
    dw = np.zeros_like(w)
    db = np.zeros(4 * hidden)
    dx = np.zeros_like(cache.x)
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    zeros = np.zeros((batch, hidden))
    order = list(_order(length, cache.reverse))
    for step in range(length - 1, -1, -1):
        t = order[step]
        prev = order[step - 1] if step > 0 else None
        h_prev = cache.h[:, prev] if prev is not None else zeros
        c_prev = cache.c[:, prev] if prev is not None else zeros
        f_t, i_t, g_t, o_t = np.split(cache.gates[:, t], 4, axis=1)
        tanh_c = np.tanh(cache.c[:, t])
        dh_t = dh[:, t] + dh_next
        dc = dh_t * o_t * (1.0 - tanh_c**2) + dc_next
        dz = np.concatenate(
            [
                dc * c_prev * f_t * (1.0 - f_t),
                dc * g_t * i_t * (1.0 - i_t),
                dc * i_t * (1.0 - g_t**2),
                dh_t * tanh_c * o_t * (1.0 - o_t),
            ],
            axis=1,
        )
        joined = np.concatenate([h_prev, cache.x[:, t]], axis=1)
        dw += dz.T @ joined
        db += dz.sum(axis=0)
        djoined = dz @ w
        dh_next = djoined[:, :hidden]
        dx[:, t] = djoined[:, hidden:]
        dc_next = dc * f_t
    grads = {}
    for k, gate in enumerate(_GATES):
        grads[f"W_{gate}"] = dw[k * hidden : (k + 1) * hidden]
        grads[f"b_{gate}"] = db[k * hidden : (k + 1) * hidden]
    return dx, grads


def bilstm_forward(x, fwd: LSTMParams, bwd: LSTMParams) -> np.ndarray:
    """Forward and time-reversed LSTM outputs concatenated per step."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1] < 1:
        raise ShapeError("Bi-LSTM needs a sequence of length 1 or more")
    h_fwd, _ = lstm_sequence(x, fwd)
    h_bwd, _ = lstm_sequence(x, bwd, reverse=True)
    out = np.concatenate([h_fwd, h_bwd], axis=-1)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Dense head and loss


@dataclass
class DenseParams:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        if self.b.size != self.w.shape[0]:
            raise ShapeError(f"Dense weights {self.w.shape} and bias {self.b.shape} disagree")


def dense_forward(x, p: DenseParams) -> np.ndarray:
    """``sigmoid(w x + b)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.w.shape[1]:
        raise ShapeError(f"Dense layer expects {p.w.shape[1]} inputs, got {x.shape[-1]}")
    return sigmoid(x @ p.w.T + p.b)


def dense_backward(x, y, p: DenseParams, dy: np.ndarray):
    """Gradients ``(dx, dw, db)`` given the forward output ``y``."""
    da = dy * y * (1.0 - y)
    return da @ p.w, da.T @ x, da.sum(axis=0)


def mse_loss(pred, truth) -> float:
    """Mean squared error over every entry of every sample."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"Prediction {pred.shape} and truth {truth.shape} differ")
    return float(np.mean((truth - pred) ** 2))


def mse_backward(pred, truth) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    return 2.0 * (pred - np.asarray(truth, dtype=np.float64)) / pred.size
