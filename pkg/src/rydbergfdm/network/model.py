"""The spectrum decoder: conv1d -> batchnorm -> ReLU -> maxpool -> Bi-LSTM -> dense."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..config import NetworkArchitecture
from ..errors import ShapeError
from . import layers
from .layers import (
    BatchNormParams,
    Conv1DParams,
    DenseParams,
    LSTMParams,
)

logger = logging.getLogger(__name__)

LAYER_ORDER = ("conv1d", "batchnorm", "relu", "maxpool", "bilstm", "dense")


@dataclass
class ForwardCache:
    x: np.ndarray
    conv: np.ndarray
    bn: np.ndarray
    act: np.ndarray
    pooled: np.ndarray
    fwd: layers._LSTMCache
    bwd: layers._LSTMCache
    features: np.ndarray
    pred: np.ndarray


@dataclass
class DecoderNetwork:
    """Parameters, batch-norm statistics and optimizer accumulators of the decoder."""

    arch: NetworkArchitecture
    input_len: int
    n_bins: int
    conv: Conv1DParams
    bn: BatchNormParams
    lstm_fwd: LSTMParams
    lstm_bwd: LSTMParams
    dense: DenseParams
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        chain = self.shape_chain()
        if chain["pooled"][0] < 1:
            raise ShapeError(
                f"Input length {self.input_len} leaves nothing after conv and pooling"
            )
        if self.dense.w.shape != (self.n_bins, 2 * self.arch.hidden):
            raise ShapeError(f"Dense weights {self.dense.w.shape} do not emit {self.n_bins} bins")
        if not self.accumulators:
            self.reset_optimizer()

    # -- construction ------------------------------------------------------

    @classmethod
    def initialize(
        cls,
        arch: NetworkArchitecture,
        input_len: int,
        n_bins: int,
        rng: np.random.Generator,
    ) -> DecoderNetwork:
        """Glorot-uniform weights, zero biases, forget-gate bias 1."""
        k, f, h = arch.kernel_len, arch.filters, arch.hidden
        conv = Conv1DParams(layers.glorot_uniform(rng, (f, k), k, k * f), np.zeros(f))
        bn = BatchNormParams.identity(f, eps=arch.bn_eps, momentum=arch.bn_momentum)
        lstm_fwd = LSTMParams.glorot(rng, f, h)
        lstm_bwd = LSTMParams.glorot(rng, f, h)
        dense = DenseParams(layers.glorot_uniform(rng, (n_bins, 2 * h), 2 * h, n_bins), np.zeros(n_bins))
        return cls(arch, input_len, n_bins, conv, bn, lstm_fwd, lstm_bwd, dense)

    @classmethod
    def zeros(cls, arch: NetworkArchitecture, input_len: int, n_bins: int) -> DecoderNetwork:
        """All-zero weights; every output is exactly 0.5."""
        k, f, h = arch.kernel_len, arch.filters, arch.hidden
        return cls(
            arch,
            input_len,
            n_bins,
            Conv1DParams(np.zeros((f, k)), np.zeros(f)),
            BatchNormParams.identity(f, eps=arch.bn_eps, momentum=arch.bn_momentum),
            LSTMParams.zeros(f, h),
            LSTMParams.zeros(f, h),
            DenseParams(np.zeros((n_bins, 2 * h)), np.zeros(n_bins)),
        )

    # -- parameter registry --------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name, in checkpoint order. Values alias the layers."""
        params = {
            "conv.kernels": self.conv.kernels,
            "conv.bias": self.conv.bias,
            "bn.gamma": self.bn.gamma,
            "bn.beta": self.bn.beta,
        }
        for prefix, lstm in (("lstm_fwd", self.lstm_fwd), ("lstm_bwd", self.lstm_bwd)):
            for name in ("W_f", "W_i", "W_C", "W_o", "b_f", "b_i", "b_C", "b_o"):
                params[f"{prefix}.{name}"] = getattr(lstm, name)
        params["dense.w"] = self.dense.w
        params["dense.b"] = self.dense.b
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state saved with the weights."""
        return {"bn.running_mean": self.bn.running_mean, "bn.running_var": self.bn.running_var}

    def reset_optimizer(self):
        self.accumulators = {name: np.zeros_like(p) for name, p in self.parameters().items()}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def shape_chain(self) -> dict[str, tuple[int, ...]]:
        """Per-sample output shape after each layer."""
        a = self.arch
        conv_len = self.input_len - a.kernel_len + 1
        pooled_len = conv_len // a.pool
        return {
            "input": (self.input_len, 1),
            "conv1d": (conv_len, a.filters),
            "batchnorm": (conv_len, a.filters),
            "relu": (conv_len, a.filters),
            "pooled": (pooled_len, a.filters),
            "bilstm": (pooled_len, 2 * a.hidden),
            "dense": (self.n_bins,),
        }

    # -- passes ---------------------------------------------------------------

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim == 3 and x.shape[-1] == 1:
            x = x[..., 0]
        if x.ndim != 2 or x.shape[1] != self.input_len:
            raise ShapeError(
                f"Network expects spectra of length {self.input_len}, got shape {x.shape}"
            )
        return x

    def forward(self, x, training: bool = False) -> tuple[np.ndarray, ForwardCache]:
        """Outputs ``(batch, n_bins)`` in (0, 1) and the activations for ``backward``."""
        x = self._check_input(x)
        conv = layers.conv1d_forward(x, self.conv)
        bn = layers.batchnorm_forward(conv, self.bn, training)
        act = layers.relu(bn)
        pooled = layers.maxpool1d(act, self.arch.pool)
        h_fwd, fwd_cache = layers.lstm_sequence(pooled, self.lstm_fwd)
        h_bwd, bwd_cache = layers.lstm_sequence(pooled, self.lstm_bwd, reverse=True)
        features = np.concatenate([h_fwd[:, -1], h_bwd[:, 0]], axis=1)
        pred = layers.dense_forward(features, self.dense)
        return pred, ForwardCache(x, conv, bn, act, pooled, fwd_cache, bwd_cache, features, pred)

    def predict_proba(self, x) -> np.ndarray:
        """Inference-mode outputs."""
        pred, _ = self.forward(x, training=False)
        return pred

    def backward(self, cache: ForwardCache, dpred: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of every trainable parameter given ``d loss / d pred``."""
        grads: dict[str, np.ndarray] = {}
        hidden = self.arch.hidden
        dfeatures, grads["dense.w"], grads["dense.b"] = layers.dense_backward(
            cache.features, cache.pred, self.dense, dpred
        )

        batch, steps, _ = cache.pooled.shape
        dh_fwd = np.zeros((batch, steps, hidden))
        dh_bwd = np.zeros((batch, steps, hidden))
        dh_fwd[:, -1] = dfeatures[:, :hidden]
        dh_bwd[:, 0] = dfeatures[:, hidden:]
        dpooled_f, g_fwd = layers.lstm_sequence_backward(cache.fwd, self.lstm_fwd, dh_fwd)
        dpooled_b, g_bwd = layers.lstm_sequence_backward(cache.bwd, self.lstm_bwd, dh_bwd)
        for name, g in g_fwd.items():
            grads[f"lstm_fwd.{name}"] = g
        for name, g in g_bwd.items():
            grads[f"lstm_bwd.{name}"] = g

        dact = layers.maxpool1d_backward(cache.act, self.arch.pool, dpooled_f + dpooled_b)
        dbn = layers.relu_backward(cache.bn, dact)
        dconv, grads["bn.gamma"], grads["bn.beta"] = layers.batchnorm_backward(cache.conv, self.bn, dbn)
        _, grads["conv.kernels"], grads["conv.bias"] = layers.conv1d_backward(cache.x, self.conv, dconv)
        return {name: grads[name] for name in self.parameters()}


def loss_and_gradients(network: DecoderNetwork, batch, truth) -> tuple[float, dict[str, np.ndarray]]:
    """Training-mode MSE of a mini-batch and its exact gradients."""
    pred, cache = network.forward(batch, training=True)
    truth = np.asarray(truth, dtype=np.float64).reshape(pred.shape)
    loss = layers.mse_loss(pred, truth)
    return loss, network.backward(cache, layers.mse_backward(pred, truth))


def network_backward(network: DecoderNetwork, batch, truth) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of the MSE loss with respect to every parameter."""
    _, grads = loss_and_gradients(network, batch, truth)
    return grads


def _training_loss(network: DecoderNetwork, batch, truth) -> float:
    pred, _ = network.forward(batch, training=True)
    return layers.mse_loss(pred, truth)


def gradient_check(
    network: DecoderNetwork,
    batch,
    truth,
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Normwise relative error between analytic and central-difference gradients.

    The error reported for a parameter is ``||a - n|| / (||a|| + ||n||)`` over its probed
    entries, and zero when the summed norm is below ``1e-8`` (the convolution bias feeds
    batch normalisation and has a zero gradient). ``max_entries`` caps the entries probed
    per parameter (drawn from ``rng``). Running batch-norm statistics are restored afterwards.
    """
    saved = {name: buf.copy() for name, buf in network.buffers().items()}
    truth = np.asarray(truth, dtype=np.float64)
    analytic = network_backward(network, batch, truth)
    rng = rng if rng is not None else np.random.default_rng(0)
    report = {}
    for name, param in network.parameters().items():
        flat = param.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        exact = analytic[name].reshape(-1)[indices]
        numeric = np.empty(indices.size)
        for k, idx in enumerate(indices):
            original = flat[idx]
            flat[idx] = original + step
            plus = _training_loss(network, batch, truth)
            flat[idx] = original - step
            minus = _training_loss(network, batch, truth)
            flat[idx] = original
            numeric[k] = (plus - minus) / (2.0 * step)
        denom = np.linalg.norm(exact) + np.linalg.norm(numeric)
        error = float(np.linalg.norm(exact - numeric) / denom) if denom > 1e-8 else 0.0
        report[name] = error
        logger.debug("gradient check %s: relative error %.3e", name, error)
    network.bn.running_mean, network.bn.running_var = saved["bn.running_mean"], saved["bn.running_var"]
    return report
