"""Unsupervised sum-rate training, Adam, and layer-freezing fine-tuning.

The gradient is derived by hand for the fixed architecture: rate objective
-> SINR -> ``G W`` -> power normalization -> complex readout -> layers.
Complex gradients use the convention ``dL/dRe + 1j * dL/dIm``.
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import gnn
from .channel import LinkBudget
from .errors import InvalidArgumentError
from .precoders import sum_rate

log = logging.getLogger(__name__)

LN2 = np.log(2.0)


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 20
    batch_size: int = 512
    train_snr_db: float = 10.0
    total_power: float = 1.0
    freeze_prefix: int = 0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.freeze_prefix <= gnn.NUM_LAYERS:
            raise InvalidArgumentError(f"freeze_prefix must be in 0..{gnn.NUM_LAYERS}")
        if not self.total_power > 0:
            raise InvalidArgumentError(f"total_power must be > 0, got {self.total_power}")

    @property
    def budget(self):
        return LinkBudget.from_snr(self.total_power, self.train_snr_db)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_sum_rate: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["epoch", "loss", "val_sum_rate", "seconds"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.loss), repr(r.val_sum_rate), f"{r.seconds:.3f}"])


@dataclass
class GradientSet:
    """Per-layer weight gradients mirroring ``GnnParams.layers``."""

    layers: list

    def masked(self, trainable):
        """Copy with the gradients of non-trainable layers set to exactly zero."""
        return GradientSet([
            g.copy() if t else gnn.LayerWeights(*(np.zeros_like(a) for a in g.arrays()))
            for g, t in zip(self.layers, trainable)
        ])


def input_scale_for(channels):
    """RMS channel magnitude, ``sqrt(mean |g|^2)``, used to scale GNN inputs."""
    scale = float(np.sqrt(np.mean(np.abs(np.asarray(channels)) ** 2)))
    if not scale > 0:
        raise InvalidArgumentError("channel set has zero power")
    return scale


def _as_batch(batch):
    b = np.asarray(batch)
    if b.ndim == 2:
        b = b[None]
    if b.ndim != 3 or b.shape[0] == 0:
        raise InvalidArgumentError(f"batch must be a non-empty (B, K, M) array, got {b.shape}")
    return b


def loss(batch, params, budget):
    """Negative mean sum-rate over the batch."""
    b = _as_batch(batch)
    w = gnn.forward(b, params, budget.total_power)
    return -float(np.mean(sum_rate(b, w, budget.noise_variance).sum_rate))


def loss_and_gradients(batch, params, budget):
    """Loss and its exact gradient w.r.t. every weight matrix."""
    g = _as_batch(batch)
    n = g.shape[0]
    noise = budget.noise_variance
    w, cache = gnn.forward_cached(g, params, budget.total_power)

    a = g @ w
    gains = np.abs(a) ** 2
    total = gains.sum(axis=-1) + noise
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    interf = total - signal
    value = -float(np.mean(np.sum(np.log2(total / interf), axis=-1)))

    # d(-mean sum_k log2(total_k / interf_k)) / d gains[k, l]
    eye = np.eye(gains.shape[-1], dtype=bool)
    d_gains = 1.0 / total[..., None] - np.where(eye, 0.0, 1.0 / interf[..., None])
    d_gains *= -1.0 / (n * LN2)

    d_a = 2.0 * d_gains * a
    d_w = np.conj(np.swapaxes(g, -1, -2)) @ d_a

    # W = alpha * V with alpha = sqrt(P / sum |V|^2)
    raw = cache["raw"]
    power = np.sum(np.abs(raw) ** 2, axis=(-2, -1))
    alpha = np.sqrt(budget.total_power / power)
    proj = np.sum(np.real(np.conj(d_w) * raw), axis=(-2, -1))
    d_raw = alpha[:, None, None] * d_w - (alpha * proj / power)[:, None, None] * raw

    d_t = np.swapaxes(d_raw, -1, -2)
    d_out = np.stack([d_t.real, d_t.imag], axis=-1)
    return value, GradientSet(gnn.backward(cache, d_out, params))


def gradients(batch, params, budget):
    return loss_and_gradients(batch, params, budget)[1]


def freeze_layers(params, l):
    """Trainability mask: layers ``1..l`` frozen, the rest trainable."""
    if not 0 <= l <= params.num_layers:
        raise InvalidArgumentError(f"freeze level must be in 0..{params.num_layers}, got {l}")
    return [i >= l for i in range(params.num_layers)]


class Adam:
    """Adam with bias correction; frozen layers are skipped entirely."""

    def __init__(self, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    @classmethod
    def from_config(cls, config):
        return cls(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)

    def step(self, params, grads, trainable=None):
        """Update ``params`` in place and return it."""
        if self.m is None:
            self.m = [[np.zeros_like(a) for a in l.arrays()] for l in params.layers]
            self.v = [[np.zeros_like(a) for a in l.arrays()] for l in params.layers]
        if trainable is None:
            trainable = [True] * params.num_layers
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (layer, grad) in enumerate(zip(params.layers, grads.layers)):
            if not trainable[i]:
                continue
            for j, (w, g) in enumerate(zip(layer.arrays(), grad.arrays())):
                m, v = self.m[i][j], self.v[i][j]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                w -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
        return params


def mean_sum_rate(params, channels, budget, chunk=4096):
    """Mean GNN sum-rate over a channel set, evaluated in fixed-size chunks."""
    return float(np.mean(gnn_sum_rates(params, channels, budget, chunk)))


def gnn_sum_rates(params, channels, budget, chunk=4096):
    channels = _as_batch(channels)
    out = []
    for start in range(0, channels.shape[0], chunk):
        g = channels[start:start + chunk]
        w = gnn.forward(g, params, budget.total_power)
        out.append(sum_rate(g, w, budget.noise_variance).sum_rate)
    return np.concatenate(out)


def train(params, train_set, val_set, config, rng=None, trainable=None, input_scale=None):
    """Mini-batch Adam on the negative sum-rate at the fixed training SNR.

    Returns ``(trained_params, history)``; the input params are not modified.
    ``input_scale`` defaults to the RMS gain of ``train_set``.
    """
    train_set = _as_batch(train_set)
    val_set = _as_batch(val_set)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    params = params.copy()
    params.input_scale = input_scale_for(train_set) if input_scale is None else input_scale
    if trainable is None:
        trainable = freeze_layers(params, config.freeze_prefix)
    budget = config.budget
    opt = Adam.from_config(config)
    history = TrainHistory()
    n = train_set.shape[0]
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = train_set[order[start:start + config.batch_size]]
            value, grads = loss_and_gradients(batch, params, budget)
            total += value * batch.shape[0]
            if any(trainable):
                opt.step(params, grads, trainable)
        val = mean_sum_rate(params, val_set, budget)
        record = EpochRecord(epoch, total / n, val, time.perf_counter() - t0)
        history.records.append(record)
        log.info("epoch %d loss %.4f val_sum_rate %.4f", epoch, record.loss, val)
    return params, history


def fine_tune(pretrained, real_train, real_val, config, rng=None):
    """Continue training on the target domain with the first ``freeze_prefix`` layers fixed.

    The input scale is recomputed from ``real_train``.
    """
    trainable = freeze_layers(pretrained, config.freeze_prefix)
    return train(pretrained, real_train, real_val, config, rng=rng, trainable=trainable)
