"""Linear precoders and rate metrics.

Conventions: the channel ``G`` is ``(..., K, M)`` and a precoder ``W`` is
``(..., M, K)``, so ``(G @ W)[k, l] = g_k^T w_l``.  All functions accept any
number of leading batch dimensions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePrecoderError, InvalidArgumentError, SingularChannelError

ZF_COND_MAX = 1e12


@dataclass
class RateReport:
    """Per-UE SINR and rate (bits/channel use) plus their sum.

    Arrays carry the same leading batch shape as the channel they came from.
    """

    sinr_per_ue: np.ndarray
    rate_per_ue: np.ndarray
    sum_rate: np.ndarray


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def transmit_power(w):
    """``trace(W W^H)`` per matrix."""
    return np.sum(np.abs(w) ** 2, axis=(-2, -1))


def normalize_power(w_raw, total_power):
    """Scale ``w_raw`` so that ``trace(W W^H) = total_power``."""
    if not total_power > 0:
        raise InvalidArgumentError(f"total_power must be > 0, got {total_power}")
    w_raw = np.asarray(w_raw)
    power = transmit_power(w_raw)
    if np.any(power == 0) or not np.all(np.isfinite(power)):
        raise DegeneratePrecoderError("precoder has zero or non-finite total power")
    alpha = np.sqrt(total_power / power)
    return w_raw * alpha[..., None, None]


def conjugate_beamforming(g, total_power):
    """CB precoder ``W = alpha * G^H``."""
    return normalize_power(_herm(np.asarray(g)), total_power)


def gram_condition(g):
    """Condition number of ``G G^H`` per matrix (inf when rank-deficient)."""
    g = np.asarray(g)
    gram = g @ _herm(g)
    s = np.linalg.svd(gram, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.where(s[..., -1] > 0, s[..., 0] / s[..., -1], np.inf)


def zero_forcing(g, total_power, cond_max=ZF_COND_MAX):
    """ZF precoder ``W = alpha * G^H (G G^H)^{-1}``.

    Raises SingularChannelError when ``K > M`` or when any Gram matrix has
    condition number above ``cond_max``.
    """
    g = np.asarray(g)
    k, m = g.shape[-2:]
    if k > m:
        raise SingularChannelError(f"zero forcing needs K <= M, got K={k}, M={m}")
    cond = gram_condition(g)
    if np.any(cond > cond_max):
        raise SingularChannelError(
            f"G G^H is ill-conditioned (cond={np.max(cond):.3g} > {cond_max:.3g})")
    gram = g @ _herm(g)
    # (G G^H)^{-1} G, whose Hermitian is the unnormalized ZF precoder
    w0 = _herm(np.linalg.solve(gram, g))
    return normalize_power(w0, total_power)


def _signal_interference(g, w):
    gains = np.abs(np.asarray(g) @ np.asarray(w)) ** 2
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    interference = gains.sum(axis=-1) - signal
    return signal, interference


def sinr_per_ue(g, w, noise_variance):
    """``|g_k^T w_k|^2 / (sum_{l != k} |g_k^T w_l|^2 + sigma^2)`` for each UE."""
    if not noise_variance > 0:
        raise InvalidArgumentError(f"noise_variance must be > 0, got {noise_variance}")
    g = np.asarray(g)
    w = np.asarray(w)
    if g.shape[-1] != w.shape[-2] or g.shape[-2] != w.shape[-1]:
        raise InvalidArgumentError(f"shape mismatch: G {g.shape}, W {w.shape}")
    signal, interference = _signal_interference(g, w)
    return signal / (interference + noise_variance)


def sum_rate(g, w, noise_variance):
    sinr = sinr_per_ue(g, w, noise_variance)
    rates = np.log2(1.0 + sinr)
    return RateReport(sinr, rates, rates.sum(axis=-1))
