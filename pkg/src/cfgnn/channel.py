"""Synthetic channel generation for the indoor-hotspot NLOS scenario.

Channels are complex arrays of shape ``(K, M)``: one row per UE, one column
per AP.  Each coefficient is ``sqrt(beta) * h`` where ``beta`` is the linear
large-scale gain from the path-loss law and ``h ~ CN(0, 1)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class PathLossParams:
    """InH-NLOS path-loss constants and the distance clamp.

    ``path_loss_db = intercept_db + dist_slope*log10(d) + freq_slope*log10(f_GHz)``
    """

    carrier_ghz: float = 3.5
    d_min: float = 1.0
    intercept_db: float = 32.4
    dist_slope: float = 31.9
    freq_slope: float = 20.0

    def __post_init__(self):
        if not (np.isfinite(self.carrier_ghz) and self.carrier_ghz > 0):
            raise InvalidArgumentError(f"carrier_ghz must be > 0, got {self.carrier_ghz}")
        if not (np.isfinite(self.d_min) and self.d_min > 0):
            raise InvalidArgumentError(f"d_min must be > 0, got {self.d_min}")


@dataclass(frozen=True)
class Geometry:
    """AP and UE positions in meters, arrays of shape ``(M, 2)`` and ``(K, 2)``."""

    ap_positions: np.ndarray
    ue_positions: np.ndarray

    def __post_init__(self):
        for name in ("ap_positions", "ue_positions"):
            pos = np.asarray(getattr(self, name), dtype=float)
            if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] != 2:
                raise InvalidArgumentError(f"{name} must have shape (n>=1, 2), got {pos.shape}")
            object.__setattr__(self, name, pos)

    @property
    def num_aps(self):
        return self.ap_positions.shape[0]

    @property
    def num_ues(self):
        return self.ue_positions.shape[0]

    def distances(self):
        """Unclamped UE-to-AP distances, shape ``(K, M)``."""
        diff = self.ue_positions[:, None, :] - self.ap_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


@dataclass(frozen=True)
class LinkBudget:
    """Total transmit power and noise variance (watts) for one SNR point."""

    total_power: float
    noise_variance: float

    def __post_init__(self):
        if not self.total_power > 0:
            raise InvalidArgumentError(f"total_power must be > 0, got {self.total_power}")
        if not self.noise_variance > 0:
            raise InvalidArgumentError(f"noise_variance must be > 0, got {self.noise_variance}")

    @classmethod
    def from_snr(cls, total_power, snr_tx_db):
        return cls(total_power, noise_variance_for_snr(total_power, snr_tx_db))

    @property
    def snr_tx_db(self):
        return 10.0 * np.log10(self.total_power / self.noise_variance)


def path_loss_db(distance_m, params=PathLossParams()):
    """Path loss in dB; distances below ``params.d_min`` are clamped to it.

    Accepts scalars or arrays and returns the same shape.
    """
    d = np.asarray(distance_m, dtype=float)
    if not np.all(np.isfinite(d)):
        raise InvalidArgumentError("distance must be finite")
    if np.any(d < 0):
        raise InvalidArgumentError("distance must be non-negative")
    d = np.maximum(d, params.d_min)
    pl = (params.intercept_db
          + params.dist_slope * np.log10(d)
          + params.freq_slope * np.log10(params.carrier_ghz))
    return pl if pl.ndim else float(pl)


def sample_small_scale(k, m, rng):
    """i.i.d. CN(0, 1) fading, shape ``(k, m)``."""
    if k < 1 or m < 1:
        raise InvalidArgumentError(f"invalid fading shape ({k}, {m})")
    parts = rng.standard_normal((2, k, m))
    return (parts[0] + 1j * parts[1]) * np.sqrt(0.5)


def sample_geometry(area_side_m, m, k, rng):
    """Uniform i.i.d. AP and UE placement over ``[0, area_side_m]^2``."""
    if not area_side_m > 0:
        raise InvalidArgumentError(f"area_side_m must be > 0, got {area_side_m}")
    if m < 1 or k < 1:
        raise InvalidArgumentError(f"need m >= 1 and k >= 1, got m={m}, k={k}")
    aps = rng.uniform(0.0, area_side_m, size=(m, 2))
    ues = rng.uniform(0.0, area_side_m, size=(k, 2))
    return Geometry(aps, ues)


def large_scale_gain(geom, params=PathLossParams()):
    """Linear large-scale gain ``10**(-PL/10)`` per link, shape ``(K, M)``."""
    return 10.0 ** (-path_loss_db(geom.distances(), params) / 10.0)


def generate_channel(geom, params, rng, fading=None):
    """Draw one channel matrix ``G`` of shape ``(K, M)``.

    ``fading`` overrides the small-scale draw (used by tests to inject a
    known ``h``); when given, ``rng`` is not consumed.
    """
    beta = large_scale_gain(geom, params)
    if fading is None:
        fading = sample_small_scale(geom.num_ues, geom.num_aps, rng)
    else:
        fading = np.broadcast_to(np.asarray(fading, dtype=complex), beta.shape)
    return np.sqrt(beta) * fading


def noise_variance_for_snr(total_power, snr_tx_db):
    """Noise variance giving transmit SNR ``10*log10(P_T / sigma^2) = snr_tx_db``."""
    if not total_power > 0:
        raise InvalidArgumentError(f"total_power must be > 0, got {total_power}")
    return total_power / 10.0 ** (snr_tx_db / 10.0)
