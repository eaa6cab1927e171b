"""User geometry and MIMO channel generation.

Users are dropped uniformly by area inside a disk cell.  The propagation
coefficient between each transmit and receive antenna is a small-scale
i.i.d. complex Gaussian factor scaled by a per-user large-scale factor
(power-law path loss times log-normal shadowing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import as_rng


@dataclass(frozen=True)
class CellConfig:
    """Cell geometry and propagation parameters (linear scale, unit noise).

    Power quantities are noise-normalized: ``noise_variance`` is the per-user
    receiver noise power and defaults to 1, so transmit powers quoted in dB
    are relative to unit noise.  ``min_distance_m`` keeps the power-law path
    loss finite near the transmitter.
    """

    radius_m: float = 800.0
    path_loss_factor: float = 1.0
    path_loss_exponent: float = 3.7
    shadow_std_db: float = 10.0
    noise_variance: float = 1.0
    min_distance_m: float = 10.0
    reference_distance_m: float = 1000.0

    def __post_init__(self):
        if self.radius_m <= 0:
            raise ValueError("radius_m must be positive")
        if self.path_loss_factor <= 0:
            raise ValueError("path_loss_factor must be positive")
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be positive")
        if self.shadow_std_db < 0:
            raise ValueError("shadow_std_db must be nonnegative")
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")
        if not 0 < self.min_distance_m < self.radius_m:
            raise ValueError("min_distance_m must lie in (0, radius_m)")
        if self.reference_distance_m <= 0:
            raise ValueError("reference_distance_m must be positive")


@dataclass(frozen=True)
class UserDrop:
    """Positions (meters, relative to the base station) of one user drop."""

    positions: np.ndarray  # (K, 2)
    distances: np.ndarray  # (K,)

    @property
    def n_users(self) -> int:
        return len(self.distances)


@dataclass(frozen=True)
class ChannelMatrix:
    """Complex channel between the array and one user, with its large-scale gain."""

    entries: np.ndarray  # (N_R, N_T) complex
    large_scale_gain: float

    @property
    def n_rx(self) -> int:
        return self.entries.shape[0]

    @property
    def n_tx(self) -> int:
        return self.entries.shape[1]


def drop_users(cfg: CellConfig, k: int, seed) -> UserDrop:
    """Drop ``k`` users uniformly by area over the annulus [min_distance, radius].

    Uniform-by-area means the squared radius is uniform on
    (min_distance^2, radius^2).  Deterministic for a given seed/generator.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    rng = as_rng(seed)
    lo2 = cfg.min_distance_m**2
    hi2 = cfg.radius_m**2
    r = np.sqrt(lo2 + (hi2 - lo2) * rng.random(k))
    theta = 2.0 * np.pi * rng.random(k)
    positions = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return UserDrop(positions=positions, distances=r)


def large_scale_gain(cfg: CellConfig, distance_m: float, seed) -> float:
    """Large-scale power gain: c * (d/d_ref)^(-eta) * 10^(X/10), X ~ N(0, shadow_std^2).

    The path-loss factor is the gain at the reference distance (1 km by
    default, so unit factor gives workable link budgets against unit noise
    across an 800 m cell).  The log-normal shadowing draw is taken once per
    call (one per user per drop); pass ``shadow_std_db=0`` for a
    deterministic path-loss-only gain.
    """
    if distance_m <= 0:
        raise ValueError("distance_m must be positive")
    rng = as_rng(seed)
    shadow_db = rng.normal(0.0, cfg.shadow_std_db)
    ratio = distance_m / cfg.reference_distance_m
    return float(
        cfg.path_loss_factor * ratio ** (-cfg.path_loss_exponent) * 10.0 ** (shadow_db / 10.0)
    )


def sample_channel(n_rx: int, n_tx: int, large_scale: float, seed) -> ChannelMatrix:
    """i.i.d. CN(0, 1) small-scale entries scaled by sqrt(large_scale)."""
    if n_rx < 1 or n_tx < 1:
        raise ValueError("n_rx and n_tx must be at least 1")
    if large_scale < 0:
        raise ValueError("large_scale must be nonnegative")
    rng = as_rng(seed)
    re = rng.standard_normal((n_rx, n_tx))
    im = rng.standard_normal((n_rx, n_tx))
    entries = np.sqrt(large_scale / 2.0) * (re + 1j * im)
    return ChannelMatrix(entries=entries, large_scale_gain=float(large_scale))


def user_channels(cfg: CellConfig, drop: UserDrop, n_rx: int, n_tx: int, seed) -> list[ChannelMatrix]:
    """Per-user channels for one drop: shadowed large-scale gain + small-scale draw.

    Draws are consumed in user order from the one generator, so results are
    bit-reproducible for a fixed drop and seed.
    """
    rng = as_rng(seed)
    channels = []
    for d in drop.distances:
        gain = large_scale_gain(cfg, float(d), rng)
        channels.append(sample_channel(n_rx, n_tx, gain, rng))
    return channels
