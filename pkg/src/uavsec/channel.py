"""Line-of-sight radio model for the UE -> UAV uplink and the UE -> eavesdropper wiretap link.

Air-to-ground links use a path-loss exponent of 2, ground-to-ground links an
exponent of 4. The reference gain and the noise power only ever appear as a
ratio, so they are carried as a single linear SNR at 1 m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Tuple


@dataclass(frozen=True)
class Position3:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Position3.{name} must be finite, got {getattr(self, name)!r}")
        if self.z < 0:
            raise ValueError(f"Position3.z must be >= 0, got {self.z!r}")

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class ChannelParams:
    """Linear reference SNR, peak UE power (W) and horizontal bounds (m)."""

    zeta0_over_sigma2: float = 1e4
    p_max: float = 1.0
    bounds: Tuple[float, float] = (100.0, 100.0)

    def __post_init__(self):
        if not self.zeta0_over_sigma2 > 0:
            raise ValueError("zeta0_over_sigma2 must be > 0")
        if not self.p_max > 0:
            raise ValueError("p_max must be > 0")
        if len(self.bounds) != 2 or min(self.bounds) < 0:
            raise ValueError("bounds must be a pair of non-negative lengths")


def distance(a: Position3, b: Position3) -> float:
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def a2g_gain(d_u: float, zeta0: float) -> float:
    """Air-to-ground gain ``zeta0 / d_u**2``."""
    if not d_u > 0:
        raise ValueError(f"air-to-ground distance must be > 0, got {d_u!r}")
    return zeta0 / d_u**2


def g2g_gain(d_j: float, zeta0: float) -> float:
    """Ground-to-ground gain ``zeta0 / d_j**4``."""
    if not d_j > 0:
        raise ValueError(f"ground-to-ground distance must be > 0, got {d_j!r}")
    return zeta0 / d_j**4


def snr_ue(p: float, d_u: float, params: ChannelParams) -> float:
    """Instantaneous uplink SNR at the UAV. This is also the per-slot reward."""
    if p < 0:
        raise ValueError(f"transmit power must be >= 0, got {p!r}")
    return p * a2g_gain(d_u, params.zeta0_over_sigma2)


def capacity_ue(p: float, d_u: float, params: ChannelParams) -> float:
    return math.log2(1.0 + snr_ue(p, d_u, params))


def capacity_eve(p: float, d_j: float, params: ChannelParams) -> float:
    if p < 0:
        raise ValueError(f"transmit power must be >= 0, got {p!r}")
    return math.log2(1.0 + p * g2g_gain(d_j, params.zeta0_over_sigma2))


def secrecy_rate_per_slot(c_u: float, c_j: float) -> float:
    return max(c_u - c_j, 0.0)


def secrecy_capacity(per_slot: Iterable[Tuple[float, float]]) -> float:
    """Average of the clipped rate difference over all slots."""
    rates = [secrecy_rate_per_slot(c_u, c_j) for c_u, c_j in per_slot]
    if not rates:
        raise ValueError("secrecy_capacity needs at least one slot")
    return math.fsum(rates) / len(rates)
