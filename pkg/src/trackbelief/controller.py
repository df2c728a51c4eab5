"""Uncertainty-gated speed controller.

Maps (requested rpm, predicted entropy) to a scaled speed command through an
ordered tier table: each tier has an entropy upper bound and a throttle
scale factor, the last tier is open-ended. Bounds are lower-inclusive, so
an entropy sitting exactly on a bound takes the more cautious tier.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional

DEFAULT_MAX_ENTROPY_BITS = math.log2(7)


class ControllerError(ValueError):
    """Invalid controller input (impossible entropy or negative speed)."""


@dataclass(frozen=True)
class TierPolicy:
    """Ordered (entropy upper bound, scale) table with an open final tier.

    len(scales) == len(bounds) + 1; tier i applies on
    [bounds[i-1], bounds[i]) with bounds[-1] = -inf, bounds[len] = +inf.
    """

    bounds: tuple[float, ...]
    scales: tuple[float, ...]

    def __post_init__(self):
        problems = validate_policy(self)
        if problems:
            raise ControllerError("; ".join(problems))

    @property
    def n_tiers(self) -> int:
        return len(self.scales)

    @property
    def top_bound(self) -> float:
        """Entropy at which throttle is cut entirely (open tier entry)."""
        return self.bounds[-1] if self.bounds else math.inf

    def tier_for(self, entropy_bits: float) -> int:
        return bisect_right(self.bounds, entropy_bits)

    def scale_for(self, entropy_bits: float) -> float:
        return self.scales[self.tier_for(entropy_bits)]

    @staticmethod
    def from_config(cfg: dict) -> "TierPolicy":
        pol = cfg["policy"]
        return TierPolicy(tuple(float(b) for b in pol["bounds"]),
                          tuple(float(s) for s in pol["scales"]))

    @staticmethod
    def default() -> "TierPolicy":
        return TierPolicy((2.2, 2.3, 2.4, 2.6), (1.0, 0.9, 0.8, 0.6, 0.0))

    def to_table(self) -> list[list[Optional[float]]]:
        """(bound, scale) rows; the open tier carries a null bound."""
        rows: list[list[Optional[float]]] = []
        for bound, scale in zip(self.bounds, self.scales):
            rows.append([bound, scale])
        rows.append([None, self.scales[-1]])
        return rows


def validate_policy(policy, scales=None) -> list[str]:
    """Every violated TierPolicy invariant, empty when the policy is valid.

    Accepts a TierPolicy or raw (bounds, scales) sequences, so candidate
    tables can be checked before construction; violations are reported,
    not raised.
    """
    problems: list[str] = []
    if scales is None:
        bounds, scales = policy.bounds, policy.scales
    else:
        bounds, scales = tuple(policy), tuple(scales)
    if len(scales) != len(bounds) + 1:
        problems.append("need exactly one more scale than bounds")
        return problems
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        problems.append("bounds must be strictly increasing")
    if any(not math.isfinite(b) for b in bounds):
        problems.append("bounds must be finite")
    if any(s2 > s1 for s1, s2 in zip(scales, scales[1:])):
        problems.append("scale factors must be non-increasing")
    if any(not 0.0 <= s <= 1.0 for s in scales):
        problems.append("scale factors must lie in [0, 1]")
    if scales and scales[0] != 1.0:
        problems.append("first tier scale must be 1.0")
    if len(scales) > 1 and scales[-1] != 0.0:
        problems.append("last tier scale must be 0.0")
    return problems


@dataclass(frozen=True)
class SpeedCommand:
    requested_rpm: float
    scaled_rpm: float
    tier_index: int
    entropy_bits: float


def scale_speed(requested_rpm: float, entropy_bits: float,
                policy: Optional[TierPolicy] = None,
                max_entropy_bits: float = DEFAULT_MAX_ENTROPY_BITS) -> SpeedCommand:
    """Scale a speed request by the tier the entropy falls in.

    Entropy above the frame's maximum (plus a small slack) signals an
    upstream bug and raises rather than silently clamping.
    """
    policy = policy or TierPolicy.default()
    if requested_rpm < 0 or not math.isfinite(requested_rpm):
        raise ControllerError(f"invalid speed request {requested_rpm}")
    if entropy_bits < 0 or not math.isfinite(entropy_bits):
        raise ControllerError(f"invalid entropy {entropy_bits}")
    if entropy_bits > max_entropy_bits + 1e-6:
        raise ControllerError(
            f"entropy {entropy_bits} exceeds log2(frame)={max_entropy_bits}")
    tier = policy.tier_for(entropy_bits)
    return SpeedCommand(requested_rpm, requested_rpm * policy.scales[tier],
                        tier, entropy_bits)


class EntropySmoother:
    """Optional exponential smoothing of the entropy signal.

    Off by default (alpha 0 passes values through); raw per-frame gating
    matches the published policy but can chatter near tier bounds.
    """

    def __init__(self, alpha: float = 0.0):
        if not 0.0 <= alpha < 1.0:
            raise ControllerError("smoothing alpha must be in [0, 1)")
        self.alpha = alpha
        self._state: Optional[float] = None

    def update(self, entropy_bits: float) -> float:
        if self.alpha == 0.0 or self._state is None:
            self._state = entropy_bits
        else:
            self._state = self.alpha * self._state + (1 - self.alpha) * entropy_bits
        return self._state

    def reset(self) -> None:
        self._state = None
