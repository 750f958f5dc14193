"""Per-step rewards: plain fuel penalty and the engine-efficiency shaping."""

from __future__ import annotations

from dataclasses import dataclass

FUEL_ONLY = "fuel_only"
SHAPED = "shaped"


@dataclass(frozen=True)
class RewardSpec:
    kind: str = SHAPED
    off_bonus: float = 2.46
    band_lo: float = 1.1e5
    band_hi: float = 1.9e5
    p_max: float = 2.75e5
    c3_offset: float = -0.58
    c3_slope: float = 2e-6
    c4_offset: float = -0.06
    c4_slope: float = 6e-6
    floor: float = -2.0

    def __post_init__(self):
        if self.kind not in (FUEL_ONLY, SHAPED):
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if not (self.band_lo < self.band_hi < self.p_max):
            raise ValueError("need band_lo < band_hi < p_max")

    def __call__(self, p_eng: float, eta: float, fuel_rate_kg_s: float, dt: float) -> float:
        if self.kind == FUEL_ONLY:
            return fuel_reward(fuel_rate_kg_s, dt)
        return shaped_reward(p_eng, eta, self)


DEFAULT_SHAPING = RewardSpec()


def fuel_reward(fuel_rate_kg_s: float, dt: float) -> float:
    """Negative fuel mass burnt over the step (kg)."""
    if fuel_rate_kg_s < 0 or dt <= 0:
        raise ValueError("need fuel_rate >= 0 and dt > 0")
    return -fuel_rate_kg_s * dt


def shaped_reward(p_eng: float, eta: float, spec: RewardSpec = DEFAULT_SHAPING) -> float:
    """Five-branch engine-efficiency reward.

    Engine off earns the largest value, the high-efficiency band earns
    ``eta + 1`` (edges included), the regions below and above the band are
    penalised linearly in the distance to the band, and anything at or beyond
    ``p_max`` gets the floor.
    """
    if p_eng == 0:
        return spec.off_bonus
    if spec.band_lo <= p_eng <= spec.band_hi:
        return eta + 1.0
    if 0 < p_eng < spec.band_lo:
        return spec.c3_offset - spec.c3_slope * (spec.band_lo - p_eng) - eta
    if spec.band_hi < p_eng < spec.p_max:
        return spec.c4_offset + spec.c4_slope * (spec.band_hi - p_eng) - eta
    return spec.floor
