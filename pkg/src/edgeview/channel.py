"""Vehicle-to-infrastructure uplink: SNR, detection wall, rate, transfer time.

Powers are milliwatts internally (noise configured in dBm), distances
meters, rates bits per second.  The channel is evaluated per 1 s slot:
fading is redrawn each slot, so a transfer spanning several slots sees a
piecewise-constant rate profile.  Under receiver noise uncertainty there
is an SNR floor below which detection fails regardless of duration; a
transfer only counts when every slot it touches stays above that wall.
"""

from __future__ import annotations

import math
from typing import Callable

from .core import ChannelParams


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def snr(
    tx_power_mw: float,
    fading_gain: float,
    distance_m: float,
    params: ChannelParams,
) -> float:
    """Received signal-to-noise ratio (linear).

    ``fading_gain`` is the squared fading amplitude |h|^2.  Distances
    below one meter are clamped to one meter so the power law stays
    bounded near the mast.
    """
    if tx_power_mw < 0:
        raise ValueError("tx_power_mw must be >= 0")
    if fading_gain < 0:
        raise ValueError("fading_gain must be >= 0")
    dis = max(1.0, distance_m)
    noise_mw = dbm_to_mw(params.noise_dbm)
    return (
        tx_power_mw
        * fading_gain
        * params.antenna_constant
        * dis ** (-params.path_loss_exponent)
        / noise_mw
    )


def snr_wall(noise_uncertainty_db: float) -> float:
    """Minimum detectable SNR under the given noise uncertainty.

    Zero uncertainty gives no wall; the wall grows monotonically with
    the uncertainty.
    """
    if noise_uncertainty_db < 0:
        raise ValueError("noise_uncertainty_db must be >= 0")
    sigma = 10.0 ** (noise_uncertainty_db / 10.0)
    return (sigma * sigma - 1.0) / sigma


def transmission_rate(bandwidth_hz: float, snr_value: float) -> float:
    """Shannon capacity of the allocated band at the given SNR."""
    if bandwidth_hz < 0:
        raise ValueError("bandwidth_hz must be >= 0")
    if snr_value < 0:
        raise ValueError("snr must be >= 0")
    return bandwidth_hz * math.log2(1.0 + snr_value)


def transmission_time(
    size_bits: float,
    start_s: float,
    rate_of_slot: Callable[[int], float],
    horizon_end_s: float,
) -> float:
    """Seconds needed to move ``size_bits`` starting at ``start_s``.

    ``rate_of_slot(k)`` is the constant rate during [k, k+1).  The bits
    accumulate slot by slot, with a fractional final slot.  Returns
    math.inf when the cumulative bits cannot reach the size before
    ``horizon_end_s`` (an incomplete transfer, failed downstream).
    """
    if size_bits < 0:
        raise ValueError("size_bits must be >= 0")
    if size_bits == 0:
        return 0.0
    remaining = float(size_bits)
    t = start_s
    while t < horizon_end_s:
        slot = math.floor(t)
        slot_end = min(slot + 1.0, horizon_end_s)
        rate = rate_of_slot(slot)
        span = slot_end - t
        if rate > 0.0:
            if remaining <= rate * span:
                return (t + remaining / rate) - start_s
            remaining -= rate * span
        t = slot_end
    return math.inf


def transmission_success(
    start_s: float,
    duration_s: float,
    wall: float,
    horizon_end_s: float,
    snr_of_slot: Callable[[int], float],
    covered_of_slot: Callable[[int], bool],
) -> bool:
    """Whether a transfer occupying [start, start+duration] goes through.

    True only when the duration is finite, the interval ends by the
    horizon, and every slot the closed interval touches has SNR strictly
    above the wall with the vehicle still in coverage.
    """
    if not math.isfinite(duration_s):
        return False
    end = start_s + duration_s
    if end > horizon_end_s:
        return False
    for slot in range(math.floor(start_s), math.floor(end) + 1):
        if slot >= horizon_end_s:
            continue
        if not covered_of_slot(slot):
            return False
        if snr_of_slot(slot) <= wall:
            return False
    return True
