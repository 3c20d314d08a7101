"""Pitch-period estimation and the pitch comb filter.

The estimator keeps 1760 samples of history: the current 960-sample frame
plus 800 extra samples so every candidate lag in [60, 800] has a full
delayed window to correlate against. Voiced frames then get a comb filter
that averages the spectrum with its pitch-delayed twin, weighted per band
by how coherent the two actually are.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from rnx.bands import BAND_WEIGHTS, NUM_BANDS
from rnx.dsp import FRAME_LEN, HOP, NUM_BINS

PITCH_MIN_PERIOD = 60
PITCH_MAX_PERIOD = 800
HISTORY_LEN = FRAME_LEN + PITCH_MAX_PERIOD

# Correlation at a candidate sub-period must reach this fraction of the raw
# peak to override it.
SUBHARMONIC_RATIO = 0.9
SILENCE_FLOOR = 1e-10


@dataclass
class PitchState:
    """Rolling input history plus the last accepted estimate."""

    history: np.ndarray = field(default_factory=lambda: np.zeros(HISTORY_LEN))
    last_period: int = 480
    last_corr: float = 0.0


def _normalized_lag_correlations(history: np.ndarray):
    """r(T) for every lag T in [60, 800], as (lags, r) arrays.

    r(T) correlates the current frame (the last 960 history samples) with
    the window starting T samples earlier, normalized by both energies.
    """
    frame = history[PITCH_MAX_PERIOD:]
    e_frame = float(frame @ frame)
    # valid-mode correlation: out[j] = sum_i history[j+i] * frame[i],
    # so lag T corresponds to j = 800 - T
    num_by_j = scipy.signal.correlate(history, frame, mode="valid", method="auto")
    sq = np.concatenate(([0.0], np.cumsum(history * history)))
    lags = np.arange(PITCH_MIN_PERIOD, PITCH_MAX_PERIOD + 1)
    starts = PITCH_MAX_PERIOD - lags
    e_delayed = sq[starts + FRAME_LEN] - sq[starts]
    num = num_by_j[starts]
    r = num / np.sqrt(e_frame * e_delayed + 1e-15)
    return lags, r


def _prefer_subharmonics(lags: np.ndarray, r: np.ndarray, best_lag: int) -> int:
    """Swap the raw peak for the shortest near-divisor period that holds up.

    The raw argmax often lands on a multiple of the true period (the
    correlation is just as high there). Scan candidate divisors best/k for
    k = 2, 3, ..., refine each within +/-2 samples, and accept the smallest
    period whose correlation reaches SUBHARMONIC_RATIO of the peak.
    """
    peak = r[best_lag - PITCH_MIN_PERIOD]
    chosen = best_lag
    for k in range(2, best_lag // PITCH_MIN_PERIOD + 1):
        center = int(round(best_lag / k))
        lo = max(center - 2, PITCH_MIN_PERIOD)
        hi = min(center + 2, PITCH_MAX_PERIOD)
        if lo > hi:
            continue
        window = r[lo - PITCH_MIN_PERIOD : hi - PITCH_MIN_PERIOD + 1]
        cand = lo + int(np.argmax(window))
        if r[cand - PITCH_MIN_PERIOD] >= SUBHARMONIC_RATIO * peak:
            chosen = cand
    return chosen


def estimate_pitch(state: PitchState, frame: np.ndarray):
    """Advance the history by one hop and estimate (period, strength).

    The frame is the current 960-sample analysis window; its last 480
    samples are the new hop (the first 480 already sit in the history).
    On silence the estimate falls back to the previous period with zero
    strength.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (FRAME_LEN,):
        raise ValueError(f"expected a frame of {FRAME_LEN} samples, got shape {frame.shape}")
    state.history = np.concatenate((state.history[HOP:], frame[FRAME_LEN - HOP :]))

    current = state.history[PITCH_MAX_PERIOD:]
    if float(current @ current) < SILENCE_FLOOR:
        state.last_corr = 0.0
        return state.last_period, 0.0

    lags, r = _normalized_lag_correlations(state.history)
    best = int(lags[np.argmax(r)])
    best = _prefer_subharmonics(lags, r, best)
    strength = float(np.clip(r[best - PITCH_MIN_PERIOD], 0.0, 1.0))
    state.last_period = best
    state.last_corr = strength
    return best, strength


def pitch_delayed_frame(state: PitchState, period: int) -> np.ndarray:
    """The 960-sample window ending `period` samples before the current frame."""
    if not PITCH_MIN_PERIOD <= period <= PITCH_MAX_PERIOD:
        raise ValueError(f"period {period} outside [{PITCH_MIN_PERIOD}, {PITCH_MAX_PERIOD}]")
    start = PITCH_MAX_PERIOD - period
    return state.history[start : start + FRAME_LEN].copy()


def comb_filter(x_spec: np.ndarray, p_spec: np.ndarray, band_corr: np.ndarray) -> np.ndarray:
    """Average the spectrum with its pitch-delayed twin, per-band weighted.

    Y(k) = (X(k) + a(k) P(k)) / (1 + a(k)), where a interpolates the squared
    clipped band correlations onto bins. A band with zero correlation passes
    through untouched; a fully coherent band keeps unit gain because the
    denominator renormalizes the sum.
    """
    x_spec = np.asarray(x_spec)
    p_spec = np.asarray(p_spec)
    band_corr = np.asarray(band_corr, dtype=np.float64)
    if x_spec.shape != (NUM_BINS,) or p_spec.shape != (NUM_BINS,):
        raise ValueError("comb_filter expects two half spectra")
    if band_corr.shape != (NUM_BANDS,):
        raise ValueError(f"expected {NUM_BANDS} band correlations, got shape {band_corr.shape}")
    alpha_band = np.clip(band_corr, 0.0, 1.0) ** 2
    alpha = alpha_band @ BAND_WEIGHTS
    return (x_spec + alpha * p_spec) / (1.0 + alpha)
