"""Frame-level transforms: windowed analysis, synthesis, and the DCT pair.

The stream is cut into 960-sample (20 ms) frames hopped by 480 samples, so
consecutive frames overlap by half. Both analysis and synthesis apply the
same sine-of-sine window; its squared values at offsets n and n+480 sum to
one, which is what makes plain overlap-add reconstruction exact.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

FRAME_LEN = 960
HOP = 480
NUM_BINS = FRAME_LEN // 2 + 1  # rfft bins, 50 Hz apart
BIN_HZ = 48000 / FRAME_LEN


def vorbis_window(n):
    """Window weight sin(pi/2 * sin^2(pi (n + 0.5) / N)) at sample index n.

    Accepts a scalar index or an index array.
    """
    n = np.asarray(n, dtype=np.float64)
    inner = np.sin(np.pi * (n + 0.5) / FRAME_LEN)
    return np.sin(0.5 * np.pi * inner * inner)


WINDOW = vorbis_window(np.arange(FRAME_LEN))
WINDOW.setflags(write=False)


def analyze_frame(frame: np.ndarray) -> np.ndarray:
    """Window a 960-sample frame and return its 481-bin half spectrum."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (FRAME_LEN,):
        raise ValueError(f"expected a frame of {FRAME_LEN} samples, got shape {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("non-finite samples in analysis frame")
    return np.fft.rfft(frame * WINDOW)


def synthesize_frame(spectrum: np.ndarray, overlap: np.ndarray):
    """Invert one spectrum and fold it into the overlap-add stream.

    Returns (out, carry): `out` is the 480 finished output samples (the
    frame's first half plus the carry from the previous frame), `carry` is
    the windowed second half to be added to the next frame's output.
    """
    spectrum = np.asarray(spectrum)
    if spectrum.shape != (NUM_BINS,):
        raise ValueError(f"expected {NUM_BINS} spectrum bins, got shape {spectrum.shape}")
    overlap = np.asarray(overlap, dtype=np.float64)
    if overlap.shape != (HOP,):
        raise ValueError(f"expected {HOP} overlap samples, got shape {overlap.shape}")
    frame = np.fft.irfft(spectrum, FRAME_LEN) * WINDOW
    out = frame[:HOP] + overlap
    carry = frame[HOP:].copy()
    return out, carry


def dct_ii(values: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II of a real vector."""
    return scipy.fft.dct(np.asarray(values, dtype=np.float64), type=2, norm="ortho")


def idct_ii(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct_ii (orthonormal DCT-III)."""
    return scipy.fft.idct(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho")
