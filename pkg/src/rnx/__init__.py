"""Hybrid recurrent speech denoiser toolkit.

Fixed-rate (48 kHz) band-gain denoising: windowed spectral analysis, a
22-band energy model, pitch-comb filtering, a small recurrent network that
predicts per-band gains and voice activity, plus the training and
evaluation toolchain around it.
"""

from rnx.audio_io import AudioBuffer, load_audio, store_audio
from rnx.dsp import FRAME_LEN, HOP, NUM_BINS

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "load_audio",
    "store_audio",
    "FRAME_LEN",
    "HOP",
    "NUM_BINS",
    "__version__",
]
