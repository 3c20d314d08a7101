import numpy as np
import pytest
from scipy.io import wavfile

from rnx.audio_io import (
    AudioBuffer,
    AudioFormatError,
    concat_audio,
    load_audio,
    quantize_pcm16,
    store_audio,
)


def test_raw_int16_decoding(tmp_path):
    path = tmp_path / "x.raw"
    np.array([0, 16384, -16384, 32767, -32768], dtype="<i2").tofile(path)
    buf = load_audio(path)
    np.testing.assert_allclose(
        buf.samples, [0.0, 0.5, -0.5, 32767 / 32768, -1.0], atol=0
    )


def test_wav_pcm16_roundtrip_error_bound(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, 4800)
    store_audio(AudioBuffer(x), tmp_path / "x.wav")
    back = load_audio(tmp_path / "x.wav")
    assert len(back) == len(x)
    assert np.max(np.abs(back.samples - np.clip(x, -1, 32767 / 32768))) <= 1 / 32768


def test_raw_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.9, 0.9, 1000)
    store_audio(AudioBuffer(x), tmp_path / "x.raw")
    back = load_audio(tmp_path / "x.raw")
    assert np.max(np.abs(back.samples - x)) <= 1 / 32768


def test_store_clips_out_of_range():
    q = quantize_pcm16(np.array([2.0, -2.0, 1.0]))
    assert q.tolist() == [32767, -32768, 32767]


def test_quantization_rounds_to_nearest():
    q = quantize_pcm16(np.array([1.4 / 32768, -1.4 / 32768, 0.6 / 32768]))
    assert q.tolist() == [1, -1, 1]


def test_wrong_sample_rate_rejected(tmp_path):
    path = tmp_path / "bad.wav"
    wavfile.write(path, 44100, np.zeros(100, dtype=np.int16))
    with pytest.raises(AudioFormatError, match="44100"):
        load_audio(path)


def test_stereo_rejected(tmp_path):
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 48000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(AudioFormatError, match="channel"):
        load_audio(path)


def test_unsupported_dtype_rejected(tmp_path):
    path = tmp_path / "f64.wav"
    wavfile.write(path, 48000, np.zeros(100, dtype=np.float64))
    with pytest.raises(AudioFormatError, match="float64"):
        load_audio(path)


def test_float32_wav_loads(tmp_path):
    path = tmp_path / "f32.wav"
    x = np.linspace(-0.5, 0.5, 200, dtype=np.float32)
    wavfile.write(path, 48000, x)
    buf = load_audio(path)
    np.testing.assert_allclose(buf.samples, x.astype(np.float64), rtol=0, atol=0)


def test_empty_file_roundtrip(tmp_path):
    store_audio(AudioBuffer(np.zeros(0)), tmp_path / "empty.raw")
    assert len(load_audio(tmp_path / "empty.raw")) == 0


def test_format_inferred_from_extension(tmp_path):
    x = np.zeros(100)
    store_audio(AudioBuffer(x), tmp_path / "a.wav")
    store_audio(AudioBuffer(x), tmp_path / "a.raw")
    assert len(load_audio(tmp_path / "a.wav")) == 100
    assert len(load_audio(tmp_path / "a.raw")) == 100
    with pytest.raises(AudioFormatError, match="infer"):
        load_audio(tmp_path / "a.mp3")


def test_concat_order_and_empty():
    a = AudioBuffer(np.array([1.0, 2.0]) / 10)
    b = AudioBuffer(np.array([3.0]) / 10)
    np.testing.assert_array_equal(concat_audio([a, b]).samples, [0.1, 0.2, 0.3])
    assert len(concat_audio([])) == 0


def test_buffer_validation():
    with pytest.raises(AudioFormatError):
        AudioBuffer(np.zeros((10, 2)))
    with pytest.raises(AudioFormatError):
        AudioBuffer(np.zeros(10), sample_rate=16000)
