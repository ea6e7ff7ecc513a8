import numpy as np
import pytest

from dualbeam.audio import (AudioBuffer, MultichannelAudio, read_wav,
                            read_wav_mono, write_wav)
from dualbeam.errors import DataError, InvalidInputError


def test_audio_buffer_basic():
    buf = AudioBuffer(np.zeros(16000), 16000)
    assert buf.num_samples == 16000
    assert buf.duration == pytest.approx(1.0)


def test_audio_buffer_rejects_nan():
    samples = np.zeros(100)
    samples[3] = np.nan
    with pytest.raises(InvalidInputError):
        AudioBuffer(samples, 16000)


def test_audio_buffer_rejects_inf():
    samples = np.zeros(100)
    samples[7] = np.inf
    with pytest.raises(InvalidInputError):
        AudioBuffer(samples, 16000)


def test_audio_buffer_rejects_bad_rate():
    with pytest.raises(InvalidInputError):
        AudioBuffer(np.zeros(10), 0)
    with pytest.raises(InvalidInputError):
        AudioBuffer(np.zeros(10), -8000)


def test_audio_buffer_rejects_2d():
    with pytest.raises(InvalidInputError):
        AudioBuffer(np.zeros((2, 100)), 16000)


def test_multichannel_from_buffers():
    rng = np.random.default_rng(0)
    bufs = [AudioBuffer(rng.standard_normal(500), 16000) for _ in range(4)]
    multi = MultichannelAudio.from_buffers(bufs)
    assert multi.num_channels == 4
    assert multi.num_samples == 500
    for d in range(4):
        np.testing.assert_array_equal(multi.channel(d).samples, bufs[d].samples)


def test_multichannel_rejects_length_mismatch():
    a = AudioBuffer(np.zeros(100), 16000)
    b = AudioBuffer(np.zeros(101), 16000)
    with pytest.raises(InvalidInputError):
        MultichannelAudio.from_buffers([a, b])


def test_multichannel_rejects_rate_mismatch():
    a = AudioBuffer(np.zeros(100), 16000)
    b = AudioBuffer(np.zeros(100), 8000)
    with pytest.raises(InvalidInputError):
        MultichannelAudio.from_buffers([a, b])


def test_wav_roundtrip_float32(tmp_path):
    rng = np.random.default_rng(1)
    samples = np.clip(rng.standard_normal(4000) * 0.1, -1.0, 1.0)
    buf = AudioBuffer(samples, 16000)
    path = tmp_path / "x.wav"
    write_wav(path, buf, fmt="float32")
    back = read_wav_mono(path)
    assert back.sample_rate == 16000
    np.testing.assert_allclose(back.samples, samples.astype(np.float32), atol=0)


def test_wav_roundtrip_pcm16(tmp_path):
    rng = np.random.default_rng(2)
    samples = np.clip(rng.standard_normal(4000) * 0.1, -1.0, 1.0)
    buf = AudioBuffer(samples, 16000)
    path = tmp_path / "x.wav"
    write_wav(path, buf, fmt="pcm16")
    back = read_wav_mono(path)
    # 16-bit quantization step is 1/32768
    assert np.max(np.abs(back.samples - samples)) < 1.0 / 32768


def test_wav_roundtrip_multichannel(tmp_path):
    rng = np.random.default_rng(3)
    samples = np.clip(rng.standard_normal((4, 2000)) * 0.1, -1.0, 1.0)
    multi = MultichannelAudio(samples, 16000)
    path = tmp_path / "x.wav"
    write_wav(path, multi, fmt="float32")
    back = read_wav(path)
    assert back.num_channels == 4
    np.testing.assert_allclose(back.samples, samples.astype(np.float32), atol=0)


def test_wav_rejects_rate_mismatch(tmp_path):
    buf = AudioBuffer(np.zeros(100), 8000)
    path = tmp_path / "x.wav"
    write_wav(path, buf)
    with pytest.raises(DataError):
        read_wav(path, expected_rate=16000)


def test_wav_write_is_deterministic(tmp_path):
    rng = np.random.default_rng(4)
    buf = AudioBuffer(np.clip(rng.standard_normal(1000) * 0.1, -1, 1), 16000)
    p1 = tmp_path / "a.wav"
    p2 = tmp_path / "b.wav"
    write_wav(p1, buf)
    write_wav(p2, buf)
    assert p1.read_bytes() == p2.read_bytes()
