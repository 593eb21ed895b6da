import struct

import numpy as np
import pytest

from apa_metrics.audio import (
    AudioBuffer,
    decode_wav,
    encode_wav,
    extract_window,
    load_audio,
    resample,
    save_audio,
)
from apa_metrics.errors import CorruptFile, OutOfRange, UnsupportedFormat

from conftest import fft_peak_hz, sine


def wav_bytes(samples_per_channel, sample_rate=48000, bits=16, audio_format=1):
    """Hand-built WAV bytes, independent of the package's encoder."""
    arr = np.asarray(samples_per_channel)
    if arr.ndim == 1:
        arr = arr[:, None]
    channels = arr.shape[1]
    if audio_format == 3:
        payload = arr.astype("<f4").tobytes()
    elif bits == 16:
        payload = arr.astype("<i2").tobytes()
    elif bits == 24:
        flat = arr.astype(np.int64).reshape(-1) & 0xFFFFFF
        b = np.empty((flat.size, 3), dtype=np.uint8)
        b[:, 0] = flat & 0xFF
        b[:, 1] = (flat >> 8) & 0xFF
        b[:, 2] = (flat >> 16) & 0xFF
        payload = b.tobytes()
    else:
        raise ValueError(bits)
    block_align = channels * bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, audio_format, channels, sample_rate,
        sample_rate * block_align, block_align, bits,
    )
    header += b"data" + struct.pack("<I", len(payload))
    return header + payload


class TestDecode:
    def test_stereo_mean_downmix(self):
        # L=+0.5, R=-0.5 constant -> mono zeros
        n = 100
        ints = np.stack([np.full(n, 16384), np.full(n, -16384)], axis=1)
        buf = decode_wav(wav_bytes(ints, bits=16))
        assert buf.channels == 1
        np.testing.assert_array_equal(buf.samples, np.zeros(n, np.float32))

    def test_float32_identity_decode(self):
        x = np.linspace(-1, 1, 48_000).astype(np.float32)
        buf = decode_wav(wav_bytes(x, bits=32, audio_format=3))
        assert buf.sample_rate == 48000
        assert len(buf) == 48_000
        np.testing.assert_array_equal(buf.samples, x)

    def test_declared_length_exceeding_file_is_corrupt(self):
        data = wav_bytes(np.zeros(100, np.int16))
        clipped = data[:-50]  # data chunk now shorter than declared
        with pytest.raises(CorruptFile):
            decode_wav(clipped)

    def test_non_wav_rejected(self):
        with pytest.raises(UnsupportedFormat):
            decode_wav(b"OggS" + b"\x00" * 100)

    def test_too_many_channels_rejected(self):
        data = bytearray(wav_bytes(np.zeros((10, 2), np.int16)))
        data[22:24] = struct.pack("<H", 6)  # channel count field
        with pytest.raises(UnsupportedFormat):
            decode_wav(bytes(data))

    def test_24_bit_decode(self):
        ints = np.array([0, 1 << 22, -(1 << 22) & 0xFFFFFF], dtype=np.int64)
        buf = decode_wav(wav_bytes(ints, bits=24))
        np.testing.assert_allclose(buf.samples, [0.0, 0.5, -0.5], atol=1e-6)

    def test_load_audio_roundtrip_through_file(self, tmp_path):
        x = sine(440, 0.25)
        path = tmp_path / "tone.wav"
        save_audio(x, path, bit_depth="float32")
        back = load_audio(path)
        np.testing.assert_array_equal(back.samples, x.samples)
        assert back.sample_rate == x.sample_rate


class TestEncodeRoundTrip:
    @pytest.mark.parametrize("bit_depth", ["float32", "pcm16", "pcm24"])
    def test_decode_encode_decode_is_stable(self, bit_depth):
        rng = np.random.default_rng(11)
        x = (rng.uniform(-1, 1, 4096) * 0.99).astype(np.float32)
        first = decode_wav(encode_wav(AudioBuffer(x, 44100), bit_depth=bit_depth))
        second = decode_wav(encode_wav(first, bit_depth=bit_depth))
        # sample-exact for float32, within 1 LSB for integer formats
        if bit_depth == "float32":
            np.testing.assert_array_equal(first.samples, second.samples)
        else:
            lsb = 1 / 32768 if bit_depth == "pcm16" else 1 / 8388608
            np.testing.assert_allclose(first.samples, second.samples, atol=lsb)

    def test_pcm16_second_pass_is_exact(self):
        x = (np.linspace(-1, 1, 1000) * 0.9).astype(np.float32)
        first = decode_wav(encode_wav(AudioBuffer(x, 48000), bit_depth="pcm16"))
        second = decode_wav(encode_wav(first, bit_depth="pcm16"))
        np.testing.assert_array_equal(first.samples, second.samples)


class TestResample:
    def test_identity_rate_is_bit_identical(self):
        buf = sine(1000, 0.5)
        out = resample(buf, 48000)
        np.testing.assert_array_equal(out.samples, buf.samples)

    def test_fft_peak_preserved_downsampling(self):
        buf = sine(1000, 0.5, rate=48000)
        out = resample(buf, 16000)
        bin_width = 16000 / len(out)
        assert abs(fft_peak_hz(out.samples, 16000) - 1000.0) <= bin_width

    def test_length_arithmetic_44100_to_48000(self):
        buf = AudioBuffer(np.zeros(44100, np.float32), 44100)
        out = resample(buf, 48000)
        assert abs(len(out) - 48000) <= 1

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            resample(sine(440, 0.1), 0)


class TestExtractWindow:
    def test_full_span_equals_buffer(self):
        buf = sine(440, 0.5)
        w = extract_window(buf, 0.0, 0.5)
        np.testing.assert_array_equal(w.buffer.samples, buf.samples)

    def test_index_arithmetic(self):
        buf = AudioBuffer(np.arange(480_000, dtype=np.float32) / 1e6, 48000)
        w = extract_window(buf, 2.0, 5.0)
        assert len(w.buffer) == 240_000
        np.testing.assert_array_equal(
            w.buffer.samples, buf.samples[96_000:336_000]
        )

    def test_overrunning_span_raises(self):
        buf = sine(440, 10.0)
        with pytest.raises(OutOfRange):
            extract_window(buf, 6.0, 5.0)

    def test_partition_reconstructs_buffer(self):
        buf = AudioBuffer(
            np.random.default_rng(3).standard_normal(48000).astype(np.float32), 48000
        )
        parts = [extract_window(buf, o, 0.25) for o in (0.0, 0.25, 0.5, 0.75)]
        glued = np.concatenate([p.buffer.samples for p in parts])
        np.testing.assert_array_equal(glued, buf.samples)


class TestAudioBufferInvariants:
    def test_rejects_nan(self):
        x = np.zeros(10, np.float32)
        x[3] = np.nan
        with pytest.raises(ValueError):
            AudioBuffer(x, 48000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            AudioBuffer(np.zeros(10, np.float32), -1)
