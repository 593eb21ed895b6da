"""Audio decoding, canonical mono buffers, resampling, and window extraction.

All DSP in this package operates on :class:`AudioBuffer`: mono float32 PCM
plus a sample rate. Files are decoded from RIFF/WAV only (16/24-bit integer
or 32-bit float, up to two channels); stereo is downmixed by per-sample mean.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import CorruptFile, OutOfRange, UnsupportedFormat

CANONICAL_RATE = 48000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono float32 samples at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer samples must be one-dimensional (mono)")
        if not isinstance(self.sample_rate, (int, np.integer)) or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        if samples.size and not np.isfinite(samples).all():
            raise ValueError("AudioBuffer samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def channels(self) -> int:
        return 1

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class Window:
    """A fixed-length span cut from a song, with its provenance."""

    buffer: AudioBuffer
    source_song_id: str
    source_offset_s: float
    duration_s: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        expected = int(round(self.duration_s * self.buffer.sample_rate))
        if len(self.buffer) != expected:
            raise ValueError(
                f"window length {len(self.buffer)} != round(duration * rate) = {expected}"
            )

    def with_samples(self, samples: np.ndarray) -> "Window":
        """Same provenance, new content (used by stem transforms)."""
        return Window(
            buffer=AudioBuffer(samples, self.buffer.sample_rate),
            source_song_id=self.source_song_id,
            source_offset_s=self.source_offset_s,
            duration_s=self.duration_s,
        )


@dataclass(frozen=True)
class WindowPair:
    """A (context, stem) window pair; matched means same song, same offset."""

    context: Window
    stem: Window
    matched: bool

    def __post_init__(self):
        if len(self.context.buffer) != len(self.stem.buffer):
            raise ValueError("context and stem must have equal sample counts")
        if self.context.buffer.sample_rate != self.stem.buffer.sample_rate:
            raise ValueError("context and stem must have equal sample rates")


# --- WAV (RIFF) reader/writer --------------------------------------------------

_FMT_PCM = 1
_FMT_FLOAT = 3


def decode_wav(data: bytes) -> AudioBuffer:
    """Decode WAV bytes into a canonical mono buffer at the file's native rate."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedFormat("not a RIFF/WAVE file")

    fmt = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body_start + 16 > len(data):
                raise CorruptFile("truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            if fmt is None:
                raise CorruptFile("data chunk before fmt chunk")
            if body_start + chunk_size > len(data):
                raise CorruptFile("declared data length exceeds file size")
            return _decode_pcm(data[body_start:body_start + chunk_size], fmt)
        # chunks are word-aligned: odd sizes carry a pad byte
        pos = body_start + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise CorruptFile("missing fmt chunk")
    raise CorruptFile("missing data chunk")


def _decode_pcm(body: bytes, fmt: tuple) -> AudioBuffer:
    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{channels} channels not supported (mono/stereo only)")
    if sample_rate <= 0:
        raise CorruptFile("non-positive sample rate")

    if audio_format == _FMT_FLOAT and bits == 32:
        frame_bytes = 4 * channels
        if len(body) % frame_bytes:
            raise CorruptFile("data chunk not a whole number of frames")
        raw = np.frombuffer(body, dtype="<f4")
        if raw.size and not np.isfinite(raw).all():
            raise CorruptFile("non-finite float samples")
        per_channel = raw.reshape(-1, channels)
    elif audio_format == _FMT_PCM and bits == 16:
        frame_bytes = 2 * channels
        if len(body) % frame_bytes:
            raise CorruptFile("data chunk not a whole number of frames")
        ints = np.frombuffer(body, dtype="<i2").astype(np.float64)
        per_channel = (ints / 32768.0).reshape(-1, channels)
    elif audio_format == _FMT_PCM and bits == 24:
        frame_bytes = 3 * channels
        if len(body) % frame_bytes:
            raise CorruptFile("data chunk not a whole number of frames")
        b = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints).astype(np.float64)
        per_channel = (ints / 8388608.0).reshape(-1, channels)
    else:
        raise UnsupportedFormat(
            f"unsupported encoding: format tag {audio_format}, {bits}-bit"
        )

    if channels == 2:
        mono = per_channel.mean(axis=1, dtype=np.float64)
    else:
        mono = per_channel[:, 0]
    return AudioBuffer(mono.astype(np.float32), int(sample_rate))


def encode_wav(buf: AudioBuffer, bit_depth: str = "float32") -> bytes:
    """Encode a mono buffer as WAV bytes (``float32``, ``pcm16``, or ``pcm24``)."""
    x = buf.samples
    if bit_depth == "float32":
        fmt_tag, bits = _FMT_FLOAT, 32
        payload = x.astype("<f4").tobytes()
    elif bit_depth == "pcm16":
        fmt_tag, bits = _FMT_PCM, 16
        ints = np.clip(np.round(x.astype(np.float64) * 32768.0), -32768, 32767)
        payload = ints.astype("<i2").tobytes()
    elif bit_depth == "pcm24":
        fmt_tag, bits = _FMT_PCM, 24
        ints = np.clip(np.round(x.astype(np.float64) * 8388608.0), -(1 << 23), (1 << 23) - 1)
        ints = ints.astype(np.int64) & 0xFFFFFF
        b = np.empty((ints.size, 3), dtype=np.uint8)
        b[:, 0] = ints & 0xFF
        b[:, 1] = (ints >> 8) & 0xFF
        b[:, 2] = (ints >> 16) & 0xFF
        payload = b.tobytes()
    else:
        raise ValueError(f"unknown bit depth {bit_depth!r}")

    block_align = bits // 8  # mono
    byte_rate = buf.sample_rate * block_align
    out = io.BytesIO()
    out.write(b"RIFF")
    out.write(struct.pack("<I", 36 + len(payload)))
    out.write(b"WAVE")
    out.write(b"fmt ")
    out.write(struct.pack("<IHHIIHH", 16, fmt_tag, 1, buf.sample_rate, byte_rate,
                          block_align, bits))
    out.write(b"data")
    out.write(struct.pack("<I", len(payload)))
    out.write(payload)
    return out.getvalue()


def load_audio(path: str | Path) -> AudioBuffer:
    """Decode a WAV file into a canonical mono buffer at its native rate."""
    data = Path(path).read_bytes()
    return decode_wav(data)


def save_audio(buf: AudioBuffer, path: str | Path, bit_depth: str = "float32") -> None:
    """Write a mono buffer as a WAV file."""
    Path(path).write_bytes(encode_wav(buf, bit_depth=bit_depth))


# --- resampling -----------------------------------------------------------------


@lru_cache(maxsize=64)
def _polyphase_fir(up: int, down: int) -> np.ndarray:
    # Kaiser-windowed sinc, >= 64 taps per output sample at the input rate;
    # unit DC gain (resample_poly applies the `up` gain itself).
    m = max(up, down)
    half = 32 * m
    t = np.arange(-half, half + 1, dtype=np.float64)
    h = np.sinc(t / m) / m
    h *= np.kaiser(2 * half + 1, 9.0)
    h /= h.sum()
    return h


def _resample_rational(x: np.ndarray, up: int, down: int, n_out: int) -> np.ndarray:
    """Band-limited resampling by a rational factor, trimmed to exactly n_out."""
    y = signal.resample_poly(x.astype(np.float64), up, down, window=_polyphase_fir(up, down))
    if y.size < n_out:
        y = np.concatenate([y, np.zeros(n_out - y.size)])
    return y[:n_out]


def resample(buf: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample to target_rate with a windowed-sinc polyphase filter.

    Identity when the rate already matches; output length is
    round(len * target_rate / input_rate).
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == buf.sample_rate:
        return AudioBuffer(buf.samples.copy(), buf.sample_rate)
    g = gcd(buf.sample_rate, int(target_rate))
    up, down = int(target_rate) // g, buf.sample_rate // g
    n_out = int(round(len(buf) * target_rate / buf.sample_rate))
    y = _resample_rational(buf.samples, up, down, n_out)
    return AudioBuffer(y.astype(np.float32), int(target_rate))


def resample_by_ratio(x: np.ndarray, ratio: float) -> np.ndarray:
    """Resample raw samples so the output is len(x)/ratio samples long.

    Used for pitch shifting: content played back at the original rate comes
    out ratio times higher in frequency. The ratio is approximated by a
    rational with denominator <= 1000 (relative error below 1e-6).
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    frac = Fraction(ratio).limit_denominator(1000)
    up, down = frac.denominator, frac.numerator
    n_out = int(round(len(x) * up / down))
    return _resample_rational(np.asarray(x, dtype=np.float64), up, down, n_out)


# --- windowing --------------------------------------------------------------------


def extract_window(
    buf: AudioBuffer,
    offset_s: float,
    duration_s: float,
    source_song_id: str = "",
) -> Window:
    """Copy out the span [offset, offset + duration); no normalization applied."""
    if offset_s < 0:
        raise OutOfRange(f"negative offset {offset_s}")
    start = int(round(offset_s * buf.sample_rate))
    count = int(round(duration_s * buf.sample_rate))
    if count <= 0:
        raise OutOfRange("duration must be positive")
    if start + count > len(buf):
        raise OutOfRange(
            f"window [{offset_s}s, {offset_s + duration_s}s) exceeds buffer "
            f"of {buf.duration_s:.6g}s"
        )
    return Window(
        buffer=AudioBuffer(buf.samples[start:start + count].copy(), buf.sample_rate),
        source_song_id=source_song_id,
        source_offset_s=offset_s,
        duration_s=duration_s,
    )
