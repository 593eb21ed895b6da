"""Embedding extraction: builtin log-mel embedder, cache files, bridge client.

The builtin embedder is a deterministic stand-in so the whole pipeline can
run and be tested without neural models. External models plug in through a
length-prefixed binary protocol over stdio (see the frame helpers below and
``echo_bridge`` for a reference implementation of the other side).

Cache file layout (little-endian):
    magic "APAE" | u32 version=1 | u32 dim | u64 count |
    u32 metadata length | metadata JSON | count*dim float32 row-major

Bridge protocol (little-endian):
    handshake  "APHI" | u32 len | {"embedder_id", "dim", "input_rate"}
    request    "APRQ" | u32 len | {"id", "sample_rate", "num_samples"} | f32 PCM
    response   "APRS" | u32 len | {"id", "dim"} | f32 embedding
"""

from __future__ import annotations

import json
import os
import select
import shlex
import struct
import subprocess
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .audio import AudioBuffer
from .errors import (
    BadMagic,
    BridgeError,
    DimensionMismatch,
    TooShort,
    TruncatedFile,
    VersionUnsupported,
)

BUILTIN_EMBEDDER_ID = "builtin-logmel-128"
DEFAULT_BRIDGE_TIMEOUT_S = 60.0

_N_FFT = 2048
_HOP = 512
_N_MELS = 64
_LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class EmbedderSpec:
    """Identity, output dimension, and required input rate of an embedder."""

    id: str
    dim: int
    input_rate: int

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("embedder dim must be positive")
        if self.input_rate <= 0:
            raise ValueError("embedder input_rate must be positive")


BUILTIN_EMBEDDER = EmbedderSpec(id=BUILTIN_EMBEDDER_ID, dim=2 * _N_MELS, input_rate=48000)


@dataclass(frozen=True)
class EmbeddingSet:
    """N x D float32 embedding matrix plus the provenance that produced it."""

    vectors: np.ndarray
    embedder: EmbedderSpec
    regime_label: str
    window_duration_s: float
    source_fingerprint: str

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("embedding set must be a non-empty N x D matrix")
        if not np.isfinite(v).all():
            raise ValueError("embedding set contains non-finite values")
        if v.shape[1] != self.embedder.dim:
            raise DimensionMismatch(
                f"matrix dim {v.shape[1]} != embedder dim {self.embedder.dim}"
            )
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


# --- builtin log-mel embedder -----------------------------------------------------


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def _mel_filterbank(sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank (n_mels x n_bins) from 0 Hz to Nyquist."""
    edges_hz = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), _N_MELS + 2))
    bin_hz = np.fft.rfftfreq(_N_FFT, 1.0 / sample_rate)
    fb = np.zeros((_N_MELS, bin_hz.size))
    for i in range(_N_MELS):
        lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / max(mid - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def builtin_logmel_embed(buf: AudioBuffer) -> np.ndarray:
    """Deterministic 128-dim feature: per-band log-mel mean and std over frames.

    STFT with 2048-sample Hann frames and hop 512, 64 mel bands to 24 kHz,
    natural log with floor 1e-10. Requires 48 kHz input.
    """
    if buf.sample_rate != BUILTIN_EMBEDDER.input_rate:
        raise ValueError(
            f"builtin embedder expects {BUILTIN_EMBEDDER.input_rate} Hz input, "
            f"got {buf.sample_rate}"
        )
    x = buf.samples.astype(np.float64)
    if x.size < _N_FFT:
        raise TooShort(f"need at least {_N_FFT} samples for one frame, got {x.size}")

    frames = np.lib.stride_tricks.sliding_window_view(x, _N_FFT)[::_HOP]
    window = get_window("hann", _N_FFT, fftbins=True)
    spectrum = np.fft.rfft(frames * window, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ _mel_filterbank(buf.sample_rate).T
    log_mel = np.log(np.maximum(mel, _LOG_FLOOR))
    # shifting by the first frame before the spread improves conditioning and
    # keeps constant input (e.g. silence) at exactly zero deviation
    spread = (log_mel - log_mel[0]).std(axis=0)
    return np.concatenate([log_mel.mean(axis=0), spread]).astype(np.float32)


class BuiltinEmbedder:
    """Batch adapter around builtin_logmel_embed."""

    def __init__(self):
        self.spec = BUILTIN_EMBEDDER

    def embed_batch(self, buffers: list[AudioBuffer]) -> np.ndarray:
        return np.stack([builtin_logmel_embed(b) for b in buffers])

    def close(self):
        pass


def embed_window(mixdown: AudioBuffer, embedder) -> np.ndarray:
    """Embed one mixed-down window into a single D-vector.

    ``embedder`` is an EmbedderSpec (builtin only) or an embedder object
    with an ``embed_batch`` method (BuiltinEmbedder, BridgeClient).
    """
    if isinstance(embedder, EmbedderSpec):
        if embedder.id != BUILTIN_EMBEDDER_ID:
            raise ValueError(
                f"only {BUILTIN_EMBEDDER_ID!r} can be resolved from a bare spec; "
                "pass a BridgeClient for external embedders"
            )
        embedder = BuiltinEmbedder()
    row = embedder.embed_batch([mixdown])[0]
    if row.shape[0] != embedder.spec.dim:
        raise DimensionMismatch(
            f"embedder returned dim {row.shape[0]}, declared {embedder.spec.dim}"
        )
    return row


# --- cache files --------------------------------------------------------------------

_CACHE_MAGIC = b"APAE"
_CACHE_VERSION = 1


def write_cache(embeddings: EmbeddingSet, path: str | Path) -> None:
    """Write an embedding set; read_cache(write_cache(x)) is bit-exact."""
    meta = {
        "embedder": {
            "id": embeddings.embedder.id,
            "dim": embeddings.embedder.dim,
            "input_rate": embeddings.embedder.input_rate,
        },
        "regime_label": embeddings.regime_label,
        "window_duration_s": embeddings.window_duration_s,
        "source_fingerprint": embeddings.source_fingerprint,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<IIQ", _CACHE_VERSION, embeddings.dim, embeddings.n))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(np.ascontiguousarray(embeddings.vectors, dtype="<f4").tobytes())


def read_cache(path: str | Path) -> EmbeddingSet:
    """Read an embedding cache written by write_cache."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != _CACHE_MAGIC:
        raise BadMagic(f"{path}: not an embedding cache (bad magic)")
    if len(data) < 24:
        raise TruncatedFile(f"{path}: truncated header")
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != _CACHE_VERSION:
        raise VersionUnsupported(f"{path}: cache version {version} not supported")
    (meta_len,) = struct.unpack_from("<I", data, 20)
    meta_end = 24 + meta_len
    if len(data) < meta_end:
        raise TruncatedFile(f"{path}: truncated metadata")
    meta = json.loads(data[24:meta_end].decode("utf-8"))
    matrix_bytes = dim * count * 4
    if len(data) < meta_end + matrix_bytes:
        raise TruncatedFile(f"{path}: truncated matrix ({len(data) - meta_end} of {matrix_bytes} bytes)")
    vectors = np.frombuffer(
        data[meta_end:meta_end + matrix_bytes], dtype="<f4"
    ).reshape(count, dim)
    spec = EmbedderSpec(
        id=meta["embedder"]["id"],
        dim=int(meta["embedder"]["dim"]),
        input_rate=int(meta["embedder"]["input_rate"]),
    )
    return EmbeddingSet(
        vectors=vectors.copy(),
        embedder=spec,
        regime_label=meta["regime_label"],
        window_duration_s=float(meta["window_duration_s"]),
        source_fingerprint=meta["source_fingerprint"],
    )


# --- bridge protocol ------------------------------------------------------------------

MAGIC_HANDSHAKE = b"APHI"
MAGIC_REQUEST = b"APRQ"
MAGIC_RESPONSE = b"APRS"


def pack_frame(magic: bytes, header: dict, payload: bytes = b"") -> bytes:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return magic + struct.pack("<I", len(header_bytes)) + header_bytes + payload


def bridge_timeout_default() -> float:
    env = os.environ.get("APA_BRIDGE_TIMEOUT_S")
    if env:
        try:
            return float(env)
        except ValueError:
            pass
    return DEFAULT_BRIDGE_TIMEOUT_S


class BridgeClient:
    """Client side of the stdio embedding protocol.

    One request in flight per process; spawn several clients for parallelism.
    The batch timeout covers each embed_batch call as a whole.
    """

    def __init__(self, command: str | list[str], timeout_s: float | None = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout_s = bridge_timeout_default() if timeout_s is None else timeout_s
        self._next_id = 0
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as exc:
            raise BridgeError(f"failed to start bridge {self.command!r}: {exc}") from exc
        try:
            magic, header, _ = self._read_frame(time.monotonic() + self.timeout_s)
            if magic != MAGIC_HANDSHAKE:
                raise BridgeError(
                    f"expected handshake {MAGIC_HANDSHAKE!r}, got {magic!r}"
                )
            self.spec = EmbedderSpec(
                id=str(header["embedder_id"]),
                dim=int(header["dim"]),
                input_rate=int(header["input_rate"]),
            )
        except BridgeError:
            self._kill()
            raise
        except (KeyError, TypeError, ValueError) as exc:
            self._kill()
            raise BridgeError(f"malformed handshake header: {header!r}") from exc

    # -- low-level reads with deadline --

    def _read_exact(self, n: int, deadline: float) -> bytes:
        fd = self._proc.stdout.fileno()
        chunks = []
        remaining = n
        while remaining > 0:
            budget = deadline - time.monotonic()
            if budget <= 0:
                raise BridgeError(f"bridge timed out after {self.timeout_s:.1f}s")
            ready, _, _ = select.select([fd], [], [], budget)
            if not ready:
                continue
            chunk = os.read(fd, remaining)
            if not chunk:
                raise BridgeError("bridge closed its output mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _read_frame(self, deadline: float) -> tuple[bytes, dict, float]:
        magic = self._read_exact(4, deadline)
        (header_len,) = struct.unpack("<I", self._read_exact(4, deadline))
        try:
            header = json.loads(self._read_exact(header_len, deadline).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BridgeError(f"bridge sent an unparseable header: {exc}") from exc
        return magic, header, deadline

    # -- public API --

    def embed_batch(self, buffers: list[AudioBuffer]) -> np.ndarray:
        """One embedding row per buffer, in order. Raises BridgeError on trouble."""
        deadline = time.monotonic() + self.timeout_s
        rows = np.empty((len(buffers), self.spec.dim), dtype=np.float32)
        for i, buf in enumerate(buffers):
            request_id = self._next_id
            self._next_id += 1
            payload = np.ascontiguousarray(buf.samples, dtype="<f4").tobytes()
            frame = pack_frame(
                MAGIC_REQUEST,
                {"id": request_id, "sample_rate": buf.sample_rate, "num_samples": len(buf)},
                payload,
            )
            try:
                self._proc.stdin.write(frame)
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise BridgeError(f"bridge pipe broke while writing: {exc}") from exc

            magic, header, _ = self._read_frame(deadline)
            if magic != MAGIC_RESPONSE:
                raise BridgeError(f"protocol violation: expected response, got {magic!r}")
            if header.get("id") != request_id:
                raise BridgeError(
                    f"protocol violation: response id {header.get('id')} "
                    f"!= request id {request_id}"
                )
            dim = int(header.get("dim", -1))
            vector = np.frombuffer(self._read_exact(dim * 4, deadline), dtype="<f4")
            if dim != self.spec.dim:
                raise DimensionMismatch(
                    f"bridge returned dim {dim}, handshake declared {self.spec.dim}"
                )
            rows[i] = vector
        return rows

    def _kill(self):
        """Tear down a bridge that never became healthy."""
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        proc.kill()
        proc.wait()
        for stream in (proc.stdin, proc.stdout):
            if stream:
                stream.close()

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        for stream in (proc.stdin, proc.stdout):
            try:
                if stream:
                    stream.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def bridge_embed(
    windows: list[AudioBuffer], command: str | list[str], timeout_s: float | None = None
) -> np.ndarray:
    """Spawn a bridge, embed a batch, and shut the bridge down."""
    with BridgeClient(command, timeout_s=timeout_s) as client:
        return client.embed_batch(windows)
