"""Request loop and selftest for the embedding bridge."""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

from .model import LAYER_DIMS, MODEL_SAMPLE_RATE, CheckpointError, load_checkpoint
from .protocol import (
    MAGIC_HANDSHAKE,
    MAGIC_REQUEST,
    MAGIC_RESPONSE,
    ProtocolError,
    pack_frame,
    read_exact,
    read_frame,
)


@dataclass(frozen=True)
class BridgeConfig:
    checkpoint: str
    layer: int = 1
    device: str = "cpu"

    def __post_init__(self):
        if self.layer not in LAYER_DIMS:
            raise ValueError(f"layer must be one of {sorted(LAYER_DIMS)}")


def _resample_to_model_rate(samples: np.ndarray, rate: int) -> np.ndarray:
    if rate == MODEL_SAMPLE_RATE:
        return samples
    from math import gcd

    g = gcd(MODEL_SAMPLE_RATE, rate)
    return resample_poly(
        samples.astype(np.float64), MODEL_SAMPLE_RATE // g, rate // g
    ).astype(np.float32)


def serve(config: BridgeConfig, stdin=None, stdout=None) -> int:
    """Answer embedding requests until EOF. Protocol violations exit nonzero."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer

    try:
        model, arch = load_checkpoint(config.checkpoint, device=config.device)
    except CheckpointError as exc:
        print(f"clap-bridge: {exc}", file=sys.stderr)
        return 2

    dim = LAYER_DIMS[config.layer]
    stdout.write(pack_frame(MAGIC_HANDSHAKE, {
        "embedder_id": f"clap:{arch}:{config.layer}",
        "dim": dim,
        "input_rate": MODEL_SAMPLE_RATE,
    }))
    stdout.flush()

    while True:
        try:
            frame = read_frame(stdin)
        except ProtocolError as exc:
            print(f"clap-bridge: {exc}", file=sys.stderr)
            return 1
        if frame is None:
            return 0
        magic, header = frame
        if magic != MAGIC_REQUEST:
            print(f"clap-bridge: unexpected magic {magic!r}", file=sys.stderr)
            return 1
        try:
            request_id = int(header["id"])
            rate = int(header["sample_rate"])
            num_samples = int(header["num_samples"])
        except (KeyError, TypeError, ValueError):
            print(f"clap-bridge: malformed request header {header!r}", file=sys.stderr)
            return 1
        if num_samples <= 0 or rate <= 0:
            print(
                f"clap-bridge: invalid request (num_samples={num_samples}, "
                f"sample_rate={rate})",
                file=sys.stderr,
            )
            return 1
        payload = read_exact(stdin, num_samples * 4)
        if payload is None:
            print("clap-bridge: stream closed before payload", file=sys.stderr)
            return 1
        samples = np.frombuffer(payload, dtype="<f4")
        samples = _resample_to_model_rate(samples, rate)
        try:
            vector = model.extract(samples, config.layer)
        except ValueError as exc:
            print(f"clap-bridge: {exc}", file=sys.stderr)
            return 1
        stdout.write(pack_frame(
            MAGIC_RESPONSE,
            {"id": request_id, "dim": dim},
            np.ascontiguousarray(vector, dtype="<f4").tobytes(),
        ))
        stdout.flush()


def selftest(config: BridgeConfig) -> int:
    """Run a tone through the model twice; zero exit iff stable and well-formed."""
    try:
        model, arch = load_checkpoint(config.checkpoint, device=config.device)
    except CheckpointError as exc:
        print(f"clap-bridge selftest: {exc}", file=sys.stderr)
        return 2

    t = np.arange(MODEL_SAMPLE_RATE) / MODEL_SAMPLE_RATE
    tone = (0.5 * np.sin(2 * np.pi * 440.0 * t)).astype(np.float32)
    first = model.extract(tone, config.layer)
    second = model.extract(tone, config.layer)

    dim = LAYER_DIMS[config.layer]
    if first.shape != (dim,):
        print(f"clap-bridge selftest: dim {first.shape} != ({dim},)", file=sys.stderr)
        return 1
    if not np.isfinite(first).all():
        print("clap-bridge selftest: non-finite values in embedding", file=sys.stderr)
        return 1
    if not np.array_equal(first, second):
        print("clap-bridge selftest: embeddings differ between runs", file=sys.stderr)
        return 1
    print(f"clap-bridge selftest: ok (clap:{arch}:{config.layer}, dim {dim})")
    return 0
