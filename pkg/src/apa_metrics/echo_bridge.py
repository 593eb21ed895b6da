"""Reference bridge double: echoes the first D samples back as the "embedding".

Implements the external-embedder stdio protocol end to end, so it serves
both as an integration-test stand-in for a real model process and as a
worked example of the wire format. Failure-injection flags let tests
exercise the client's protocol-violation handling.

Run with: python -m apa_metrics.echo_bridge --dim 16
"""

from __future__ import annotations

import argparse
import json
import struct
import sys

import numpy as np

from .embed import MAGIC_HANDSHAKE, MAGIC_REQUEST, MAGIC_RESPONSE, pack_frame


def _read_exact(stream, n: int) -> bytes | None:
    data = stream.read(n)
    if data is None or len(data) == 0:
        return None  # clean EOF
    while len(data) < n:
        more = stream.read(n - len(data))
        if not more:
            raise EOFError("stdin closed mid-frame")
        data += more
    return data


def serve(
    dim: int = 8,
    input_rate: int = 48000,
    embedder_id: str | None = None,
    fail_after: int | None = None,
    shift_ids: bool = False,
    wrong_dim: bool = False,
) -> int:
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    stdout.write(pack_frame(
        MAGIC_HANDSHAKE,
        {
            "embedder_id": embedder_id or f"echo:{dim}",
            "dim": dim,
            "input_rate": input_rate,
        },
    ))
    stdout.flush()

    handled = 0
    while True:
        magic = _read_exact(stdin, 4)
        if magic is None:
            return 0
        if magic != MAGIC_REQUEST:
            print(f"echo-bridge: unexpected magic {magic!r}", file=sys.stderr)
            return 1
        (header_len,) = struct.unpack("<I", _read_exact(stdin, 4))
        header = json.loads(_read_exact(stdin, header_len))
        num_samples = int(header["num_samples"])
        payload = _read_exact(stdin, num_samples * 4) if num_samples else b""
        samples = np.frombuffer(payload or b"", dtype="<f4")

        if fail_after is not None and handled >= fail_after:
            print("echo-bridge: injected failure", file=sys.stderr)
            return 1

        vector = np.zeros(dim, dtype="<f4")
        vector[: min(dim, samples.size)] = samples[:dim]
        out_dim = dim + 1 if wrong_dim else dim
        out_vec = np.zeros(out_dim, dtype="<f4")
        out_vec[:min(dim, out_dim)] = vector[:min(dim, out_dim)]
        response_id = header["id"] + 1 if shift_ids else header["id"]
        stdout.write(pack_frame(
            MAGIC_RESPONSE, {"id": response_id, "dim": out_dim}, out_vec.tobytes()
        ))
        stdout.flush()
        handled += 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="echo-test embedding bridge")
    parser.add_argument("--dim", type=int, default=8)
    parser.add_argument("--input-rate", type=int, default=48000)
    parser.add_argument("--embedder-id", default=None)
    parser.add_argument("--fail-after", type=int, default=None,
                        help="exit nonzero after N requests (test hook)")
    parser.add_argument("--shift-ids", action="store_true",
                        help="reply with wrong request ids (test hook)")
    parser.add_argument("--wrong-dim", action="store_true",
                        help="reply with dim+1 vectors (test hook)")
    args = parser.parse_args(argv)
    return serve(
        dim=args.dim,
        input_rate=args.input_rate,
        embedder_id=args.embedder_id,
        fail_after=args.fail_after,
        shift_ids=args.shift_ids,
        wrong_dim=args.wrong_dim,
    )


if __name__ == "__main__":
    sys.exit(main())
