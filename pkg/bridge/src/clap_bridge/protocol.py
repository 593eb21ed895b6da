"""Frame layer of the embedding-bridge stdio protocol.

All frames are little-endian: 4-byte magic, u32 header length, UTF-8 JSON
header, then an optional float32 payload whose length the header implies.

    handshake  "APHI"  {"embedder_id", "dim", "input_rate"}
    request    "APRQ"  {"id", "sample_rate", "num_samples"}  + PCM payload
    response   "APRS"  {"id", "dim"}                         + embedding
"""

from __future__ import annotations

import json
import struct

MAGIC_HANDSHAKE = b"APHI"
MAGIC_REQUEST = b"APRQ"
MAGIC_RESPONSE = b"APRS"


class ProtocolError(Exception):
    pass


def pack_frame(magic: bytes, header: dict, payload: bytes = b"") -> bytes:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return magic + struct.pack("<I", len(header_bytes)) + header_bytes + payload


def read_exact(stream, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a frame boundary."""
    data = stream.read(n)
    if data is None or len(data) == 0:
        return None
    while len(data) < n:
        more = stream.read(n - len(data))
        if not more:
            raise ProtocolError("stream closed mid-frame")
        data += more
    return data


def read_frame(stream) -> tuple[bytes, dict] | None:
    """Read magic and header; returns None on clean EOF before a frame."""
    magic = read_exact(stream, 4)
    if magic is None:
        return None
    raw_len = read_exact(stream, 4)
    if raw_len is None:
        raise ProtocolError("stream closed after magic")
    (header_len,) = struct.unpack("<I", raw_len)
    header_bytes = read_exact(stream, header_len)
    if header_bytes is None:
        raise ProtocolError("stream closed before header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"unparseable frame header: {exc}") from exc
    return magic, header
