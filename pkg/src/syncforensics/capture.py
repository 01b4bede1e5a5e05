"""Capture records and the two on-disk capture formats.

HexdumpLines, one record per line (``#`` starts a comment)::

    epoch_us SRC_IP:PORT DST_IP:PORT UDP|TCP HEXPAYLOAD

RawFrames: ``SPB1`` then repeated big-endian records of
``u64 timestamp_us, 6-byte src, 6-byte dst, u8 transport (0=UDP, 1=TCP),
u32 payload length, payload``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

from .errors import BadFormat, WrongWidth
from .wire import Endpoint

RAW_MAGIC = b"SPB1"
_RAW_HEAD = struct.Struct(">Q6s6sBI")


class Transport(str, enum.Enum):
    UDP = "UDP"
    TCP = "TCP"

    @property
    def code(self) -> int:
        return 0 if self is Transport.UDP else 1


@dataclass(frozen=True)
class CaptureRecord:
    timestamp: int  # microseconds
    src: Endpoint
    dst: Endpoint
    transport: Transport
    payload: bytes = b""


class CaptureFormat(enum.Enum):
    HEXDUMP_LINES = "hexdump"
    RAW_FRAMES = "raw"


def format_hexdump_line(r: CaptureRecord) -> str:
    line = f"{r.timestamp} {r.src} {r.dst} {r.transport.value}"
    return f"{line} {r.payload.hex()}" if r.payload else line


def write_hexdump(records: Iterable[CaptureRecord], fh) -> None:
    for r in records:
        fh.write(format_hexdump_line(r) + "\n")


def write_raw_frames(records: Iterable[CaptureRecord], fh: BinaryIO) -> None:
    fh.write(RAW_MAGIC)
    for r in records:
        fh.write(_RAW_HEAD.pack(r.timestamp, r.src.pack(), r.dst.pack(), r.transport.code, len(r.payload)))
        fh.write(r.payload)


def raw_frames_bytes(records: Iterable[CaptureRecord]) -> bytes:
    parts = [RAW_MAGIC]
    for r in records:
        parts.append(_RAW_HEAD.pack(r.timestamp, r.src.pack(), r.dst.pack(), r.transport.code, len(r.payload)))
        parts.append(r.payload)
    return b"".join(parts)


def parse_hexdump_lines(lines: Iterable[str]) -> Iterator[CaptureRecord]:
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) not in (4, 5):
            raise BadFormat(f"expected 4 or 5 fields, got {len(fields)}", f"line {lineno}")
        ts, src, dst, proto = fields[:4]
        try:
            timestamp = int(ts)
            if timestamp < 0:
                raise ValueError(ts)
            transport = Transport(proto.upper())
            record = CaptureRecord(
                timestamp,
                Endpoint.parse(src),
                Endpoint.parse(dst),
                transport,
                bytes.fromhex(fields[4]) if len(fields) == 5 else b"",
            )
        except (ValueError, WrongWidth) as exc:
            raise BadFormat(str(exc), f"line {lineno}") from exc
        yield record


def parse_raw_frames(data: bytes) -> Iterator[CaptureRecord]:
    if not data:
        return
    if not data.startswith(RAW_MAGIC):
        raise BadFormat("missing SPB1 magic", "offset 0")
    pos = len(RAW_MAGIC)
    while pos < len(data):
        if pos + _RAW_HEAD.size > len(data):
            raise BadFormat("truncated record header", f"offset {pos}")
        ts, src, dst, proto, length = _RAW_HEAD.unpack_from(data, pos)
        if proto not in (0, 1):
            raise BadFormat(f"transport code {proto}", f"offset {pos + 20}")
        start = pos + _RAW_HEAD.size
        if start + length > len(data):
            raise BadFormat(f"payload of {length} bytes runs past end of file", f"offset {pos}")
        yield CaptureRecord(
            ts, Endpoint.unpack(src), Endpoint.unpack(dst),
            Transport.UDP if proto == 0 else Transport.TCP,
            data[start : start + length],
        )
        pos = start + length
