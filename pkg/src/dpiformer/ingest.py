"""Classic PCAP reading and TCP/UDP payload extraction.

Only the libpcap container is understood (both byte orders, micro- and
nanosecond timestamps). Frames are decoded as Ethernet II with at most one
802.1Q tag, then IPv4/IPv6, then TCP/UDP.
"""

from __future__ import annotations

import csv
import io
import ipaddress
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Iterator, List, Optional

from ._io import atomic_write_text
from .errors import DataFormatError, FormatError, TruncatedHeader, TruncatedRecord, UnknownMagic
from .tokenizer import bytes_to_hex, hex_to_bytes

LINKTYPE_ETHERNET = 1
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"

# magic as read little-endian -> (struct byte order, fraction units per second)
_MAGICS = {
    0xA1B2C3D4: ("<", 1_000_000),
    0xD4C3B2A1: (">", 1_000_000),
    0xA1B23C4D: ("<", 1_000_000_000),
    0x4D3CB2A1: (">", 1_000_000_000),
}
_GLOBAL_HEADER_LEN = 24
_RECORD_HEADER_LEN = 16
_READ_CHUNK = 1 << 20

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = 0x8100
IPPROTO_TCP = 6
IPPROTO_UDP = 17
_IPV6_EXT = {0, 43, 60}
_IPV6_FRAG = 44

SKIP_REASONS = ("non_ethernet", "non_ip", "non_tcp_udp", "fragment", "empty_payload", "malformed")
RECORD_COLUMNS = ("src_ip", "dst_ip", "src_port", "dst_port", "protocol", "timestamp", "payload_hex")


class Protocol(str, Enum):
    TCP = "tcp"
    UDP = "udp"


@dataclass(frozen=True)
class FiveTuple:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Protocol

    def __post_init__(self):
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 65535:
                raise ValueError(f"port {port} out of range")
        if not isinstance(self.protocol, Protocol):
            object.__setattr__(self, "protocol", Protocol(self.protocol))
        if ipaddress.ip_address(self.src_ip).version != ipaddress.ip_address(self.dst_ip).version:
            raise ValueError("src_ip and dst_ip must share an IP version")


@dataclass(frozen=True)
class RawPacket:
    ts_sec: int
    ts_frac: int
    captured_len: int
    original_len: int
    link_type: int
    data: bytes
    ts_units: int = 1_000_000

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_frac / self.ts_units


@dataclass(frozen=True)
class PayloadRecord:
    five_tuple: FiveTuple
    timestamp: float
    payload: bytes


@dataclass
class ExtractionSummary:
    total_packets: int = 0
    payload_records: int = 0
    skipped: Counter = field(default_factory=Counter)
    captured_exceeds_original: int = 0

    def merge(self, other: "ExtractionSummary") -> None:
        self.total_packets += other.total_packets
        self.payload_records += other.payload_records
        self.skipped.update(other.skipped)
        self.captured_exceeds_original += other.captured_exceeds_original

    def to_dict(self) -> dict:
        return {
            "total_packets": self.total_packets,
            "payload_records": self.payload_records,
            "skipped": {k: self.skipped.get(k, 0) for k in SKIP_REASONS},
            "warnings": {"captured_exceeds_original": self.captured_exceeds_original},
        }


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    if n <= _READ_CHUNK:
        return stream.read(n)
    parts = []
    remaining = n
    while remaining:
        chunk = stream.read(min(remaining, _READ_CHUNK))
        if not chunk:
            break
        parts.append(chunk)
        remaining -= len(chunk)
    return b"".join(parts)


def parse_pcap(stream: BinaryIO) -> Iterator[RawPacket]:
    """Yield packets from a classic PCAP byte stream, in file order."""
    header = stream.read(_GLOBAL_HEADER_LEN)
    if len(header) >= 4 and header[:4] == PCAPNG_MAGIC:
        raise UnknownMagic("pcapng format is not supported; convert to classic pcap", 0)
    if len(header) < 4:
        raise TruncatedHeader(f"global header needs {_GLOBAL_HEADER_LEN} bytes, got {len(header)}", 0)
    magic = struct.unpack("<I", header[:4])[0]
    if magic not in _MAGICS:
        raise UnknownMagic(f"not a classic pcap file (magic 0x{magic:08x})", 0)
    if len(header) < _GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"global header needs {_GLOBAL_HEADER_LEN} bytes, got {len(header)}", 0)
    order, units = _MAGICS[magic]
    link_type = struct.unpack(order + "I", header[20:24])[0]
    rec = struct.Struct(order + "IIII")
    offset = _GLOBAL_HEADER_LEN
    while True:
        rh = stream.read(_RECORD_HEADER_LEN)
        if not rh:
            return
        if len(rh) < _RECORD_HEADER_LEN:
            raise TruncatedRecord(f"record header cut short ({len(rh)} of 16 bytes)", offset)
        ts_sec, ts_frac, incl, orig = rec.unpack(rh)
        data = _read_exact(stream, incl)
        if len(data) < incl:
            raise TruncatedRecord(f"record data cut short ({len(data)} of {incl} bytes)", offset)
        yield RawPacket(ts_sec, ts_frac, incl, orig, link_type, data, units)
        offset += _RECORD_HEADER_LEN + incl


def write_pcap(packets: Iterable[RawPacket], stream: BinaryIO, link_type: int = LINKTYPE_ETHERNET,
               nanosecond: bool = False, big_endian: bool = False, snaplen: int = 262144) -> None:
    """Serialize packets as a classic PCAP stream (the inverse of :func:`parse_pcap`)."""
    order = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    stream.write(struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, snaplen, link_type))
    for p in packets:
        stream.write(struct.pack(order + "IIII", p.ts_sec, p.ts_frac, len(p.data), p.original_len))
        stream.write(p.data)


def _decode(raw: RawPacket):
    """``(record, None)`` on success or ``(None, skip_reason)``."""
    if raw.link_type != LINKTYPE_ETHERNET:
        return None, "non_ethernet"
    frame = memoryview(raw.data)
    if len(frame) < 14:
        return None, "malformed"
    ethertype = int.from_bytes(frame[12:14], "big")
    pos = 14
    if ethertype == ETH_VLAN:
        if len(frame) < 18:
            return None, "malformed"
        ethertype = int.from_bytes(frame[16:18], "big")
        pos = 18
    if ethertype == ETH_IPV4:
        if len(frame) < pos + 20:
            return None, "malformed"
        vihl = frame[pos]
        ihl = (vihl & 0x0F) * 4
        if vihl >> 4 != 4 or ihl < 20 or len(frame) < pos + ihl:
            return None, "malformed"
        total = int.from_bytes(frame[pos + 2:pos + 4], "big")
        if total < ihl:
            return None, "malformed"
        if int.from_bytes(frame[pos + 6:pos + 8], "big") & 0x1FFF:
            return None, "fragment"
        proto = frame[pos + 9]
        src = str(ipaddress.IPv4Address(bytes(frame[pos + 12:pos + 16])))
        dst = str(ipaddress.IPv4Address(bytes(frame[pos + 16:pos + 20])))
        end = min(len(frame), pos + total)
        seg_start = pos + ihl
    elif ethertype == ETH_IPV6:
        if len(frame) < pos + 40:
            return None, "malformed"
        if frame[pos] >> 4 != 6:
            return None, "malformed"
        plen = int.from_bytes(frame[pos + 4:pos + 6], "big")
        proto = frame[pos + 6]
        src = str(ipaddress.IPv6Address(bytes(frame[pos + 8:pos + 24])))
        dst = str(ipaddress.IPv6Address(bytes(frame[pos + 24:pos + 40])))
        end = min(len(frame), pos + 40 + plen)
        seg_start = pos + 40
        while proto in _IPV6_EXT or proto == _IPV6_FRAG:
            if seg_start + 8 > end:
                return None, "malformed"
            nxt = frame[seg_start]
            if proto == _IPV6_FRAG:
                if int.from_bytes(frame[seg_start + 2:seg_start + 4], "big") >> 3:
                    return None, "fragment"
                seg_start += 8
            else:
                seg_start += (frame[seg_start + 1] + 1) * 8
            proto = nxt
        if seg_start > end:
            return None, "malformed"
    else:
        return None, "non_ip"

    seg = frame[seg_start:end]
    if proto == IPPROTO_TCP:
        if len(seg) < 20:
            return None, "malformed"
        doff = (seg[12] >> 4) * 4
        if doff < 20 or doff > len(seg):
            return None, "malformed"
        payload = seg[doff:]
        protocol = Protocol.TCP
    elif proto == IPPROTO_UDP:
        if len(seg) < 8:
            return None, "malformed"
        ulen = int.from_bytes(seg[4:6], "big")
        if ulen < 8:
            return None, "malformed"
        payload = seg[8:min(ulen, len(seg))]
        protocol = Protocol.UDP
    else:
        return None, "non_tcp_udp"
    if len(payload) == 0:
        return None, "empty_payload"
    sport = int.from_bytes(seg[0:2], "big")
    dport = int.from_bytes(seg[2:4], "big")
    return PayloadRecord(FiveTuple(src, dst, sport, dport, protocol), raw.timestamp, bytes(payload)), None


def decode_frame(raw: RawPacket, skipped: Optional[Counter] = None) -> Optional[PayloadRecord]:
    """The TCP/UDP payload record carried by ``raw``, or None.

    When ``skipped`` is given, the reason a frame was dropped is tallied there.
    """
    record, reason = _decode(raw)
    if reason is not None and skipped is not None:
        skipped[reason] += 1
    return record


def extract_from_stream(stream: BinaryIO):
    summary = ExtractionSummary()
    records = []
    for raw in parse_pcap(stream):
        summary.total_packets += 1
        if raw.captured_len > raw.original_len:
            summary.captured_exceeds_original += 1
        rec = decode_frame(raw, summary.skipped)
        if rec is not None:
            records.append(rec)
    summary.payload_records = len(records)
    return records, summary


def extract_payload_records(path) -> tuple[List[PayloadRecord], ExtractionSummary]:
    """Parse a whole PCAP file into payload records plus an extraction summary."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        return extract_from_stream(fh)


def records_to_csv(records: Iterable[PayloadRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        t = r.five_tuple
        w.writerow([t.src_ip, t.dst_ip, t.src_port, t.dst_port, t.protocol.value,
                    repr(float(r.timestamp)), bytes_to_hex(r.payload)])
    return buf.getvalue()


def write_records_csv(records: Iterable[PayloadRecord], path) -> None:
    atomic_write_text(path, records_to_csv(records))


def read_records_csv(path) -> List[PayloadRecord]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RECORD_COLUMNS:
            raise FormatError(f"expected header {','.join(RECORD_COLUMNS)}", line=1, path=path)
        out = []
        for row in reader:
            line = reader.line_num
            if len(row) != len(RECORD_COLUMNS):
                raise FormatError(f"expected {len(RECORD_COLUMNS)} fields, got {len(row)}",
                                  line=line, path=path)
            try:
                tup = FiveTuple(str(ipaddress.ip_address(row[0])), str(ipaddress.ip_address(row[1])),
                                int(row[2]), int(row[3]), Protocol(row[4].lower()))
                payload = hex_to_bytes(row[6])
                ts = float(row[5])
            except (ValueError, DataFormatError) as exc:
                raise FormatError(str(exc), line=line, path=path) from exc
            if not payload:
                raise FormatError("empty payload", line=line, path=path)
            out.append(PayloadRecord(tup, ts, payload))
    return out
