"""Packet records, classic capture-file reading/writing and HTTP reassembly.

Only the classic fixed-header capture container with microsecond timestamps
is understood. Frames that are not Ethernet/IPv4 (ARP, IPv6, ...) are skipped
and counted rather than raising.
"""

from __future__ import annotations

import enum
import io
import ipaddress
import logging
import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

logger = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1

ETH_HEADER = 14
IPV4_HEADER = 20
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100

# TCP flag bits
FIN, SYN, RST, PSH, ACK = 0x01, 0x02, 0x04, 0x08, 0x10


class CaptureError(Exception):
    pass


class UnrecognizedMagic(CaptureError):
    pass


class UnsupportedLinkType(CaptureError):
    pass


class Proto(enum.IntEnum):
    """Transport protocol, valued by its IANA protocol number."""

    OTHER = 0
    ICMP = 1
    TCP = 6
    UDP = 17

    @classmethod
    def from_number(cls, number: int) -> "Proto":
        try:
            return cls(number)
        except ValueError:
            return cls.OTHER


MIN_LENGTH = {
    Proto.TCP: ETH_HEADER + IPV4_HEADER + 20,
    Proto.UDP: ETH_HEADER + IPV4_HEADER + 8,
    Proto.ICMP: ETH_HEADER + IPV4_HEADER + 8,
    Proto.OTHER: ETH_HEADER + IPV4_HEADER,
}

# protocol number written for Proto.OTHER frames (IANA "reserved")
_OTHER_WIRE_PROTO = 255


@dataclass(frozen=True)
class Packet:
    ts: float
    eth_src: str
    eth_dst: str
    ip_src: str
    ip_dst: str
    proto: Proto
    src_port: int
    dst_port: int
    length: int
    payload: bytes | None = None
    tcp_flags: int = 0

    def __post_init__(self):
        if self.proto in (Proto.TCP, Proto.UDP):
            if not (0 <= self.src_port <= 65535 and 0 <= self.dst_port <= 65535):
                raise ValueError(f"port out of range: {self.src_port}/{self.dst_port}")
        elif self.src_port or self.dst_port:
            raise ValueError(f"{self.proto.name} packet cannot carry ports")
        if self.length < MIN_LENGTH[self.proto]:
            raise ValueError(
                f"length {self.length} below {self.proto.name} minimum {MIN_LENGTH[self.proto]}"
            )

    def wire_fields(self) -> tuple:
        return (self.ts, self.ip_src, self.ip_dst, self.proto, self.src_port, self.dst_port, self.length)


@dataclass(frozen=True)
class HttpRequest:
    ts: float
    src_ip: str
    method: str
    path: str
    query: str
    body: str
    raw: str
    malformed: bool = False


@dataclass
class Capture:
    """Result of parsing one capture file."""

    packets: list[Packet] = field(default_factory=list)
    skipped: int = 0
    truncated: int = 0
    # absolute time of the first record in microseconds; packet ts are relative to it
    epoch_us: int = 0

    @property
    def total(self) -> int:
        return len(self.packets) + self.skipped


def mac_str(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def mac_bytes(mac: str) -> bytes:
    return bytes(int(part, 16) for part in mac.split(":"))


def _read_all(source: bytes | bytearray | BinaryIO) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return source.read()


def parse_capture(source: bytes | BinaryIO) -> Capture:
    """Parse a classic capture file into normalized packets.

    Timestamps are made relative to the first record, which defines the stream
    epoch. Records whose data is shorter than the declared capture length end
    the file (there is nothing reliable to resync on) and count as skipped.
    """
    data = _read_all(source)
    if len(data) < 24:
        raise UnrecognizedMagic("capture shorter than the global header")
    (magic,) = struct.unpack("<I", data[:4])
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == 0xD4C3B2A1:
        endian = ">"
    else:
        raise UnrecognizedMagic(f"magic 0x{magic:08x}")
    _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", data[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {linktype}")

    cap = Capture()
    offset = 24
    first_us: int | None = None
    while offset < len(data):
        if len(data) - offset < 16:
            cap.skipped += 1
            cap.truncated += 1
            break
        sec, usec, incl, orig = struct.unpack(endian + "IIII", data[offset : offset + 16])
        offset += 16
        frame = data[offset : offset + incl]
        offset += incl
        if len(frame) < incl:
            cap.skipped += 1
            cap.truncated += 1
            logger.warning("truncated record: %d of %d bytes", len(frame), incl)
            break
        abs_us = sec * 1_000_000 + usec
        if first_us is None:
            first_us = abs_us
            cap.epoch_us = abs_us
        pkt = decode_frame(frame, (abs_us - first_us) / 1e6, orig)
        if pkt is None:
            cap.skipped += 1
        else:
            cap.packets.append(pkt)
    return cap


def decode_frame(frame: bytes, ts: float, length: int) -> Packet | None:
    """Decode one Ethernet frame; None for anything that is not IPv4."""
    if len(frame) < ETH_HEADER:
        return None
    eth_dst, eth_src = frame[0:6], frame[6:12]
    (ethertype,) = struct.unpack("!H", frame[12:14])
    pos = ETH_HEADER
    if ethertype == ETHERTYPE_VLAN:
        if len(frame) < pos + 4:
            return None
        (ethertype,) = struct.unpack("!H", frame[pos + 2 : pos + 4])
        pos += 4
    if ethertype != ETHERTYPE_IPV4 or len(frame) < pos + IPV4_HEADER:
        return None
    vihl = frame[pos]
    if vihl >> 4 != 4:
        return None
    ihl = (vihl & 0x0F) * 4
    (total_len,) = struct.unpack("!H", frame[pos + 2 : pos + 4])
    proto = Proto.from_number(frame[pos + 9])
    ip_src = str(ipaddress.IPv4Address(frame[pos + 12 : pos + 16]))
    ip_dst = str(ipaddress.IPv4Address(frame[pos + 16 : pos + 20]))
    l4 = frame[pos + ihl : pos + max(total_len, ihl)]
    sport = dport = flags = 0
    payload = None
    if proto == Proto.TCP:
        if len(l4) < 20:
            return None
        sport, dport = struct.unpack("!HH", l4[:4])
        data_off = (l4[12] >> 4) * 4
        flags = l4[13]
        payload = l4[data_off:]
    elif proto == Proto.UDP:
        if len(l4) < 8:
            return None
        sport, dport = struct.unpack("!HH", l4[:4])
        payload = l4[8:]
    elif proto == Proto.ICMP:
        payload = l4[8:]
    else:
        payload = l4
    length = max(length, MIN_LENGTH[proto])
    return Packet(
        ts=ts,
        eth_src=mac_str(eth_src),
        eth_dst=mac_str(eth_dst),
        ip_src=ip_src,
        ip_dst=ip_dst,
        proto=proto,
        src_port=sport,
        dst_port=dport,
        length=length,
        payload=payload or None,
        tcp_flags=flags,
    )


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def build_frame(p: Packet) -> bytes:
    """Serialize a packet into an Ethernet/IPv4 frame of exactly ``p.length`` bytes."""
    payload = p.payload or b""
    src = ipaddress.IPv4Address(p.ip_src).packed
    dst = ipaddress.IPv4Address(p.ip_dst).packed
    if p.proto == Proto.TCP:
        l4 = struct.pack("!HHIIBBHHH", p.src_port, p.dst_port, 0, 0, 5 << 4, p.tcp_flags, 65535, 0, 0)
    elif p.proto == Proto.UDP:
        l4 = struct.pack("!HHHH", p.src_port, p.dst_port, 8 + len(payload), 0)
    elif p.proto == Proto.ICMP:
        l4 = struct.pack("!BBHHH", 8, 0, 0, 0, 0)
    else:
        l4 = b""
    segment = l4 + payload
    wire_proto = int(p.proto) if p.proto != Proto.OTHER else _OTHER_WIRE_PROTO
    if p.proto in (Proto.TCP, Proto.UDP):
        pseudo = src + dst + struct.pack("!BBH", 0, wire_proto, len(segment))
        csum = _checksum(pseudo + segment)
        at = 16 if p.proto == Proto.TCP else 6
        segment = segment[:at] + struct.pack("!H", csum) + segment[at + 2 :]
    elif p.proto == Proto.ICMP:
        csum = _checksum(segment)
        segment = segment[:2] + struct.pack("!H", csum) + segment[4:]
    total_len = IPV4_HEADER + len(segment)
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0x4000, 64, wire_proto, 0, src, dst)
    ip = ip[:10] + struct.pack("!H", _checksum(ip)) + ip[12:]
    frame = mac_bytes(p.eth_dst) + mac_bytes(p.eth_src) + struct.pack("!H", ETHERTYPE_IPV4) + ip + segment
    if len(frame) > p.length:
        raise ValueError(f"packet length {p.length} smaller than its {len(frame)}-byte frame")
    # Ethernet trailer padding; excluded from the IP total length
    return frame + b"\x00" * (p.length - len(frame))


def write_capture(packets: Iterable[Packet], fh: BinaryIO, epoch_us: int = 0, snaplen: int = 65535) -> int:
    """Write packets as a little-endian classic capture file; returns record count."""
    fh.write(struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
    n = 0
    for p in packets:
        frame = build_frame(p)
        us = epoch_us + round(p.ts * 1e6)
        fh.write(struct.pack("<IIII", us // 1_000_000, us % 1_000_000, len(frame), p.length))
        fh.write(frame)
        n += 1
    return n


def capture_bytes(packets: Iterable[Packet], epoch_us: int = 0) -> bytes:
    buf = io.BytesIO()
    write_capture(packets, buf, epoch_us)
    return buf.getvalue()


def is_reserved_target(p: Packet, pool) -> bool:
    return pool.contains(p.ip_dst)


_METHODS = "GET|POST|PUT|DELETE|HEAD|OPTIONS|PATCH|CONNECT|TRACE"
_REQUEST_LINE = re.compile(rf"({_METHODS}) (\S+) HTTP/\d\.\d(?:\r?\n|\Z)")
_NEXT_REQUEST = re.compile(rf"(?:(?<=\n)|^)(?:{_METHODS}) \S+ HTTP/\d\.\d\r?\n")
_CONTENT_LENGTH = re.compile(r"^content-length:\s*(\d+)\s*$", re.I | re.M)


def reassemble_http(packets: Sequence[Packet]) -> list[HttpRequest]:
    """Split one TCP direction's payload bytes into HTTP requests.

    Retransmissions and reordering are not handled; segments are concatenated
    in the order given. Bytes that do not start with a request line become a
    single malformed request so their content still reaches the IDS.
    """
    chunks: list[tuple[int, Packet]] = []
    stream = bytearray()
    for p in packets:
        if p.payload:
            chunks.append((len(stream), p))
            stream.extend(p.payload)
    text = stream.decode("latin-1")

    def owner(offset: int) -> Packet:
        found = chunks[0][1]
        for start, pkt in chunks:
            if start > offset:
                break
            found = pkt
        return found

    requests = []
    pos = 0
    while pos < len(text):
        p = owner(pos)
        m = _REQUEST_LINE.match(text, pos)
        if m is None:
            nxt = _NEXT_REQUEST.search(text, pos + 1)
            end = nxt.start() if nxt else len(text)
            raw = text[pos:end]
            requests.append(HttpRequest(p.ts, p.ip_src, "MALFORMED", "*", "", "", raw, malformed=True))
            pos = end
            continue
        head_end = text.find("\r\n\r\n", m.end() - 2)
        sep = 4
        if head_end < 0:
            head_end = text.find("\n\n", m.end() - 1)
            sep = 2
        if head_end < 0:
            # headers run to the end of the stream
            nxt = _NEXT_REQUEST.search(text, m.end())
            end = nxt.start() if nxt else len(text)
            body_start = end
        else:
            body_start = head_end + sep
            cl = _CONTENT_LENGTH.search(text, m.end(), head_end)
            if cl:
                end = min(len(text), body_start + int(cl.group(1)))
            else:
                nxt = _NEXT_REQUEST.search(text, body_start)
                end = nxt.start() if nxt else len(text)
        target = m.group(2)
        path, _, query = target.partition("?")
        requests.append(
            HttpRequest(
                ts=p.ts,
                src_ip=p.ip_src,
                method=m.group(1),
                path=path,
                query=query,
                body=text[body_start:end],
                raw=text[pos:end],
            )
        )
        pos = end
    return requests
