"""Minimal classic-pcap reader.

Scope is deliberately narrow: classic pcap only (magic 0xa1b2c3d4, either byte
order), Ethernet link type, IPv4 carrying TCP or UDP. Anything else in the
capture is skipped and counted, not parsed. Truncated headers or frames raise
``MalformedPcapError``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import IoFailureError, MalformedPcapError

__all__ = ["PacketRecord", "PcapCapture", "parse_pcap", "parse_pcap_bytes"]

_MAGIC = 0xA1B2C3D4
_ETHERTYPE_IPV4 = 0x0800
_PROTO_TCP = 6
_PROTO_UDP = 17


@dataclass(frozen=True)
class PacketRecord:
    """One parsed TCP or UDP packet.

    ``payload_len`` counts transport payload bytes (IP total length minus IP
    and transport headers). ``flags`` is the TCP flag byte, 0 for UDP.
    """

    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str
    payload_len: int
    flags: int


@dataclass
class PcapCapture:
    packets: list[PacketRecord]
    skipped_frames: int


def parse_pcap(path) -> PcapCapture:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    return parse_pcap_bytes(data)


def parse_pcap_bytes(data: bytes) -> PcapCapture:
    if len(data) < 24:
        raise MalformedPcapError("file shorter than the pcap global header")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le == _MAGIC:
        end = "<"
    elif struct.unpack_from(">I", data, 0)[0] == _MAGIC:
        end = ">"
    else:
        raise MalformedPcapError(f"unrecognized magic 0x{magic_le:08x}")
    linktype = struct.unpack_from(end + "I", data, 20)[0]
    if linktype != 1:  # LINKTYPE_ETHERNET
        raise MalformedPcapError(f"unsupported link type {linktype}")

    packets: list[PacketRecord] = []
    skipped = 0
    offset = 24
    rec_hdr = struct.Struct(end + "IIII")
    while offset < len(data):
        if offset + rec_hdr.size > len(data):
            raise MalformedPcapError("truncated packet record header")
        ts_sec, ts_usec, incl_len, _orig_len = rec_hdr.unpack_from(data, offset)
        offset += rec_hdr.size
        if offset + incl_len > len(data):
            raise MalformedPcapError("truncated packet data")
        frame = data[offset : offset + incl_len]
        offset += incl_len
        parsed = _parse_frame(frame)
        if parsed is None:
            skipped += 1
            continue
        packets.append(
            PacketRecord(timestamp=ts_sec + ts_usec / 1e6, **parsed)
        )
    return PcapCapture(packets=packets, skipped_frames=skipped)


def _parse_frame(frame: bytes):
    """Ethernet/IPv4/TCP-or-UDP decode; None means skip (non-IP, non-TCP/UDP).

    A frame that *claims* to be IPv4/TCP/UDP but is too short to hold its own
    headers is a capture defect, not foreign traffic, and raises.
    """
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    if ethertype != _ETHERTYPE_IPV4:
        return None
    ip = frame[14:]
    if len(ip) < 20:
        raise MalformedPcapError("frame truncated inside the IPv4 header")
    ver_ihl = ip[0]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or len(ip) < ihl:
        raise MalformedPcapError("bad IPv4 header length")
    total_len = struct.unpack_from("!H", ip, 2)[0]
    if total_len < ihl or len(ip) < total_len:
        raise MalformedPcapError("frame shorter than the IPv4 total length")
    proto = ip[9]
    src_ip = ".".join(str(b) for b in ip[12:16])
    dst_ip = ".".join(str(b) for b in ip[16:20])
    transport = ip[ihl:total_len]

    if proto == _PROTO_TCP:
        if len(transport) < 20:
            raise MalformedPcapError("frame truncated inside the TCP header")
        src_port, dst_port = struct.unpack_from("!HH", transport, 0)
        data_off = (transport[12] >> 4) * 4
        if data_off < 20 or len(transport) < data_off:
            raise MalformedPcapError("bad TCP data offset")
        return dict(
            src_ip=src_ip,
            dst_ip=dst_ip,
            src_port=src_port,
            dst_port=dst_port,
            protocol="tcp",
            payload_len=len(transport) - data_off,
            flags=transport[13],
        )
    if proto == _PROTO_UDP:
        if len(transport) < 8:
            raise MalformedPcapError("frame truncated inside the UDP header")
        src_port, dst_port, udp_len = struct.unpack_from("!HHH", transport, 0)
        if udp_len < 8 or len(transport) < udp_len:
            raise MalformedPcapError("bad UDP length")
        return dict(
            src_ip=src_ip,
            dst_ip=dst_ip,
            src_port=src_port,
            dst_port=dst_port,
            protocol="udp",
            payload_len=udp_len - 8,
            flags=0,
        )
    return None
