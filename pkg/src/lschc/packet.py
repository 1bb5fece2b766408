"""IPv6 / UDP / ICMPv6 / CoAP header stacks with field-level access.

Every header field is addressable through :class:`FieldId`, which carries the
field's layer, owning header type and natural bit width. Values come back as
:class:`~lschc.bits.Bits` so leading zeros are never lost.
"""
from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass, replace
from typing import Collection, Optional, Union

from .bits import Bits
from .errors import (
    BadVersion,
    FieldAbsent,
    InconsistentChain,
    LengthMismatch,
    PositionOutOfRange,
    TruncatedHeader,
)

NH_UDP = 17
NH_ICMPV6 = 58
COAP_DEFAULT_PORT = 5683

IPV6_HEADER_LEN = 40
UDP_HEADER_LEN = 8
ICMPV6_HEADER_LEN = 4
COAP_HEADER_LEN = 4


class Direction(enum.Enum):
    UP = "up"
    DOWN = "down"


class Layer(enum.IntEnum):
    NETWORK = 0
    TRANSPORT = 1
    APPLICATION = 2


@dataclass(frozen=True)
class Ipv6Header:
    version: int = 6
    traffic_class: int = 0
    flow_label: int = 0
    payload_length: int = 0
    next_header: int = NH_UDP
    hop_limit: int = 64
    src_prefix: int = 0
    src_iid: int = 0
    dst_prefix: int = 0
    dst_iid: int = 0

    size = IPV6_HEADER_LEN

    @property
    def src(self) -> ipaddress.IPv6Address:
        return ipaddress.IPv6Address((self.src_prefix << 64) | self.src_iid)

    @property
    def dst(self) -> ipaddress.IPv6Address:
        return ipaddress.IPv6Address((self.dst_prefix << 64) | self.dst_iid)

    def to_bytes(self) -> bytes:
        first = (self.version << 28) | (self.traffic_class << 20) | self.flow_label
        return struct.pack("!IHBBQQQQ", first, self.payload_length, self.next_header,
                           self.hop_limit, self.src_prefix, self.src_iid,
                           self.dst_prefix, self.dst_iid)

    @classmethod
    def from_bytes(cls, data: bytes) -> Ipv6Header:
        if len(data) < IPV6_HEADER_LEN:
            raise TruncatedHeader(f"IPv6 header needs 40 octets, got {len(data)}")
        first, plen, nh, hl, sp, si, dp, di = struct.unpack_from("!IHBBQQQQ", data)
        return cls(first >> 28, (first >> 20) & 0xFF, first & 0xFFFFF, plen, nh, hl,
                   sp, si, dp, di)


@dataclass(frozen=True)
class UdpHeader:
    src_port: int = 0
    dst_port: int = 0
    length: int = UDP_HEADER_LEN
    checksum: int = 0

    size = UDP_HEADER_LEN
    next_header = NH_UDP

    def to_bytes(self) -> bytes:
        return struct.pack("!HHHH", self.src_port, self.dst_port, self.length, self.checksum)

    @classmethod
    def from_bytes(cls, data: bytes) -> UdpHeader:
        if len(data) < UDP_HEADER_LEN:
            raise TruncatedHeader(f"UDP header needs 8 octets, got {len(data)}")
        return cls(*struct.unpack_from("!HHHH", data))


@dataclass(frozen=True)
class Icmpv6Header:
    """Fixed 4-octet ICMPv6 part. The message body travels in ``HeaderStack.payload``."""

    msg_type: int = 0
    code: int = 0
    checksum: int = 0

    size = ICMPV6_HEADER_LEN
    next_header = NH_ICMPV6

    def to_bytes(self) -> bytes:
        return struct.pack("!BBH", self.msg_type, self.code, self.checksum)

    @classmethod
    def from_bytes(cls, data: bytes) -> Icmpv6Header:
        if len(data) < ICMPV6_HEADER_LEN:
            raise TruncatedHeader(f"ICMPv6 header needs 4 octets, got {len(data)}")
        return cls(*struct.unpack_from("!BBH", data))


@dataclass(frozen=True)
class CoapHeader:
    """CoAP fixed header; token and options are left in the payload."""

    version: int = 1
    msg_type: int = 0
    token_length: int = 0
    code: int = 0
    message_id: int = 0

    size = COAP_HEADER_LEN

    def to_bytes(self) -> bytes:
        first = (self.version << 6) | (self.msg_type << 4) | self.token_length
        return struct.pack("!BBH", first, self.code, self.message_id)

    @classmethod
    def from_bytes(cls, data: bytes) -> CoapHeader:
        if len(data) < COAP_HEADER_LEN:
            raise TruncatedHeader(f"CoAP header needs 4 octets, got {len(data)}")
        first, code, mid = struct.unpack_from("!BBH", data)
        return cls(first >> 6, (first >> 4) & 0x3, first & 0xF, code, mid)


Header = Union[Ipv6Header, UdpHeader, Icmpv6Header, CoapHeader]
TransportHeader = Union[UdpHeader, Icmpv6Header]

TRANSPORT_BY_NEXT_HEADER = {NH_UDP: UdpHeader, NH_ICMPV6: Icmpv6Header}


class FieldId(enum.Enum):
    """Every compressible header field: (code, header type, attribute, width)."""

    IPV6_V = (1, Ipv6Header, "version", 4)
    IPV6_TC = (2, Ipv6Header, "traffic_class", 8)
    IPV6_FL = (3, Ipv6Header, "flow_label", 20)
    IPV6_LEN = (4, Ipv6Header, "payload_length", 16)
    IPV6_NH = (5, Ipv6Header, "next_header", 8)
    IPV6_HL = (6, Ipv6Header, "hop_limit", 8)
    IPV6_S_PREFIX = (7, Ipv6Header, "src_prefix", 64)
    IPV6_S_IID = (8, Ipv6Header, "src_iid", 64)
    IPV6_D_PREFIX = (9, Ipv6Header, "dst_prefix", 64)
    IPV6_D_IID = (10, Ipv6Header, "dst_iid", 64)
    UDP_SPORT = (20, UdpHeader, "src_port", 16)
    UDP_DPORT = (21, UdpHeader, "dst_port", 16)
    UDP_LEN = (22, UdpHeader, "length", 16)
    UDP_CKSUM = (23, UdpHeader, "checksum", 16)
    ICMPV6_TYPE = (30, Icmpv6Header, "msg_type", 8)
    ICMPV6_CODE = (31, Icmpv6Header, "code", 8)
    ICMPV6_CKSUM = (32, Icmpv6Header, "checksum", 16)
    COAP_VER = (40, CoapHeader, "version", 2)
    COAP_TYPE = (41, CoapHeader, "msg_type", 2)
    COAP_TKL = (42, CoapHeader, "token_length", 4)
    COAP_CODE = (43, CoapHeader, "code", 8)
    COAP_MID = (44, CoapHeader, "message_id", 16)

    def __init__(self, code, header, attr, width):
        self.code = code
        self.header = header
        self.attr = attr
        self.width = width

    @property
    def layer(self) -> Layer:
        return HEADER_LAYER[self.header]

    @classmethod
    def from_code(cls, code: int) -> FieldId:
        for fid in cls:
            if fid.code == code:
                return fid
        raise ValueError(f"unknown field code {code}")


HEADER_LAYER = {
    Ipv6Header: Layer.NETWORK,
    UdpHeader: Layer.TRANSPORT,
    Icmpv6Header: Layer.TRANSPORT,
    CoapHeader: Layer.APPLICATION,
}

# header-order field lists, one per header type
HEADER_FIELDS = {h: [f for f in FieldId if f.header is h] for h in HEADER_LAYER}

LENGTH_FIELDS = {FieldId.IPV6_LEN, FieldId.UDP_LEN}
CHECKSUM_FIELDS = {FieldId.UDP_CKSUM, FieldId.ICMPV6_CKSUM}


@dataclass(frozen=True)
class HeaderStack:
    network: Ipv6Header
    transport: Optional[TransportHeader] = None
    application: Optional[CoapHeader] = None
    payload: bytes = b""
    direction: Direction = Direction.UP

    def layer(self, layer: Layer) -> Optional[Header]:
        return (self.network, self.transport, self.application)[layer]

    def headers(self) -> list[Header]:
        return [h for h in (self.network, self.transport, self.application) if h is not None]

    def upper_bytes(self) -> bytes:
        """Everything after the IPv6 header, as it goes on the wire."""
        parts = [h.to_bytes() for h in (self.transport, self.application) if h is not None]
        return b"".join(parts) + self.payload

    def header_octets(self) -> int:
        return sum(h.size for h in self.headers())

    def replace(self, **changes) -> HeaderStack:
        return replace(self, **changes)


def parse_stack(data: bytes, direction: Direction = Direction.UP,
                coap_ports: Collection[int] = ()) -> HeaderStack:
    """Parse raw octets that start with an IPv6 header.

    Next-header values other than UDP and ICMPv6 leave ``transport`` empty and
    keep the octets as payload. A CoAP fixed header is only split off when one
    of the UDP ports is listed in ``coap_ports`` and the octets look like CoAP
    (version 1, token length at most 8); otherwise they stay payload too.
    """
    data = bytes(data)
    ip = Ipv6Header.from_bytes(data)
    if ip.version != 6:
        raise BadVersion(f"IP version {ip.version}, expected 6")
    rest = data[IPV6_HEADER_LEN:]
    if ip.payload_length > len(rest):
        raise TruncatedHeader(
            f"payload length {ip.payload_length} exceeds the {len(rest)} octets present")
    if ip.payload_length < len(rest):
        raise LengthMismatch(
            f"payload length {ip.payload_length} but {len(rest)} octets follow the header")

    transport = application = None
    header_cls = TRANSPORT_BY_NEXT_HEADER.get(ip.next_header)
    if header_cls is not None:
        transport = header_cls.from_bytes(rest)
        rest = rest[header_cls.size:]
        if isinstance(transport, UdpHeader):
            if transport.length != UDP_HEADER_LEN + len(rest):
                raise LengthMismatch(
                    f"UDP length {transport.length} but datagram is {UDP_HEADER_LEN + len(rest)}")
            if ({transport.src_port, transport.dst_port} & set(coap_ports)
                    and len(rest) >= COAP_HEADER_LEN):
                coap = CoapHeader.from_bytes(rest)
                if coap.version == 1 and coap.token_length <= 8:
                    application = coap
                    rest = rest[COAP_HEADER_LEN:]
    return HeaderStack(ip, transport, application, rest, direction)


def _check_chain(stack: HeaderStack) -> None:
    nh = stack.network.next_header
    t = stack.transport
    if t is not None and t.next_header != nh:
        raise InconsistentChain(
            f"{type(t).__name__} present but next_header is {nh}")
    if t is None and nh in TRANSPORT_BY_NEXT_HEADER:
        raise InconsistentChain(f"next_header {nh} announces a transport header that is missing")
    if stack.application is not None and not isinstance(t, UdpHeader):
        raise InconsistentChain("CoAP header requires a UDP transport")


def finalize_lengths(stack: HeaderStack) -> HeaderStack:
    """Return ``stack`` with IPv6 payload length and UDP length set from its content."""
    upper = len(stack.upper_bytes())
    transport = stack.transport
    if isinstance(transport, UdpHeader):
        transport = replace(transport, length=upper)
    network = replace(stack.network, payload_length=upper)
    return replace(stack, network=network, transport=transport)


def serialize_stack(stack: HeaderStack) -> bytes:
    """Inverse of :func:`parse_stack`. Length fields are always recomputed."""
    _check_chain(stack)
    stack = finalize_lengths(stack)
    return stack.network.to_bytes() + stack.upper_bytes()


def get_field(stack: HeaderStack, field_id: FieldId, position: int = 0) -> Bits:
    if position != 0:
        raise PositionOutOfRange(f"{field_id.name} has a single instance, got position {position}")
    header = stack.layer(field_id.layer)
    if not isinstance(header, field_id.header):
        raise FieldAbsent(f"{field_id.name}: no {field_id.header.__name__} in stack")
    return Bits(getattr(header, field_id.attr), field_id.width)


def build_header(header_cls, values: dict[FieldId, int]) -> Header:
    """Construct a header from a complete ``{FieldId: value}`` mapping."""
    kwargs = {fid.attr: values[fid] for fid in HEADER_FIELDS[header_cls]}
    return header_cls(**kwargs)


def ones_complement_sum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def _pseudo_header(stack: HeaderStack, next_header: int, upper_len: int) -> bytes:
    ip = stack.network
    return struct.pack("!QQQQIxxxB", ip.src_prefix, ip.src_iid, ip.dst_prefix, ip.dst_iid,
                       upper_len, next_header)


def compute_checksum(stack: HeaderStack, layer: type = UdpHeader) -> int:
    """Internet checksum of ``layer`` (UdpHeader or Icmpv6Header) over the IPv6 pseudo-header.

    The checksum field itself is taken as zero. A UDP result of zero is sent
    as 0xFFFF because zero means "no checksum".
    """
    transport = stack.transport
    if not isinstance(transport, layer):
        raise FieldAbsent(f"no {layer.__name__} in stack")
    zeroed = replace(stack, transport=replace(transport, checksum=0))
    upper = zeroed.upper_bytes()
    pseudo = _pseudo_header(stack, transport.next_header, len(upper))
    csum = ~ones_complement_sum(pseudo + upper) & 0xFFFF
    if layer is UdpHeader and csum == 0:
        csum = 0xFFFF
    return csum


def verify_checksum(stack: HeaderStack) -> bool:
    """True when the transport checksum in ``stack`` folds to 0xFFFF."""
    if stack.transport is None:
        return True
    stack = finalize_lengths(stack)
    upper = stack.upper_bytes()
    pseudo = _pseudo_header(stack, stack.transport.next_header, len(upper))
    return ones_complement_sum(pseudo + upper) == 0xFFFF


def with_checksum(stack: HeaderStack) -> HeaderStack:
    """Return ``stack`` with correct lengths and a valid transport checksum."""
    stack = finalize_lengths(stack)
    if stack.transport is None:
        return stack
    csum = compute_checksum(stack, type(stack.transport))
    return replace(stack, transport=replace(stack.transport, checksum=csum))


def ipv6_halves(address: str) -> tuple[int, int]:
    """Split a textual IPv6 address into (prefix, iid) 64-bit integers."""
    value = int(ipaddress.IPv6Address(address))
    return value >> 64, value & ((1 << 64) - 1)

