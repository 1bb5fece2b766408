"""Reference contexts and the three-flow benchmark.

The benchmark replays the traffic mix of a two-node RPL/UDP setup: two
IPv6/ICMPv6 flows (RPL control toward a link-local multicast group and
between link-local unicast addresses) and one IPv6/UDP flow between global
addresses carrying "Hello". Packets are generated deterministically from a
seed, compressed, decompressed and checked bit for bit.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .context import (
    CDAction,
    DirectionIndicator,
    FieldDescriptor,
    FlatContext,
    FlatRule,
    LayeredContext,
    LayerRule,
    RuleIdLayout,
    DEFAULT_LAYOUT,
    equal,
    ignore,
)
from .engine import DecompressionEnvironment, compress, compressed_size_octets, decompress
from .metrics import FlowStats, average_octets_per_packet
from .packet import (
    NH_ICMPV6,
    NH_UDP,
    Direction,
    FieldId as F,
    HeaderStack,
    Icmpv6Header,
    Ipv6Header,
    Layer,
    UdpHeader,
    ipv6_halves,
    parse_stack,
    serialize_stack,
    with_checksum,
)

UP = DirectionIndicator.UP

# documentation prefixes standing in for "Alpha::/64" and "Beta::/64"
ALPHA_PREFIX, _ = ipv6_halves("2001:db8:a::")
BETA_PREFIX, _ = ipv6_halves("2001:db8:b::")
SERVER_IID = 0x1000
LINK_LOCAL_PREFIX, _ = ipv6_halves("fe80::")
RPL_MCAST_PREFIX, RPL_MCAST_IID = ipv6_halves("ff02::1a")

SENDER_IID = 0x0212_7401_0001_0101
RECEIVER_IID = 0x0212_7402_0002_0202

ICMPV6_RPL = 155

# Published comparison values (IPHC/NHC is not implemented here).
IPHC_FLOW_OCTETS = {"a": 6, "b": 6, "c": 4}
REFERENCE_SCHC_AVG = 2.66
REFERENCE_IPHC_AVG = 7.69
STATED_MIX_SCHC = {"udp": 358.33, "icmpv6": 301.66}
STATED_MIX_IPHC = {"udp": 350.0, "icmpv6": 308.33}


def ipv6_fields(*, next_header: int, hop_limit: int, src_prefix: int, dst_prefix: int,
                dst_iid: int) -> list[FieldDescriptor]:
    """IPv6 rows of the reference rule: everything elided, source IID from the device ID."""
    return [
        equal(F.IPV6_V, 6),
        equal(F.IPV6_TC, 0),
        equal(F.IPV6_FL, 0),
        ignore(F.IPV6_LEN, CDAction.COMP_LENGTH),
        equal(F.IPV6_NH, next_header),
        equal(F.IPV6_HL, hop_limit),
        equal(F.IPV6_S_PREFIX, src_prefix, UP),
        ignore(F.IPV6_S_IID, CDAction.DEVIID_DID, UP),
        equal(F.IPV6_D_PREFIX, dst_prefix, UP),
        equal(F.IPV6_D_IID, dst_iid, UP),
    ]


def udp_fields(src_port: int, dst_port: int) -> list[FieldDescriptor]:
    return [
        equal(F.UDP_SPORT, src_port),
        equal(F.UDP_DPORT, dst_port),
        ignore(F.UDP_LEN, CDAction.COMP_LENGTH),
        ignore(F.UDP_CKSUM, CDAction.COMP_CHECKSUM),
    ]


def icmpv6_fields(msg_type: int = ICMPV6_RPL) -> list[FieldDescriptor]:
    # the code octet travels in-line so one rule serves every RPL message kind
    return [
        equal(F.ICMPV6_TYPE, msg_type),
        ignore(F.ICMPV6_CODE, CDAction.VALUE_SENT),
        ignore(F.ICMPV6_CKSUM, CDAction.COMP_CHECKSUM),
    ]


def hello_ipv6() -> list[FieldDescriptor]:
    return ipv6_fields(next_header=NH_UDP, hop_limit=255, src_prefix=ALPHA_PREFIX,
                       dst_prefix=BETA_PREFIX, dst_iid=SERVER_IID)


def hello_rule(rule_id: int = 0) -> FlatRule:
    return FlatRule(rule_id, tuple(hello_ipv6() + udp_fields(5683, 5683)))


def hello_context() -> FlatContext:
    return FlatContext((hello_rule(),))


def two_flow_flat_context() -> FlatContext:
    """Two IPv6/UDP flows to the same host, one flat rule each."""
    return FlatContext((
        FlatRule(0, tuple(hello_ipv6() + udp_fields(5683, 5683))),
        FlatRule(1, tuple(hello_ipv6() + udp_fields(5230, 5230))),
    ))


def two_flow_layered_context() -> LayeredContext:
    """The same two flows with the IPv6 rule stored once (NLC 1, TLC 1 and 2)."""
    return LayeredContext(
        nlc=(LayerRule(1, Layer.NETWORK, tuple(hello_ipv6())),),
        tlc=(LayerRule(1, Layer.TRANSPORT, tuple(udp_fields(5683, 5683))),
             LayerRule(2, Layer.TRANSPORT, tuple(udp_fields(5230, 5230)))),
    )


def hello_packet(payload: bytes = b"Hello", *, src_port: int = 5683, dst_port: int = 5683,
                   hop_limit: int = 255, src_iid: int = SENDER_IID,
                   direction: Direction = Direction.UP) -> HeaderStack:
    ip = Ipv6Header(hop_limit=hop_limit, next_header=NH_UDP, src_prefix=ALPHA_PREFIX,
                    src_iid=src_iid, dst_prefix=BETA_PREFIX, dst_iid=SERVER_IID)
    return with_checksum(HeaderStack(ip, UdpHeader(src_port, dst_port), None, payload, direction))


@dataclass(frozen=True)
class FlowTemplate:
    label: str
    description: str
    kind: str  # "udp" or "icmpv6"
    ipv6: dict
    count: float


FLOWS = (
    FlowTemplate("a", "IPv6/ICMPv6 link-local -> link-local multicast (RPL DIS/DIO)", "icmpv6",
                 dict(next_header=NH_ICMPV6, hop_limit=255, src_prefix=LINK_LOCAL_PREFIX,
                      dst_prefix=RPL_MCAST_PREFIX, dst_iid=RPL_MCAST_IID),
                 150.83),
    FlowTemplate("b", "IPv6/ICMPv6 link-local unicast (RPL DAO)", "icmpv6",
                 dict(next_header=NH_ICMPV6, hop_limit=64, src_prefix=LINK_LOCAL_PREFIX,
                      dst_prefix=LINK_LOCAL_PREFIX, dst_iid=RECEIVER_IID),
                 150.83),
    FlowTemplate("c", "IPv6/UDP global unicast carrying \"Hello\"", "udp",
                 dict(next_header=NH_UDP, hop_limit=255, src_prefix=ALPHA_PREFIX,
                      dst_prefix=BETA_PREFIX, dst_iid=SERVER_IID),
                 358.33),
)

BENCH_UDP_PORT = 5683
HELLO = b"Hello"


def bench_flat_context(layout: RuleIdLayout = DEFAULT_LAYOUT) -> FlatContext:
    rules = []
    for rule_id, flow in enumerate(FLOWS):
        tail = udp_fields(BENCH_UDP_PORT, BENCH_UDP_PORT) if flow.kind == "udp" else icmpv6_fields()
        rules.append(FlatRule(rule_id, tuple(ipv6_fields(**flow.ipv6) + tail)))
    return FlatContext(tuple(rules), layout)


def bench_layered_context(layout: RuleIdLayout = DEFAULT_LAYOUT) -> LayeredContext:
    nlc = tuple(LayerRule(i, Layer.NETWORK, tuple(ipv6_fields(**flow.ipv6)))
                for i, flow in enumerate(FLOWS))
    tlc = (LayerRule(0, Layer.TRANSPORT, tuple(icmpv6_fields())),
           LayerRule(1, Layer.TRANSPORT, tuple(udp_fields(BENCH_UDP_PORT, BENCH_UDP_PORT))))
    return LayeredContext(nlc, tlc, (), layout)


def flow_packet(flow: FlowTemplate, rng: random.Random) -> HeaderStack:
    p = flow.ipv6
    ip = Ipv6Header(next_header=p["next_header"], hop_limit=p["hop_limit"],
                    src_prefix=p["src_prefix"], src_iid=SENDER_IID,
                    dst_prefix=p["dst_prefix"], dst_iid=p["dst_iid"])
    if flow.kind == "udp":
        stack = HeaderStack(ip, UdpHeader(BENCH_UDP_PORT, BENCH_UDP_PORT), None, HELLO)
    else:
        code = rng.choice((0, 1)) if flow.label == "a" else 2
        body = bytes(rng.getrandbits(8) for _ in range(rng.randrange(2, 12)))
        stack = HeaderStack(ip, Icmpv6Header(ICMPV6_RPL, code), None, body)
    return with_checksum(stack)


@dataclass
class FlowResult:
    flow: FlowTemplate
    packets: int
    uncompressed_header_octets: int
    compressed_header_octets: int
    rule_ids: set = field(default_factory=set)

    def stats(self, count: Optional[float] = None) -> FlowStats:
        return FlowStats(self.flow.label, self.flow.count if count is None else count,
                         self.uncompressed_header_octets, self.compressed_header_octets)


@dataclass
class BenchResult:
    mode: str
    flows: list[FlowResult]
    descriptor_count: int
    other_mode_descriptor_count: int
    mean_octets: float

    def stats(self) -> list[FlowStats]:
        return [f.stats() for f in self.flows]


def split_packets(total: int, weights: list[float]) -> list[int]:
    """Largest-remainder split of ``total`` packets over ``weights``."""
    s = sum(weights)
    exact = [total * w / s for w in weights]
    out = [int(x) for x in exact]
    for i in sorted(range(len(weights)), key=lambda i: exact[i] - out[i], reverse=True):
        if sum(out) >= total:
            break
        out[i] += 1
    return out


def run_bench(mode: str = "flat", packets: int = 660, seed: int = 0) -> BenchResult:
    flat, layered = bench_flat_context(), bench_layered_context()
    ctx = flat if mode == "flat" else layered
    other = layered if mode == "flat" else flat
    rng = random.Random(seed)
    env = DecompressionEnvironment(device_iid=SENDER_IID, direction=Direction.UP)
    results = []
    for flow, n in zip(FLOWS, split_packets(packets, [f.count for f in FLOWS])):
        sizes = set()
        rule_ids = set()
        uncompressed = None
        for _ in range(max(n, 1)):
            raw = serialize_stack(flow_packet(flow, rng))
            stack = parse_stack(raw)
            pkt = compress(ctx, stack, validate=False)
            back = serialize_stack(decompress(pkt.to_bytes(), ctx, env))
            if back != raw:
                raise AssertionError(f"flow {flow.label}: round trip changed the packet")
            sizes.add(compressed_size_octets(pkt))
            rule_ids.add(pkt.rule_id)
            uncompressed = stack.header_octets()
        results.append(FlowResult(flow, n, uncompressed, max(sizes), rule_ids))
    mean = average_octets_per_packet([r.stats() for r in results])
    return BenchResult(mode, results, ctx.descriptor_count(), other.descriptor_count(), mean)


def stated_mix_mean(flow_octets: dict[str, int], mix: dict[str, float]) -> float:
    """Weighted mean over the published UDP/ICMPv6 packet proportions."""
    udp = flow_octets["c"]
    icmp = flow_octets["a"]
    return (mix["udp"] * udp + mix["icmpv6"] * icmp) / (mix["udp"] + mix["icmpv6"])
