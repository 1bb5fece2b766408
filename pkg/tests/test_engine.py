import random

import pytest

from lschc import scenarios
from lschc.bits import Bits
from lschc.context import (
    CDAction,
    DirectionIndicator,
    FieldDescriptor,
    FlatContext,
    FlatRule,
    LayeredContext,
    LayerRule,
    MatchingOperator,
    equal,
    flatten,
    ignore,
)
from lschc.engine import (
    CompressedPacket,
    DecompressionEnvironment,
    NoMatch,
    compress,
    compressed_size_octets,
    decompress,
    match_field,
    match_rule,
    select_rule_flat,
    select_rule_layered,
)
from lschc.errors import (
    ContextInvalid,
    EngineError,
    MissingDeviceIid,
    ResidueUnderflow,
    UnknownRuleId,
    WidthMismatch,
)
from lschc.packet import (
    Direction,
    FieldId,
    HeaderStack,
    Icmpv6Header,
    Ipv6Header,
    Layer,
    UdpHeader,
    parse_stack,
    serialize_stack,
    with_checksum,
)

from gen import env_for, random_flat_context, random_layered_context, random_packet

F = FieldId


def test_match_field_equal():
    d = equal(F.UDP_SPORT, 5683)
    assert match_field(d, Bits(5683, 16), Direction.UP)
    assert not match_field(d, Bits(5684, 16), Direction.UP)


def test_match_field_ignore():
    d = ignore(F.UDP_CKSUM, CDAction.COMP_CHECKSUM)
    assert all(match_field(d, Bits(v, 16), Direction.DOWN) for v in (0, 1, 0xFFFF))


def test_match_field_direction_gate():
    d = equal(F.IPV6_S_PREFIX, 1, DirectionIndicator.UP)
    assert match_field(d, Bits(1, 64), Direction.UP)
    assert not match_field(d, Bits(1, 64), Direction.DOWN)


def test_match_field_width():
    with pytest.raises(WidthMismatch):
        match_field(equal(F.UDP_SPORT, 1), Bits(1, 8), Direction.UP)


def test_match_rule_hello(hello_packet):
    rule = scenarios.hello_rule()
    assert match_rule(rule, hello_packet)
    assert hello_packet.network.next_header == 17 and hello_packet.network.hop_limit == 255


def test_match_rule_hop_limit_mismatch():
    assert not match_rule(scenarios.hello_rule(), scenarios.hello_packet(hop_limit=64))


def test_match_rule_missing_layer():
    ip = Ipv6Header(next_header=58, hop_limit=255, src_prefix=scenarios.ALPHA_PREFIX,
                    dst_prefix=scenarios.BETA_PREFIX, dst_iid=scenarios.SERVER_IID)
    stack = with_checksum(HeaderStack(ip, Icmpv6Header(128, 0)))
    assert not match_rule(scenarios.hello_rule(), stack)


def _valued(rule_id, value_sent_ports):
    """Reference rule with the UDP ports optionally carried in-line."""
    fields = scenarios.hello_ipv6() + [
        ignore(F.UDP_SPORT, CDAction.VALUE_SENT) if value_sent_ports else equal(F.UDP_SPORT, 5683),
        equal(F.UDP_DPORT, 5683),
        ignore(F.UDP_LEN, CDAction.COMP_LENGTH),
        ignore(F.UDP_CKSUM, CDAction.COMP_CHECKSUM),
    ]
    return FlatRule(rule_id, tuple(fields))


def test_select_prefers_smaller_residue(hello_packet):
    ctx = FlatContext((_valued(0, True), _valued(1, False)))
    assert select_rule_flat(ctx, hello_packet) == (1, 0)


def test_select_tie_lowest_id(hello_packet):
    a, b = scenarios.hello_rule(7), _valued(3, False)
    ctx = FlatContext((a, b))
    assert select_rule_flat(ctx, hello_packet) == (3, 0)


def test_select_no_match():
    with pytest.raises(NoMatch):
        select_rule_flat(scenarios.hello_context(), scenarios.hello_packet(hop_limit=1))


def test_layered_select_second_port_rule():
    ctx = scenarios.two_flow_layered_context()
    stack = scenarios.hello_packet(src_port=5230, dst_port=5230)
    assert select_rule_layered(ctx, stack) == {Layer.NETWORK: 1, Layer.TRANSPORT: 2,
                                               Layer.APPLICATION: None}
    pkt = compress(ctx, stack)
    assert str(pkt.rule_id_bits) == "11001"


def test_layered_select_network_only():
    ctx = scenarios.two_flow_layered_context()
    stack = scenarios.hello_packet(src_port=1, dst_port=2)
    assert select_rule_layered(ctx, stack) == {Layer.NETWORK: 1, Layer.TRANSPORT: None,
                                               Layer.APPLICATION: None}
    pkt = compress(ctx, stack)
    assert pkt.residue == Bits.from_bytes(stack.transport.to_bytes())
    assert compressed_size_octets(pkt) == 1 + 8


def test_layered_select_nothing():
    ctx = scenarios.two_flow_layered_context()
    stack = scenarios.hello_packet(hop_limit=3, src_port=1)
    assert set(select_rule_layered(ctx, stack).values()) == {None}
    pkt = compress(ctx, stack)
    assert pkt.rule_id == 31
    flat_pkt = compress(FlatContext(), stack)
    assert pkt.to_bytes() == flat_pkt.to_bytes()


def test_compress_hello_one_octet(hello_ctx, hello_packet):
    pkt = compress(hello_ctx, hello_packet)
    assert compressed_size_octets(pkt) == 1
    assert pkt.to_bytes() == bytes([0b10100000]) + b"Hello"


def test_compress_uncompressed_framing(hello_ctx):
    stack = scenarios.hello_packet(hop_limit=64)
    pkt = compress(hello_ctx, stack)
    assert pkt.rule_id_bits == Bits(31, 5)
    raw = serialize_stack(stack)
    assert pkt.to_bytes() == bytes([0b10111111]) + raw
    assert compressed_size_octets(pkt) == 49


def test_compress_icmpv6_two_octets():
    ctx = scenarios.bench_flat_context()
    stack = scenarios.flow_packet(scenarios.FLOWS[1], random.Random(0))
    pkt = compress(ctx, stack)
    assert pkt.residue == Bits(2, 8)
    assert compressed_size_octets(pkt) == 2


def test_compress_rejects_invalid_context(hello_packet):
    bad = FlatContext((FlatRule(0, (FieldDescriptor(F.IPV6_V),)),))
    with pytest.raises(ContextInvalid):
        compress(bad, hello_packet)


def test_round_trip_hello(hello_ctx, hello_packet, device_env):
    raw = serialize_stack(hello_packet)
    back = decompress(compress(hello_ctx, parse_stack(raw)), hello_ctx, device_env)
    assert serialize_stack(back) == raw


def test_decompress_reserved(hello_ctx):
    stack = scenarios.hello_packet(hop_limit=9)
    frame = compress(hello_ctx, stack).to_bytes()
    back = decompress(frame, hello_ctx, DecompressionEnvironment())
    assert back == stack


def test_decompress_unknown_rule():
    ctx = FlatContext(tuple(scenarios.hello_rule(i) for i in range(3)))
    frame = bytes([0b10100000 | 9])
    with pytest.raises(UnknownRuleId):
        decompress(frame, ctx, DecompressionEnvironment(device_iid=1))


def test_decompress_underflow():
    ctx = FlatContext((_valued(0, True),))
    frame = compress(ctx, scenarios.hello_packet(payload=b"")).to_bytes()
    assert len(frame) == 3
    with pytest.raises(ResidueUnderflow):
        decompress(frame[:2], ctx, DecompressionEnvironment(device_iid=scenarios.SENDER_IID))


def test_decompress_needs_device_iid(hello_ctx, hello_packet):
    with pytest.raises(MissingDeviceIid):
        decompress(compress(hello_ctx, hello_packet), hello_ctx, DecompressionEnvironment())


def test_decompress_bad_dispatch(hello_ctx):
    with pytest.raises(EngineError):
        decompress(b"\x00", hello_ctx, DecompressionEnvironment(device_iid=1))


def test_l2_length_signal(hello_ctx, hello_packet):
    frame = compress(hello_ctx, hello_packet).to_bytes()
    env = DecompressionEnvironment(device_iid=scenarios.SENDER_IID, l2_payload_length=len(frame))
    assert serialize_stack(decompress(frame + b"junk", hello_ctx, env)) == serialize_stack(hello_packet)
    with pytest.raises(ResidueUnderflow):
        decompress(frame[:-1], hello_ctx, env)


def test_checksum_recomputed_not_carried(hello_ctx):
    stack = scenarios.hello_packet()
    broken = stack.replace(transport=stack.transport.__class__(5683, 5683, 13, 0x1234))
    back = decompress(compress(hello_ctx, broken), hello_ctx,
                      DecompressionEnvironment(device_iid=scenarios.SENDER_IID))
    assert back.transport.checksum == stack.transport.checksum


def test_compressed_packet_size_accounting():
    pkt = CompressedPacket(Bits(5, 3), Bits(0, 5), Bits(1, 9), b"abc")
    assert compressed_size_octets(pkt) == 3
    assert len(pkt) == 6
    assert len(pkt.to_bytes()) == 6


def test_random_round_trips_flat():
    rng = random.Random(1)
    for _ in range(500):
        stack = random_packet(rng)
        ctx = random_flat_context(rng, stack)
        raw = serialize_stack(stack)
        pkt = compress(ctx, stack)
        assert serialize_stack(decompress(pkt.to_bytes(), ctx, env_for(stack))) == raw
        assert compressed_size_octets(pkt) <= 1 + stack.header_octets()


def test_random_round_trips_layered():
    rng = random.Random(2)
    for _ in range(500):
        stack = random_packet(rng)
        ctx = random_layered_context(rng, stack)
        raw = serialize_stack(stack)
        pkt = compress(ctx, stack)
        assert serialize_stack(decompress(pkt, ctx, env_for(stack))) == raw


def test_flat_layered_equivalence_two_flows():
    layered = scenarios.two_flow_layered_context()
    flat = flatten(layered)
    for ports in ((5683, 5683), (5230, 5230)):
        stack = scenarios.hello_packet(src_port=ports[0], dst_port=ports[1])
        a, b = compress(layered, stack), compress(flat, stack)
        assert a.residue == b.residue
        assert compressed_size_octets(a) == compressed_size_octets(b) == 1


def test_partial_layer_beats_uncompressed():
    rng = random.Random(4)
    for _ in range(300):
        stack = random_packet(rng, transport="udp", coap=False)
        other = random_packet(rng, transport="udp", coap=False, direction=stack.direction)
        ctx = random_layered_context(rng, stack)
        ctx = LayeredContext(ctx.nlc, random_layered_context(rng, other).tlc)
        size = compressed_size_octets(compress(ctx, stack))
        assert size <= 1 + stack.header_octets()


def test_coap_layer_round_trip():
    from lschc.packet import CoapHeader
    stack = with_checksum(HeaderStack(
        Ipv6Header(next_header=17, hop_limit=255, src_prefix=scenarios.ALPHA_PREFIX,
                   src_iid=scenarios.SENDER_IID, dst_prefix=scenarios.BETA_PREFIX,
                   dst_iid=scenarios.SERVER_IID),
        UdpHeader(5683, 5683), CoapHeader(1, 1, 0, 0x02, 0x0042), b"\xff23.5"))
    coap = (equal(F.COAP_VER, 1), equal(F.COAP_TYPE, 1), equal(F.COAP_TKL, 0),
            equal(F.COAP_CODE, 0x02), ignore(F.COAP_MID, CDAction.VALUE_SENT))
    ctx = LayeredContext(
        nlc=(LayerRule(0, Layer.NETWORK, tuple(scenarios.hello_ipv6())),),
        tlc=(LayerRule(0, Layer.TRANSPORT, tuple(scenarios.udp_fields(5683, 5683))),),
        alc=(LayerRule(0, Layer.APPLICATION, coap),))
    pkt = compress(ctx, stack)
    assert compressed_size_octets(pkt) == 3
    back = decompress(pkt, ctx, DecompressionEnvironment(device_iid=scenarios.SENDER_IID))
    assert back == stack
    assert serialize_stack(back) == serialize_stack(stack)
    # without an ALC rule the CoAP header is sent as the first payload octets
    bare = LayeredContext(ctx.nlc, ctx.tlc)
    pkt = compress(bare, stack)
    assert pkt.payload == stack.application.to_bytes() + stack.payload
    assert serialize_stack(decompress(pkt, bare, DecompressionEnvironment(
        device_iid=scenarios.SENDER_IID))) == serialize_stack(stack)


def test_match_field_missing_target_never_equal():
    d = FieldDescriptor(F.IPV6_V, target_value=None, matching_operator=MatchingOperator.EQUAL)
    assert not match_field(d, Bits(6, 4), Direction.UP)


def test_raw_coap_counts_against_a_rule():
    from lschc.packet import CoapHeader
    stack = with_checksum(HeaderStack(
        Ipv6Header(next_header=17, hop_limit=255, src_prefix=scenarios.ALPHA_PREFIX,
                   src_iid=scenarios.SENDER_IID, dst_prefix=scenarios.BETA_PREFIX,
                   dst_iid=scenarios.SERVER_IID),
        UdpHeader(5683, 5683), CoapHeader(1, 0, 0, 0x01, 7), b"x"))
    coap = (equal(F.COAP_VER, 1), equal(F.COAP_TYPE, 0), equal(F.COAP_TKL, 0),
            equal(F.COAP_CODE, 1), equal(F.COAP_MID, 7))
    without = scenarios.hello_rule(0)
    with_coap = FlatRule(5, without.fields + coap)
    ctx = FlatContext((without, with_coap))
    assert select_rule_flat(ctx, stack) == (5, 0)
    assert select_rule_flat(FlatContext((without,)), stack) == (0, 32)
    assert compressed_size_octets(compress(ctx, stack)) == 1
