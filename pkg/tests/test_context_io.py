import json
import random

import cbor2
import pytest

from lschc import scenarios
from lschc.context import FlatContext, FlatRule, LayeredContext, LayerRule, RuleIdLayout, flatten
from lschc.context_io import (
    FORMAT_VERSION,
    RuleRegistry,
    device_context,
    load_context,
    load_registry,
    provision_device,
    read_context,
    read_registry,
    register_rule,
    resolve,
    save_context,
    save_registry,
    write_context,
    write_registry,
)
from lschc.engine import DecompressionEnvironment, compress, decompress
from lschc.errors import (
    MalformedDocument,
    RegistryError,
    RegistryFull,
    TooManyRules,
    UnknownDevice,
    UnknownLongId,
    UnknownShortId,
    UnsupportedVersion,
    ValidationFailed,
)
from lschc.packet import FieldId, Layer, serialize_stack

from gen import random_flat_context, random_layered_context, random_packet

DEV_A = bytes.fromhex("00004a10")
DEV_B = bytes.fromhex("00004a11")


@pytest.mark.parametrize("make", [scenarios.hello_context, scenarios.two_flow_flat_context,
                                  scenarios.two_flow_layered_context, scenarios.bench_flat_context,
                                  scenarios.bench_layered_context])
@pytest.mark.parametrize("text", [False, True])
def test_round_trip(make, text):
    ctx = make()
    data = save_context(ctx, text)
    back = load_context(data)
    assert back == ctx
    assert save_context(back, text) == data


def test_binary_is_canonical_cbor():
    data = save_context(scenarios.hello_context())
    doc = cbor2.loads(data)
    assert doc["version"] == FORMAT_VERSION
    assert cbor2.dumps(doc, canonical=True) == data
    # integer codes, not names, in the binary form
    assert doc["rules"][0]["fields"][0] == [FieldId.IPV6_V.code, 0, 3, 6, 1, 1]


def test_random_round_trips():
    rng = random.Random(5)
    for _ in range(100):
        stack = random_packet(rng)
        for ctx in (random_flat_context(rng, stack), random_layered_context(rng, stack)):
            assert load_context(save_context(ctx)) == ctx
            assert load_context(save_context(ctx, text=True)) == ctx


def test_empty_contexts():
    for ctx in (FlatContext(), LayeredContext()):
        assert load_context(save_context(ctx)) == ctx


def test_custom_layout_survives():
    layout = RuleIdLayout(total_rule_bits=8, alc_bits=2, tlc_bits=3, nlc_bits=3)
    ctx = FlatContext((scenarios.hello_rule(200),), layout)
    assert load_context(save_context(ctx)).layout == layout


def test_truncated_is_malformed():
    data = save_context(scenarios.two_flow_flat_context())
    for cut in (1, len(data) // 2, len(data) - 1):
        with pytest.raises(MalformedDocument):
            load_context(data[:cut])
    with pytest.raises(MalformedDocument):
        load_context(b"")
    with pytest.raises(MalformedDocument):
        load_context(b"{not json")


def test_unsupported_version():
    doc = cbor2.loads(save_context(scenarios.hello_context()))
    doc["version"] = 99
    with pytest.raises(UnsupportedVersion):
        load_context(cbor2.dumps(doc))


def test_validation_on_load():
    doc = json.loads(save_context(scenarios.hello_context(), text=True))
    doc["rules"][0]["fields"][0]["tv"] = 99  # 99 does not fit in 4 bits
    with pytest.raises(MalformedDocument):
        load_context(json.dumps(doc).encode())
    doc["rules"][0]["fields"][0] = {"field": "IPV6_V", "mo": "ignore", "cda": "not-sent"}
    with pytest.raises(ValidationFailed):
        load_context(json.dumps(doc).encode())
    assert load_context(json.dumps(doc).encode(), validate=False)


def test_text_accepts_ipv6_notation():
    text = json.dumps({
        "version": 1, "mode": "flat",
        "rules": [{"id": 0, "fields": [
            {"field": "IPV6_V", "mo": "equal", "cda": "not-sent", "tv": 6},
            {"field": "IPV6_TC", "mo": "equal", "cda": "not-sent", "tv": "0x00"},
            {"field": "IPV6_FL", "mo": "equal", "cda": "not-sent", "tv": 0},
            {"field": "IPV6_LEN", "mo": "ignore", "cda": "comp-length"},
            {"field": "IPV6_NH", "mo": "equal", "cda": "not-sent", "tv": 17},
            {"field": "IPV6_HL", "mo": "equal", "cda": "not-sent", "tv": 255},
            {"field": "IPV6_S_PREFIX", "dir": "U", "mo": "equal", "cda": "not-sent",
             "tv": "2001:db8:a::/64"},
            {"field": "IPV6_S_IID", "dir": "U", "mo": "ignore", "cda": "DEVIid-DID"},
            {"field": "IPV6_D_PREFIX", "dir": "U", "mo": "equal", "cda": "not-sent",
             "tv": "2001:db8:b::"},
            {"field": "IPV6_D_IID", "dir": "U", "mo": "equal", "cda": "not-sent",
             "tv": "::1000"},
            {"field": "UDP_SPORT", "mo": "equal", "cda": "not-sent", "tv": 5683},
            {"field": "UDP_DPORT", "mo": "equal", "cda": "not-sent", "tv": 5683},
            {"field": "UDP_LEN", "mo": "ignore", "cda": "comp-length"},
            {"field": "UDP_CKSUM", "mo": "ignore", "cda": "comp-check"},
        ]}],
    })
    assert load_context(text.encode()) == scenarios.hello_context()


def test_file_helpers(tmp_path):
    ctx = scenarios.two_flow_layered_context()
    write_context(tmp_path / "c.schct", ctx)
    write_context(tmp_path / "c.schcb", ctx)
    assert (tmp_path / "c.schct").read_bytes().startswith(b"{")
    assert read_context(tmp_path / "c.schct") == read_context(tmp_path / "c.schcb") == ctx
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.schcb", "c.schct"]


# registry

def test_register_dedup():
    reg = RuleRegistry()
    a = register_rule(reg, scenarios.hello_rule(0))
    b = register_rule(reg, scenarios.hello_rule(17))
    assert a == b == 0 and len(reg) == 1
    c = register_rule(reg, scenarios.two_flow_flat_context().rules[1])
    assert c == 1


def test_registry_full():
    reg = RuleRegistry(capacity=2)
    for rule in scenarios.bench_flat_context().rules[:2]:
        register_rule(reg, rule)
    with pytest.raises(RegistryFull):
        register_rule(reg, scenarios.bench_flat_context().rules[2])


def _distinct_flat_rules(n):
    return [FlatRule(0, tuple(
        scenarios.ipv6_fields(next_header=17, hop_limit=hl, src_prefix=1, dst_prefix=2, dst_iid=3)
        + scenarios.udp_fields(5683, 5683))) for hl in range(n)]


def test_short_ids_dense_and_capped():
    reg = RuleRegistry()
    ids = [register_rule(reg, r) for r in _distinct_flat_rules(32)]
    ctx, mapping = provision_device(reg, DEV_A, ids[:31])
    assert [r.rule_id for r in ctx.rules] == list(range(31))
    assert mapping == {(None, i): ids[i] for i in range(31)}
    with pytest.raises(TooManyRules):
        provision_device(reg, DEV_B, ids)


def test_layer_segments_capped():
    reg = RuleRegistry()
    net = [register_rule(reg, r) for r in _network_rules(4)]
    with pytest.raises(TooManyRules):
        provision_device(reg, DEV_A, net)
    ctx, mapping = provision_device(reg, DEV_A, net[:3])
    assert [r.local_id for r in ctx.nlc] == [0, 1, 2]
    assert set(mapping) == {(Layer.NETWORK, i) for i in range(3)}


def _network_rules(n):
    return [LayerRule(0, Layer.NETWORK, tuple(scenarios.ipv6_fields(
        next_header=17, hop_limit=hl, src_prefix=9, dst_prefix=9, dst_iid=9))) for hl in range(n)]


def test_mixing_rule_kinds_rejected():
    reg = RuleRegistry()
    flat = register_rule(reg, scenarios.hello_rule())
    layer = register_rule(reg, scenarios.two_flow_layered_context().nlc[0])
    with pytest.raises(RegistryError):
        provision_device(reg, DEV_A, [flat, layer])
    with pytest.raises(UnknownLongId):
        provision_device(reg, DEV_A, [1234])


def test_shared_rule_stored_once():
    reg = RuleRegistry()
    ids = [register_rule(reg, r) for r in scenarios.two_flow_flat_context().rules]
    provision_device(reg, DEV_A, ids)
    provision_device(reg, DEV_B, [ids[1]])
    assert len(reg) == 2
    assert resolve(reg, DEV_A, 1) is resolve(reg, DEV_B, 0)


def test_resolve_errors():
    reg = RuleRegistry()
    provision_device(reg, DEV_A, [register_rule(reg, scenarios.hello_rule())])
    with pytest.raises(UnknownDevice):
        resolve(reg, DEV_B, 0)
    with pytest.raises(UnknownShortId):
        resolve(reg, DEV_A, 5)
    with pytest.raises(UnknownShortId):
        resolve(reg, DEV_A, 0, Layer.NETWORK)
    with pytest.raises(UnknownDevice):
        device_context(reg, DEV_B)


@pytest.mark.parametrize("make", [scenarios.bench_flat_context, scenarios.bench_layered_context])
def test_device_and_network_agree(make):
    reg = RuleRegistry()
    source = make()
    rules = source.rules if isinstance(source, FlatContext) else source.nlc + source.tlc
    ids = [register_rule(reg, r) for r in reversed(rules)]
    device_ctx, _ = provision_device(reg, DEV_A, ids)
    network_ctx = device_context(reg, DEV_A)
    assert network_ctx == device_ctx
    rng = random.Random(0)
    env = DecompressionEnvironment(device_iid=scenarios.SENDER_IID)
    for flow in scenarios.FLOWS:
        stack = scenarios.flow_packet(flow, rng)
        frame = compress(device_ctx, stack).to_bytes()
        assert serialize_stack(decompress(frame, network_ctx, env)) == serialize_stack(stack)


def test_registry_persistence(tmp_path):
    path = tmp_path / "reg.schcb"
    assert len(read_registry(path)) == 0
    reg = RuleRegistry(capacity=100)
    layered = scenarios.two_flow_layered_context()
    ids = [register_rule(reg, r) for r in layered.nlc + layered.tlc]
    flat_id = register_rule(reg, scenarios.hello_rule())
    provision_device(reg, DEV_A, ids)
    provision_device(reg, DEV_B, [flat_id], RuleIdLayout(total_rule_bits=6, alc_bits=2,
                                                         tlc_bits=2, nlc_bits=2))
    write_registry(path, reg)
    back = read_registry(path)
    assert back.capacity == 100
    assert back.long_rules == reg.long_rules
    assert back.device_maps == reg.device_maps
    assert device_context(back, DEV_A) == device_context(reg, DEV_A)
    assert device_context(back, DEV_B).layout.total_rule_bits == 6
    assert register_rule(back, scenarios.hello_rule()) == flat_id
    assert save_registry(back) == save_registry(reg)


def test_registry_rejects_context_document():
    with pytest.raises(MalformedDocument):
        load_registry(save_context(scenarios.hello_context()))


def test_flattened_round_trip():
    flat = flatten(scenarios.two_flow_layered_context())
    assert load_context(save_context(flat)) == flat
