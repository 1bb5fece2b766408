"""Rule matching, best-rule selection and the compressed frame codec.

Frame layout (MSB first)::

    dispatch (3) | rule ID (5) | residue ... | zero pad to octet | payload

The residue lists, layer by layer (network, transport, application), either
the value-sent fields of the layer's descriptors in descriptor order, or the
raw header octets when the layer was not compressed. An application header
that is not compressed is carried as the first octets of the payload, which
keeps the decoder free of guesswork about its presence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

from .bits import BitReader, BitWriter, Bits
from .context import (
    CDAction,
    Context,
    FieldDescriptor,
    FlatContext,
    FlatRule,
    LayeredContext,
    LayerRule,
    MatchingOperator,
    RuleIdLayout,
    decode_rule_id,
    encode_rule_id,
    split_flat_rule,
    validate_context,
)
from .errors import (
    ContextInvalid,
    EngineError,
    FieldAbsent,
    MissingDeviceIid,
    ResidueUnderflow,
    UnknownRuleId,
    WidthMismatch,
)
from .packet import (
    HEADER_FIELDS,
    TRANSPORT_BY_NEXT_HEADER,
    CoapHeader,
    Direction,
    FieldId,
    HeaderStack,
    Ipv6Header,
    Layer,
    build_header,
    compute_checksum,
    finalize_lengths,
    get_field,
)

Plan = dict  # Layer -> tuple of descriptors, or None for "sent uncompressed"


class NoMatch(Exception):
    """Raised internally when no rule applies; callers fall back to the reserved ID."""


@dataclass(frozen=True)
class CompressedPacket:
    dispatch: Bits
    rule_id_bits: Bits
    residue: Bits
    payload: bytes = b""

    @property
    def rule_id(self) -> int:
        return self.rule_id_bits.value

    @property
    def header_bits(self) -> int:
        return self.dispatch.width + self.rule_id_bits.width + self.residue.width

    def to_bytes(self) -> bytes:
        w = BitWriter()
        w.write_bits(self.dispatch)
        w.write_bits(self.rule_id_bits)
        w.write_bits(self.residue)
        return w.to_bytes() + self.payload

    def __len__(self):
        return compressed_size_octets(self) + len(self.payload)


@dataclass(frozen=True)
class DecompressionEnvironment:
    device_iid: Optional[int] = None
    direction: Direction = Direction.UP
    l2_payload_length: Optional[int] = None


def compressed_size_octets(pkt: CompressedPacket) -> int:
    """Header portion only: dispatch, rule ID and residue, rounded up to octets."""
    return math.ceil(pkt.header_bits / 8)


def match_field(desc: FieldDescriptor, value: Bits, direction: Direction) -> bool:
    if value.width != desc.width:
        raise WidthMismatch(f"{desc.field_id.name} is {desc.width} bits, value has {value.width}")
    if not desc.direction.admits(direction):
        return False
    if desc.matching_operator is MatchingOperator.IGNORE:
        return True
    return desc.target_value == value


def _match_fields(fields, stack: HeaderStack) -> bool:
    for desc in fields:
        try:
            value = get_field(stack, desc.field_id, desc.position)
        except FieldAbsent:
            return False
        if not match_field(desc, value, stack.direction):
            return False
    return True


def match_rule(rule: Union[FlatRule, LayerRule], stack: HeaderStack) -> bool:
    return bool(rule.fields) and _match_fields(rule.fields, stack)


def _raw_bits(stack: HeaderStack, layer: Layer) -> int:
    # a raw CoAP header rides in the payload, but it is still header octets on the wire
    header = stack.layer(layer)
    return 0 if header is None else 8 * header.size


def _plan_residue_bits(plan: Plan, stack: HeaderStack) -> int:
    total = 0
    for layer in Layer:
        descs = plan.get(layer)
        if descs is None:
            total += _raw_bits(stack, layer)
        else:
            total += sum(d.residue_bits() for d in descs)
    return total


def _flat_plan(rule: Optional[FlatRule]) -> Plan:
    if rule is None:
        return {layer: None for layer in Layer}
    parts = split_flat_rule(rule)
    return {layer: parts.get(layer) for layer in Layer}


def select_rule_flat(ctx: FlatContext, stack: HeaderStack) -> tuple[int, int]:
    """Best matching flat rule as ``(rule_id, header_bits)``.

    ``header_bits`` counts the residue plus every header the rule leaves
    uncompressed.

    Raises :class:`NoMatch` when no rule matches.
    """
    best = None
    for rule in ctx.rules:
        if not match_rule(rule, stack):
            continue
        cost = _plan_residue_bits(_flat_plan(rule), stack)
        if best is None or (cost, rule.rule_id) < best:
            best = (cost, rule.rule_id)
    if best is None:
        raise NoMatch("no flat rule matches")
    return best[1], best[0]


def select_rule_layered(ctx: LayeredContext, stack: HeaderStack) -> dict[Layer, Optional[int]]:
    """Independent best choice per layer; ``None`` stands for the reserved segment value."""
    choice: dict[Layer, Optional[int]] = {}
    for layer in Layer:
        best = None
        if stack.layer(layer) is not None:
            for rule in ctx.rules(layer):
                if match_rule(rule, stack):
                    key = (rule.residue_bits(), rule.local_id)
                    if best is None or key < best:
                        best = key
        choice[layer] = None if best is None else best[1]
    return choice


def _choose(ctx: Context, stack: HeaderStack) -> tuple[Bits, Plan]:
    layout = ctx.layout
    if isinstance(ctx, FlatContext):
        try:
            rule_id, _ = select_rule_flat(ctx, stack)
        except NoMatch:
            return Bits(layout.reserved(), layout.total_rule_bits), _flat_plan(None)
        return Bits(rule_id, layout.total_rule_bits), _flat_plan(ctx.lookup(rule_id))
    choice = select_rule_layered(ctx, stack)
    seg = {}
    plan: Plan = {}
    for layer in Layer:
        local = choice[layer]
        if local is None:
            seg[layer] = layout.reserved(layer)
            plan[layer] = None
        else:
            seg[layer] = local
            plan[layer] = ctx.lookup(layer, local).fields
    bits = encode_rule_id(layout, seg[Layer.APPLICATION], seg[Layer.TRANSPORT], seg[Layer.NETWORK])
    return bits, plan


def compress(ctx: Context, stack: HeaderStack, layout: Optional[RuleIdLayout] = None,
             validate: bool = True) -> CompressedPacket:
    if layout is not None and layout != ctx.layout:
        ctx = replace(ctx, layout=layout)
    if validate:
        violations = validate_context(ctx)
        if violations:
            raise ContextInvalid(violations)
    rule_bits, plan = _choose(ctx, stack)
    w = BitWriter()
    payload = stack.payload
    for layer in Layer:
        descs = plan[layer]
        header = stack.layer(layer)
        if descs is None:
            if header is None:
                continue
            if layer is Layer.APPLICATION:
                payload = header.to_bytes() + payload
            else:
                w.write_bytes(header.to_bytes())
            continue
        for d in descs:
            if d.cd_action is CDAction.VALUE_SENT:
                w.write_bits(get_field(stack, d.field_id, d.position))
    layout = ctx.layout
    return CompressedPacket(Bits(layout.dispatch_value, layout.dispatch_bits), rule_bits,
                            w.bits(), payload)


def _decode_plan(ctx: Context, rule_bits: Bits) -> Plan:
    layout = ctx.layout
    if isinstance(ctx, FlatContext):
        if rule_bits.value == layout.reserved():
            return _flat_plan(None)
        rule = ctx.lookup(rule_bits.value)
        if rule is None:
            raise UnknownRuleId(f"rule {rule_bits.value} is not in the context")
        return _flat_plan(rule)
    alc, tlc, nlc = decode_rule_id(layout, rule_bits)
    plan: Plan = {}
    for layer, local in ((Layer.NETWORK, nlc), (Layer.TRANSPORT, tlc), (Layer.APPLICATION, alc)):
        if local == layout.reserved(layer):
            plan[layer] = None
            continue
        rule = ctx.lookup(layer, local)
        if rule is None:
            raise UnknownRuleId(f"{layer.name.lower()} rule {local} is not in the context")
        plan[layer] = rule.fields
    return plan


def _rebuild(descs, reader: BitReader, env: DecompressionEnvironment):
    header_cls = descs[0].field_id.header
    values: dict[FieldId, int] = {}
    for d in descs:
        action = d.cd_action
        if action is CDAction.NOT_SENT:
            values[d.field_id] = d.target_value.value
        elif action is CDAction.VALUE_SENT:
            values[d.field_id] = reader.read(d.width)
        elif action is CDAction.DEVIID_DID:
            if env.device_iid is None:
                raise MissingDeviceIid(f"{d.field_id.name} needs the device IID")
            values[d.field_id] = env.device_iid
        else:
            # lengths and checksums are filled in once the whole packet is known
            values[d.field_id] = 0
    missing = [f.name for f in HEADER_FIELDS[header_cls] if f not in values]
    if missing:
        raise EngineError(f"rule does not describe {missing}")
    return build_header(header_cls, values)


def decompress(pkt: Union[CompressedPacket, bytes], ctx: Context,
               env: DecompressionEnvironment = DecompressionEnvironment()) -> HeaderStack:
    data = pkt.to_bytes() if isinstance(pkt, CompressedPacket) else bytes(pkt)
    if env.l2_payload_length is not None:
        if env.l2_payload_length > len(data):
            raise ResidueUnderflow(
                f"lower layer announced {env.l2_payload_length} octets, got {len(data)}")
        data = data[:env.l2_payload_length]
    layout = ctx.layout
    reader = BitReader(data)
    dispatch = reader.read(layout.dispatch_bits)
    if dispatch != layout.dispatch_value:
        raise EngineError(f"dispatch {dispatch:0{layout.dispatch_bits}b} is not a compressed frame")
    plan = _decode_plan(ctx, reader.read_bits(layout.total_rule_bits))

    descs = plan[Layer.NETWORK]
    if descs is None:
        network = Ipv6Header.from_bytes(reader.read_bytes(Ipv6Header.size))
    else:
        network = _rebuild(descs, reader, env)

    descs = plan[Layer.TRANSPORT]
    if descs is None:
        cls = TRANSPORT_BY_NEXT_HEADER.get(network.next_header)
        transport = None if cls is None else cls.from_bytes(reader.read_bytes(cls.size))
    else:
        transport = _rebuild(descs, reader, env)

    descs = plan[Layer.APPLICATION]
    application = None if descs is None else _rebuild(descs, reader, env)
    if application is not None and not isinstance(application, CoapHeader):
        raise EngineError("application rule does not describe a CoAP header")

    reader.align()
    stack = HeaderStack(network, transport, application, reader.tail(), env.direction)
    stack = finalize_lengths(stack)
    recompute = any(d.cd_action is CDAction.COMP_CHECKSUM
                    for descs in plan.values() if descs for d in descs)
    if recompute and stack.transport is not None:
        csum = compute_checksum(stack, type(stack.transport))
        stack = replace(stack, transport=replace(stack.transport, checksum=csum))
    return stack


def residue_bits_for(ctx: Context, stack: HeaderStack) -> int:
    """Header bits after the rule ID that the compressor emits for ``stack`` (raw headers included)."""
    return _plan_residue_bits(_choose(ctx, stack)[1], stack)
