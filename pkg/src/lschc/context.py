"""Flat (single-table) and layered (per-layer table) compression contexts.

A layered context keeps separate rule tables for the network, transport and
application layers and identifies a packet's rules with a segmented rule ID
``ALC | TLC | NLC``. Each segment's all-ones value means "this layer was not
compressed", so with the default 1/2/2 split the all-layers-uncompressed ID
coincides with the flat reserved ID 31.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Optional, Union

from .bits import Bits
from .errors import SegmentOverflow, WidthMismatch
from .packet import (
    HEADER_FIELDS,
    HEADER_LAYER,
    CoapHeader,
    Direction,
    FieldId,
    Layer,
    UdpHeader,
)


class DirectionIndicator(enum.IntEnum):
    UP = 1
    DOWN = 2
    BI = 3

    def admits(self, direction: Direction) -> bool:
        if self is DirectionIndicator.BI:
            return True
        return (self is DirectionIndicator.UP) == (direction is Direction.UP)


class MatchingOperator(enum.IntEnum):
    EQUAL = 1
    IGNORE = 2


class CDAction(enum.IntEnum):
    NOT_SENT = 1
    VALUE_SENT = 2
    COMP_LENGTH = 3
    COMP_CHECKSUM = 4
    DEVIID_DID = 5


COMPUTED_ACTIONS = {CDAction.COMP_LENGTH, CDAction.COMP_CHECKSUM, CDAction.DEVIID_DID}


@dataclass(frozen=True)
class FieldDescriptor:
    field_id: FieldId
    position: int = 0
    direction: DirectionIndicator = DirectionIndicator.BI
    target_value: Optional[Bits] = None
    matching_operator: MatchingOperator = MatchingOperator.EQUAL
    cd_action: CDAction = CDAction.NOT_SENT

    @property
    def width(self) -> int:
        return self.field_id.width

    def residue_bits(self) -> int:
        return self.width if self.cd_action is CDAction.VALUE_SENT else 0

    def key(self) -> tuple:
        """Hashable identity used for duplicate detection and registry dedup."""
        tv = None if self.target_value is None else (self.target_value.value, self.target_value.width)
        return (self.field_id.code, self.position, int(self.direction), tv,
                int(self.matching_operator), int(self.cd_action))


def equal(field_id: FieldId, value: int, direction=DirectionIndicator.BI,
          action=CDAction.NOT_SENT) -> FieldDescriptor:
    """Shorthand for the common ``equal / not-sent`` row."""
    return FieldDescriptor(field_id, 0, direction, Bits(value, field_id.width),
                           MatchingOperator.EQUAL, action)


def ignore(field_id: FieldId, action: CDAction, direction=DirectionIndicator.BI) -> FieldDescriptor:
    return FieldDescriptor(field_id, 0, direction, None, MatchingOperator.IGNORE, action)


def descriptor_layers(fields) -> list[Layer]:
    return sorted({d.field_id.layer for d in fields})


def _header_types(fields) -> dict[Layer, type]:
    return {d.field_id.layer: d.field_id.header for d in fields}


@dataclass(frozen=True)
class LayerRule:
    local_id: int
    layer: Layer
    fields: tuple[FieldDescriptor, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def header_type(self) -> Optional[type]:
        return self.fields[0].field_id.header if self.fields else None

    def residue_bits(self) -> int:
        return sum(d.residue_bits() for d in self.fields)

    def key(self) -> tuple:
        return ("layer", int(self.layer), tuple(d.key() for d in self.fields))


@dataclass(frozen=True)
class FlatRule:
    rule_id: int
    fields: tuple[FieldDescriptor, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def layers(self) -> list[Layer]:
        return descriptor_layers(self.fields)

    def header_types(self) -> dict[Layer, type]:
        return _header_types(self.fields)

    def residue_bits(self) -> int:
        return sum(d.residue_bits() for d in self.fields)

    def key(self) -> tuple:
        return ("flat", tuple(d.key() for d in self.fields))


Rule = Union[LayerRule, FlatRule]


@dataclass(frozen=True)
class RuleIdLayout:
    dispatch_bits: int = 3
    total_rule_bits: int = 5
    alc_bits: int = 1
    tlc_bits: int = 2
    nlc_bits: int = 2
    dispatch_value: int = 0b101

    def segment_bits(self, layer: Layer) -> int:
        return (self.nlc_bits, self.tlc_bits, self.alc_bits)[layer]

    def reserved(self, layer: Optional[Layer] = None) -> int:
        """All-ones value of a segment, or of the whole rule ID when ``layer`` is None."""
        width = self.total_rule_bits if layer is None else self.segment_bits(layer)
        return (1 << width) - 1

    @property
    def header_prefix_bits(self) -> int:
        return self.dispatch_bits + self.total_rule_bits


DEFAULT_LAYOUT = RuleIdLayout()


def encode_rule_id(layout: RuleIdLayout, alc: int, tlc: int, nlc: int) -> Bits:
    """Pack the three segment values as ALC | TLC | NLC, most significant first."""
    out = Bits(0, 0)
    for name, value, width in (("ALC", alc, layout.alc_bits), ("TLC", tlc, layout.tlc_bits),
                               ("NLC", nlc, layout.nlc_bits)):
        if value < 0 or value >> width:
            raise SegmentOverflow(f"{name}={value} does not fit in {width} bits")
        out = out + Bits(value, width)
    if out.width != layout.total_rule_bits:
        raise WidthMismatch(
            f"segments total {out.width} bits, layout says {layout.total_rule_bits}")
    return out


def decode_rule_id(layout: RuleIdLayout, bits: Bits) -> tuple[int, int, int]:
    if bits.width != layout.total_rule_bits:
        raise WidthMismatch(f"rule ID must be {layout.total_rule_bits} bits, got {bits.width}")
    v = bits.value
    nlc = v & ((1 << layout.nlc_bits) - 1)
    v >>= layout.nlc_bits
    tlc = v & ((1 << layout.tlc_bits) - 1)
    v >>= layout.tlc_bits
    alc = v & ((1 << layout.alc_bits) - 1)
    return alc, tlc, nlc


@dataclass(frozen=True)
class LayeredContext:
    nlc: tuple[LayerRule, ...] = ()
    tlc: tuple[LayerRule, ...] = ()
    alc: tuple[LayerRule, ...] = ()
    layout: RuleIdLayout = DEFAULT_LAYOUT

    def __post_init__(self):
        for name in ("nlc", "tlc", "alc"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def rules(self, layer: Layer) -> tuple[LayerRule, ...]:
        return (self.nlc, self.tlc, self.alc)[layer]

    def lookup(self, layer: Layer, local_id: int) -> Optional[LayerRule]:
        for rule in self.rules(layer):
            if rule.local_id == local_id:
                return rule
        return None

    def descriptor_count(self) -> int:
        return sum(len(r.fields) for layer in Layer for r in self.rules(layer))


@dataclass(frozen=True)
class FlatContext:
    rules: tuple[FlatRule, ...] = ()
    layout: RuleIdLayout = DEFAULT_LAYOUT

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def lookup(self, rule_id: int) -> Optional[FlatRule]:
        for rule in self.rules:
            if rule.rule_id == rule_id:
                return rule
        return None

    def descriptor_count(self) -> int:
        return sum(len(r.fields) for r in self.rules)


Context = Union[FlatContext, LayeredContext]


@dataclass(frozen=True)
class Violation:
    rule: str
    field: Optional[str]
    invariant: str
    detail: str = ""

    def __str__(self):
        where = self.rule if self.field is None else f"{self.rule}/{self.field}"
        return f"{where}: {self.invariant}" + (f" ({self.detail})" if self.detail else "")


def _descriptor_violations(rule_name: str, desc: FieldDescriptor) -> list[Violation]:
    out = []
    fname = desc.field_id.name

    def bad(invariant, detail=""):
        out.append(Violation(rule_name, fname, invariant, detail))

    if desc.position != 0:
        bad("position-out-of-range", f"position {desc.position}")
    if desc.matching_operator is MatchingOperator.EQUAL:
        if desc.target_value is None:
            bad("missing-target", "equal operator needs a target value")
        elif desc.target_value.width != desc.width:
            bad("target-width", f"{desc.target_value.width} bits, field is {desc.width}")
    if desc.cd_action is CDAction.NOT_SENT and desc.matching_operator is not MatchingOperator.EQUAL:
        bad("not-sent-requires-equal")
    if desc.cd_action in COMPUTED_ACTIONS and desc.matching_operator is not MatchingOperator.IGNORE:
        bad("computed-action-requires-ignore", desc.cd_action.name)
    if desc.cd_action is CDAction.COMP_LENGTH and desc.field_id not in (FieldId.IPV6_LEN, FieldId.UDP_LEN):
        bad("comp-length-on-non-length-field")
    if desc.cd_action is CDAction.COMP_CHECKSUM and desc.field_id not in (FieldId.UDP_CKSUM, FieldId.ICMPV6_CKSUM):
        bad("comp-check-on-non-checksum-field")
    if desc.cd_action is CDAction.DEVIID_DID and desc.field_id not in (FieldId.IPV6_S_IID, FieldId.IPV6_D_IID):
        bad("deviid-on-non-iid-field")
    return out


def _header_coverage_violations(rule_name: str, fields) -> list[Violation]:
    """Each header a rule touches must be described completely, in header order."""
    out = []
    by_header: dict[type, list[FieldId]] = {}
    for d in fields:
        by_header.setdefault(d.field_id.header, []).append(d.field_id)
    if len({h for h in by_header if HEADER_LAYER[h] is Layer.TRANSPORT}) > 1:
        out.append(Violation(rule_name, None, "multiple-transport-headers"))
    for header, ids in by_header.items():
        if ids != HEADER_FIELDS[header]:
            out.append(Violation(rule_name, None, "incomplete-header",
                                 f"{header.__name__} fields must be exactly "
                                 f"{[f.name for f in HEADER_FIELDS[header]]}"))
    layers = [d.field_id.layer for d in fields]
    if layers != sorted(layers):
        out.append(Violation(rule_name, None, "layer-order", "network, transport, application"))
    return out


def _chain_violations(rule_name: str, types: dict[Layer, type], fields) -> list[Violation]:
    out = []
    if CoapHeader in types.values() and types.get(Layer.TRANSPORT, UdpHeader) is not UdpHeader:
        out.append(Violation(rule_name, None, "coap-needs-udp"))
    nh = next((d for d in fields if d.field_id is FieldId.IPV6_NH), None)
    transport = types.get(Layer.TRANSPORT)
    if nh is not None and transport is not None and nh.matching_operator is MatchingOperator.EQUAL \
            and nh.target_value is not None and nh.target_value.value != transport.next_header:
        out.append(Violation(rule_name, FieldId.IPV6_NH.name, "next-header-chain",
                             f"{nh.target_value.value} vs {transport.__name__}"))
    return out


def validate_context(ctx: Context) -> list[Violation]:
    """Return every structural problem in ``ctx``; an empty list means valid."""
    out: list[Violation] = []
    layout = ctx.layout
    if isinstance(ctx, FlatContext):
        seen_ids: set[int] = set()
        for rule in ctx.rules:
            name = f"rule {rule.rule_id}"
            if rule.rule_id in seen_ids:
                out.append(Violation(name, None, "duplicate-rule-id"))
            seen_ids.add(rule.rule_id)
            if not 0 <= rule.rule_id < layout.reserved():
                out.append(Violation(name, None, "rule-id-range",
                                     f"must be below reserved {layout.reserved()}"))
            if not rule.fields:
                out.append(Violation(name, None, "empty-rule"))
            out += _header_coverage_violations(name, rule.fields)
            out += _chain_violations(name, rule.header_types(), rule.fields)
            for d in rule.fields:
                out += _descriptor_violations(name, d)
        return out

    if layout.alc_bits + layout.tlc_bits + layout.nlc_bits != layout.total_rule_bits:
        out.append(Violation("layout", None, "segment-sum",
                             f"{layout.alc_bits}+{layout.tlc_bits}+{layout.nlc_bits} "
                             f"!= {layout.total_rule_bits}"))
    for layer in Layer:
        seen_ids = set()
        seen_keys: dict[tuple, int] = {}
        for rule in ctx.rules(layer):
            name = f"{layer.name.lower()} rule {rule.local_id}"
            if rule.layer is not layer:
                out.append(Violation(name, None, "wrong-layer-table", rule.layer.name))
            if rule.local_id in seen_ids:
                out.append(Violation(name, None, "duplicate-rule-id"))
            seen_ids.add(rule.local_id)
            if not 0 <= rule.local_id < layout.reserved(layer):
                out.append(Violation(name, None, "rule-id-range",
                                     f"must be below reserved {layout.reserved(layer)}"))
            if rule.key() in seen_keys:
                out.append(Violation(name, None, "duplicate-rule",
                                     f"identical to rule {seen_keys[rule.key()]}"))
            seen_keys.setdefault(rule.key(), rule.local_id)
            if not rule.fields:
                out.append(Violation(name, None, "empty-rule"))
            for d in rule.fields:
                if d.field_id.layer is not layer:
                    out.append(Violation(name, d.field_id.name, "field-outside-layer"))
            if len({d.field_id.header for d in rule.fields}) > 1:
                out.append(Violation(name, None, "multiple-headers"))
            out += _header_coverage_violations(name, rule.fields)
            for d in rule.fields:
                out += _descriptor_violations(name, d)
    return out


def _next_header_target(rule: LayerRule) -> Optional[int]:
    for d in rule.fields:
        if d.field_id is FieldId.IPV6_NH and d.matching_operator is MatchingOperator.EQUAL:
            return d.target_value.value
    return None


def chains(nlc: Optional[LayerRule], tlc: Optional[LayerRule]) -> bool:
    """Whether a transport rule can follow a network rule (next-header agreement)."""
    if nlc is None or tlc is None:
        return True
    nh = _next_header_target(nlc)
    return nh is None or nh == tlc.header_type.next_header


def flatten(layered: LayeredContext) -> FlatContext:
    """Cross-product of the layer tables as an equivalent flat context.

    Combinations are enumerated in (NLC, TLC, ALC) order of the tables, so the
    lowest flat ID among equally good combinations corresponds to the lowest
    per-layer IDs. An empty table contributes nothing to the combination, and
    a transport rule is only paired with network rules whose next header
    agrees. Layer rules that chain with nothing below them still get a flat
    rule of their own, with the lower layers left uncompressed, so every
    layer rule appears at least once. The layout is kept, so flat IDs must
    still fit below the reserved value.
    """
    def ordered(rules):
        return sorted(rules, key=lambda r: r.local_id)

    def apps(t):
        if t is not None and t.header_type is not UdpHeader:
            return [None]
        return ordered(layered.alc) or [None]

    combos = []
    for n in ordered(layered.nlc) or [None]:
        for t in [t for t in ordered(layered.tlc) if chains(n, t)] or [None]:
            combos.extend((n, t, a) for a in apps(t))
    used = {id(r) for combo in combos for r in combo if r is not None}
    for t in ordered(layered.tlc):
        if id(t) not in used:
            combos.extend((None, t, a) for a in apps(t))
            used.update(id(a) for a in apps(t) if a is not None)
    for a in ordered(layered.alc):
        if id(a) not in used:
            combos.append((None, None, a))

    rules = []
    for rule_id, combo in enumerate(c for c in combos if any(c)):
        descs = list(itertools.chain.from_iterable(r.fields for r in combo if r is not None))
        rules.append(FlatRule(rule_id, tuple(descs)))
    return FlatContext(tuple(rules), layered.layout)


def split_flat_rule(rule: FlatRule) -> dict[Layer, tuple[FieldDescriptor, ...]]:
    out: dict[Layer, list[FieldDescriptor]] = {}
    for d in rule.fields:
        out.setdefault(d.field_id.layer, []).append(d)
    return {k: tuple(v) for k, v in out.items()}

