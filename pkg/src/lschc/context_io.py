"""Context documents (CBOR and JSON text) and the network-side rule registry.

Binary documents are canonical CBOR: definite lengths, sorted map keys, and
integer codes for field IDs, directions, operators and actions. The text form
carries the same document with readable names and accepts IPv6 notation for
address halves (``"2001:db8::/64"`` for a prefix, ``"::1000"`` for an IID).
"""
from __future__ import annotations

import ipaddress
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Iterable, Optional, Union

import cbor2

from .bits import Bits
from .context import (
    DEFAULT_LAYOUT,
    CDAction,
    Context,
    DirectionIndicator,
    FieldDescriptor,
    FlatContext,
    FlatRule,
    LayeredContext,
    LayerRule,
    MatchingOperator,
    Rule,
    RuleIdLayout,
    validate_context,
)
from .errors import (
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
from .packet import FieldId, Layer

FORMAT_VERSION = 1
LONG_ID_BITS = 16

BINARY_SUFFIX = ".schcb"
TEXT_SUFFIX = ".schct"

_DIR_NAMES = {DirectionIndicator.UP: "U", DirectionIndicator.DOWN: "D", DirectionIndicator.BI: "B"}
_MO_NAMES = {MatchingOperator.EQUAL: "equal", MatchingOperator.IGNORE: "ignore"}
_CDA_NAMES = {
    CDAction.NOT_SENT: "not-sent",
    CDAction.VALUE_SENT: "value-sent",
    CDAction.COMP_LENGTH: "comp-length",
    CDAction.COMP_CHECKSUM: "comp-check",
    CDAction.DEVIID_DID: "DEVIid-DID",
}
_LAYER_KEYS = {Layer.NETWORK: "nlc", Layer.TRANSPORT: "tlc", Layer.APPLICATION: "alc"}
_LAYOUT_KEYS = ("dispatch_bits", "dispatch_value", "total_rule_bits", "alc_bits", "tlc_bits", "nlc_bits")

_ADDRESS_FIELDS = {FieldId.IPV6_S_PREFIX: "prefix", FieldId.IPV6_D_PREFIX: "prefix",
                   FieldId.IPV6_S_IID: "iid", FieldId.IPV6_D_IID: "iid"}


def _lookup(table: dict, name, what):
    for member, label in table.items():
        if label.lower() == str(name).lower():
            return member
    raise MalformedDocument(f"unknown {what} {name!r}")


def _text_target(field_id: FieldId, value) -> int:
    if isinstance(value, int):
        return value
    if not isinstance(value, str):
        raise MalformedDocument(f"{field_id.name}: bad target {value!r}")
    if value.lower().startswith("0x"):
        return int(value, 16)
    part = _ADDRESS_FIELDS.get(field_id)
    if part is None:
        raise MalformedDocument(f"{field_id.name}: target {value!r} is not a number")
    try:
        address = int(ipaddress.IPv6Network(value, strict=False).network_address
                      if "/" in value else ipaddress.IPv6Address(value))
    except ValueError as exc:
        raise MalformedDocument(f"{field_id.name}: {exc}") from None
    return address >> 64 if part == "prefix" else address & ((1 << 64) - 1)


def descriptor_to_doc(d: FieldDescriptor, text: bool = False):
    tv = None if d.target_value is None else d.target_value.value
    if not text:
        return [d.field_id.code, d.position, int(d.direction), tv,
                int(d.matching_operator), int(d.cd_action)]
    doc = {"field": d.field_id.name, "pos": d.position, "dir": _DIR_NAMES[d.direction],
           "mo": _MO_NAMES[d.matching_operator], "cda": _CDA_NAMES[d.cd_action]}
    if tv is not None:
        doc["tv"] = tv
    return doc


def descriptor_from_doc(doc) -> FieldDescriptor:
    try:
        if isinstance(doc, dict):
            fid = FieldId[doc["field"].upper()]
            tv = doc.get("tv")
            tv = None if tv is None else _text_target(fid, tv)
            pos = int(doc.get("pos", 0))
            direction = _lookup(_DIR_NAMES, doc.get("dir", "B"), "direction")
            mo = _lookup(_MO_NAMES, doc["mo"], "matching operator")
            cda = _lookup(_CDA_NAMES, doc["cda"], "C/D action")
        else:
            code, pos, direction, tv, mo, cda = doc
            fid = FieldId.from_code(code)
            direction = DirectionIndicator(direction)
            mo = MatchingOperator(mo)
            cda = CDAction(cda)
        target = None if tv is None else Bits(tv, fid.width)
    except MalformedDocument:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise MalformedDocument(f"bad field descriptor {doc!r}: {exc}") from None
    return FieldDescriptor(fid, pos, direction, target, mo, cda)


def rule_to_doc(rule: Rule, text: bool = False) -> dict:
    rid = rule.rule_id if isinstance(rule, FlatRule) else rule.local_id
    return {"id": rid, "fields": [descriptor_to_doc(d, text) for d in rule.fields]}


def _rule_parts(doc) -> tuple[int, list[FieldDescriptor]]:
    try:
        return int(doc["id"]), [descriptor_from_doc(f) for f in doc["fields"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad rule {doc!r}: {exc}") from None


def layout_to_doc(layout: RuleIdLayout) -> dict:
    return {k: getattr(layout, k) for k in _LAYOUT_KEYS}


def layout_from_doc(doc) -> RuleIdLayout:
    if doc is None:
        return DEFAULT_LAYOUT
    try:
        return RuleIdLayout(**{k: int(doc[k]) for k in _LAYOUT_KEYS if k in doc})
    except (TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad layout {doc!r}: {exc}") from None


def context_to_doc(ctx: Context, text: bool = False) -> dict:
    doc = {"version": FORMAT_VERSION, "layout": layout_to_doc(ctx.layout)}
    if isinstance(ctx, FlatContext):
        doc["mode"] = "flat"
        doc["rules"] = [rule_to_doc(r, text) for r in ctx.rules]
    else:
        doc["mode"] = "layered"
        for layer, key in _LAYER_KEYS.items():
            doc[key] = [rule_to_doc(r, text) for r in ctx.rules(layer)]
    return doc


def context_from_doc(doc, validate: bool = True) -> Context:
    if not isinstance(doc, dict):
        raise MalformedDocument("context document must be a map")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version!r}, expected {FORMAT_VERSION}")
    layout = layout_from_doc(doc.get("layout"))
    mode = doc.get("mode")
    try:
        if mode == "flat":
            rules = [FlatRule(*_rule_parts(r)) for r in doc.get("rules", [])]
            ctx: Context = FlatContext(tuple(rules), layout)
        elif mode == "layered":
            tables = {}
            for layer, key in _LAYER_KEYS.items():
                tables[key] = tuple(LayerRule(rid, layer, tuple(fields))
                                    for rid, fields in map(_rule_parts, doc.get(key, [])))
            ctx = LayeredContext(layout=layout, **tables)
        else:
            raise MalformedDocument(f"unknown mode {mode!r}")
    except TypeError as exc:
        raise MalformedDocument(str(exc)) from None
    if validate:
        violations = validate_context(ctx)
        if violations:
            raise ValidationFailed(violations)
    return ctx


def save_context(ctx: Context, text: bool = False) -> bytes:
    doc = context_to_doc(ctx, text)
    if text:
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()
    return cbor2.dumps(doc, canonical=True)


def _decode_document(data: bytes):
    stripped = data.lstrip()
    if stripped[:1] == b"{":
        try:
            return json.loads(stripped.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedDocument(f"text document: {exc}") from None
    if not data:
        raise MalformedDocument("empty document")
    try:
        return cbor2.loads(data)
    except (cbor2.CBORDecodeError, ValueError, TypeError) as exc:
        raise MalformedDocument(f"binary document: {exc}") from None


def load_context(data: bytes, validate: bool = True) -> Context:
    """Decode a binary or text context document (the form is detected from content)."""
    return context_from_doc(_decode_document(bytes(data)), validate)


def read_context(path: Union[str, Path], validate: bool = True) -> Context:
    return load_context(Path(path).read_bytes(), validate)


def _atomic_write(path: Union[str, Path], data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_context(path: Union[str, Path], ctx: Context, text: Optional[bool] = None) -> None:
    if text is None:
        text = Path(path).suffix == TEXT_SUFFIX
    _atomic_write(path, save_context(ctx, text))


# registry

ShortKey = tuple  # (Layer or None, short_id)


class RuleRegistry:
    """Network-side store of long-ID rules plus per-device short-ID maps.

    Each distinct rule is stored once however many devices use it. Mutations
    hold an internal lock; lookups only read dictionaries that mutations
    replace wholesale.
    """

    def __init__(self, capacity: int = 1 << LONG_ID_BITS):
        self.capacity = capacity
        self.long_rules: dict[int, Rule] = {}
        self.device_maps: dict[bytes, dict[ShortKey, int]] = {}
        self.device_layouts: dict[bytes, RuleIdLayout] = {}
        self._index: dict[tuple, int] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.long_rules)


def _with_id(rule: Rule, new_id: int) -> Rule:
    if isinstance(rule, FlatRule):
        return FlatRule(new_id, rule.fields)
    return LayerRule(new_id, rule.layer, rule.fields)


def register_rule(reg: RuleRegistry, rule: Rule) -> int:
    """Store ``rule`` and return its long ID; an identical rule keeps its existing ID."""
    key = rule.key()
    with reg._lock:
        existing = reg._index.get(key)
        if existing is not None:
            return existing
        long_id = next((i for i in range(reg.capacity) if i not in reg.long_rules), None)
        if long_id is None:
            raise RegistryFull(f"all {reg.capacity} long IDs are in use")
        reg.long_rules = {**reg.long_rules, long_id: _with_id(rule, long_id)}
        reg._index[key] = long_id
        return long_id


def provision_device(reg: RuleRegistry, device_address: bytes, rule_selection: Iterable[int],
                     layout: RuleIdLayout = DEFAULT_LAYOUT) -> tuple[Context, dict[ShortKey, int]]:
    """Build a device context from registered rules, assigning dense short IDs.

    Flat rules get IDs 0.. under the whole rule-ID width; layer rules get IDs
    0.. within their own segment. Reserved all-ones values are never handed out.
    """
    selection = list(dict.fromkeys(rule_selection))
    with reg._lock:
        rules = []
        for long_id in selection:
            if long_id not in reg.long_rules:
                raise UnknownLongId(f"no rule with long ID {long_id}")
            rules.append((long_id, reg.long_rules[long_id]))
        kinds = {type(r) for _, r in rules}
        if len(kinds) > 1:
            raise RegistryError("a device context cannot mix flat and layer rules")
        mapping: dict[ShortKey, int] = {}
        if not rules or kinds == {FlatRule}:
            if len(rules) > layout.reserved():
                raise TooManyRules(f"{len(rules)} rules, only {layout.reserved()} short IDs usable")
            flat = []
            for short, (long_id, rule) in enumerate(rules):
                mapping[(None, short)] = long_id
                flat.append(_with_id(rule, short))
            ctx: Context = FlatContext(tuple(flat), layout)
        else:
            tables: dict[Layer, list[LayerRule]] = {layer: [] for layer in Layer}
            for long_id, rule in rules:
                table = tables[rule.layer]
                short = len(table)
                if short >= layout.reserved(rule.layer):
                    raise TooManyRules(
                        f"{rule.layer.name.lower()} segment holds only "
                        f"{layout.reserved(rule.layer)} rules")
                mapping[(rule.layer, short)] = long_id
                table.append(_with_id(rule, short))
            ctx = LayeredContext(*(tuple(tables[layer]) for layer in Layer), layout=layout)
        device = bytes(device_address)
        reg.device_maps = {**reg.device_maps, device: mapping}
        reg.device_layouts = {**reg.device_layouts, device: layout}
    return ctx, mapping


def resolve(reg: RuleRegistry, device_address: bytes, short_id: int,
            layer: Optional[Layer] = None) -> Rule:
    """Long-ID rule behind a device's short ID (``layer`` selects the segment for layered devices)."""
    mapping = reg.device_maps.get(bytes(device_address))
    if mapping is None:
        raise UnknownDevice(f"device {bytes(device_address).hex()} is not provisioned")
    long_id = mapping.get((layer, short_id))
    if long_id is None:
        where = "" if layer is None else f" in {layer.name.lower()} segment"
        raise UnknownShortId(f"short ID {short_id}{where} is not mapped for this device")
    return reg.long_rules[long_id]


def device_context(reg: RuleRegistry, device_address: bytes) -> Context:
    """Network-side view of a device's context, rebuilt by resolving every short ID."""
    device = bytes(device_address)
    mapping = reg.device_maps.get(device)
    if mapping is None:
        raise UnknownDevice(f"device {device.hex()} is not provisioned")
    layout = reg.device_layouts[device]
    if all(layer is None for layer, _ in mapping):
        rules = [_with_id(resolve(reg, device, s), s) for _, s in sorted(mapping, key=lambda k: k[1])]
        return FlatContext(tuple(rules), layout)
    tables = {layer: [] for layer in Layer}
    for layer, short in sorted(mapping, key=lambda k: (k[0], k[1])):
        tables[layer].append(_with_id(resolve(reg, device, short, layer), short))
    return LayeredContext(*(tuple(tables[layer]) for layer in Layer), layout=layout)


def save_registry(reg: RuleRegistry) -> bytes:
    rules = []
    for long_id, rule in sorted(reg.long_rules.items()):
        layer = None if isinstance(rule, FlatRule) else int(rule.layer)
        rules.append([long_id, layer, [descriptor_to_doc(d) for d in rule.fields]])
    devices = []
    for device, mapping in sorted(reg.device_maps.items()):
        entries = [[None if layer is None else int(layer), short, long_id]
                   for (layer, short), long_id in sorted(mapping.items(),
                                                         key=lambda kv: (kv[0][0] or 0, kv[0][1]))]
        devices.append([device, layout_to_doc(reg.device_layouts[device]), entries])
    doc = {"version": FORMAT_VERSION, "kind": "registry", "capacity": reg.capacity,
           "rules": rules, "devices": devices}
    return cbor2.dumps(doc, canonical=True)


def load_registry(data: bytes) -> RuleRegistry:
    doc = _decode_document(bytes(data))
    if not isinstance(doc, dict) or doc.get("kind") != "registry":
        raise MalformedDocument("not a registry document")
    if doc.get("version") != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {doc.get('version')!r}")
    try:
        reg = RuleRegistry(int(doc.get("capacity", 1 << LONG_ID_BITS)))
        for long_id, layer, fields in doc["rules"]:
            descs = tuple(descriptor_from_doc(f) for f in fields)
            rule = FlatRule(long_id, descs) if layer is None else LayerRule(long_id, Layer(layer), descs)
            reg.long_rules[long_id] = rule
            reg._index[rule.key()] = long_id
        for device, layout_doc, entries in doc["devices"]:
            reg.device_maps[bytes(device)] = {
                (None if layer is None else Layer(layer), short): long_id
                for layer, short, long_id in entries}
            reg.device_layouts[bytes(device)] = layout_from_doc(layout_doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad registry document: {exc}") from None
    return reg


def read_registry(path: Union[str, Path]) -> RuleRegistry:
    path = Path(path)
    if not path.exists():
        return RuleRegistry()
    return load_registry(path.read_bytes())


def write_registry(path: Union[str, Path], reg: RuleRegistry) -> None:
    _atomic_write(path, save_registry(reg))
