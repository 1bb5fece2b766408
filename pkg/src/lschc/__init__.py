"""Static Context Header Compression (SCHC) and its layered variant for LPWAN links."""
from .bits import Bits
from .context import (
    CDAction,
    DirectionIndicator,
    FieldDescriptor,
    FlatContext,
    FlatRule,
    LayeredContext,
    LayerRule,
    MatchingOperator,
    RuleIdLayout,
    decode_rule_id,
    encode_rule_id,
    flatten,
    validate_context,
)
from .engine import (
    CompressedPacket,
    DecompressionEnvironment,
    compress,
    compressed_size_octets,
    decompress,
    match_field,
    match_rule,
    select_rule_flat,
    select_rule_layered,
)
from .packet import (
    CoapHeader,
    Direction,
    FieldId,
    HeaderStack,
    Icmpv6Header,
    Ipv6Header,
    Layer,
    UdpHeader,
    compute_checksum,
    get_field,
    parse_stack,
    serialize_stack,
)

__version__ = "0.1.0"

__all__ = [
    "Bits",
    "CDAction",
    "CoapHeader",
    "CompressedPacket",
    "DecompressionEnvironment",
    "Direction",
    "DirectionIndicator",
    "FieldDescriptor",
    "FieldId",
    "FlatContext",
    "FlatRule",
    "HeaderStack",
    "Icmpv6Header",
    "Ipv6Header",
    "Layer",
    "LayerRule",
    "LayeredContext",
    "MatchingOperator",
    "RuleIdLayout",
    "UdpHeader",
    "compress",
    "compressed_size_octets",
    "compute_checksum",
    "decode_rule_id",
    "decompress",
    "encode_rule_id",
    "flatten",
    "get_field",
    "match_field",
    "match_rule",
    "parse_stack",
    "select_rule_flat",
    "select_rule_layered",
    "serialize_stack",
    "validate_context",
]
