"""``lschc`` command line tool.

Exit codes: 0 success, 1 usage, 2 context error, 3 packet error, 4 engine error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import string
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import context_io as cio
from .context import FlatContext, FlatRule, LayeredContext, decode_rule_id, flatten, validate_context
from .engine import DecompressionEnvironment, compress, compressed_size_octets, decompress
from .errors import (ContextError, EngineError, InvalidDuty, InvalidParams, PacketError,
                     SchcError)
from .metrics import LoraParams, duty_cycle_min_interval, lora_time_on_air, params_per_sf
from .packet import Direction, Layer, parse_stack, serialize_stack, verify_checksum
from . import scenarios

EXIT_OK, EXIT_USAGE, EXIT_CONTEXT, EXIT_PACKET, EXIT_ENGINE = range(5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _hex_or_binary(data: bytes) -> list[bytes]:
    """Hex text (one packet per line) when the content is hex, else one binary packet."""
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError:
        return [data]
    lines = [ln.strip().replace(" ", "").replace(":", "") for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    hexdigits = set(string.hexdigits)
    if lines and all(len(ln) % 2 == 0 and set(ln) <= hexdigits for ln in lines):
        return [bytes.fromhex(ln) for ln in lines]
    return [data]


def _read_input(name: str) -> list[bytes]:
    data = sys.stdin.buffer.read() if name == "-" else Path(name).read_bytes()
    return _hex_or_binary(data)


def _emit(lines: list[str], output: Optional[str]) -> None:
    text = "".join(ln + "\n" for ln in lines)
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _load_context(args):
    try:
        ctx = cio.read_context(args.context)
    except OSError as exc:
        raise ContextError(f"cannot read context: {exc}") from None
    if args.mode == "flat" and isinstance(ctx, LayeredContext):
        ctx = flatten(ctx)
    elif args.mode == "layered" and isinstance(ctx, FlatContext):
        raise ContextError("a flat context cannot be used in layered mode")
    return ctx


def _direction(name: str) -> Direction:
    return Direction.UP if name == "up" else Direction.DOWN


def _rule_label(ctx, pkt) -> str:
    layout = ctx.layout
    if pkt.rule_id == layout.reserved():
        return f"uncompressed (ID {pkt.rule_id})"
    if isinstance(ctx, FlatContext):
        return f"rule {pkt.rule_id}"
    alc, tlc, nlc = decode_rule_id(layout, pkt.rule_id_bits)

    def seg(v, layer):
        return "-" if v == layout.reserved(layer) else str(v)
    return (f"rule {pkt.rule_id_bits} (ALC={seg(alc, Layer.APPLICATION)} "
            f"TLC={seg(tlc, Layer.TRANSPORT)} NLC={seg(nlc, Layer.NETWORK)})")


def cmd_compress(args) -> int:
    ctx = _load_context(args)
    direction = _direction(args.direction)
    out = []
    for i, raw in enumerate(_read_input(args.input), 1):
        stack = parse_stack(raw, direction, coap_ports=args.coap_port or ())
        pkt = compress(ctx, stack)
        size = compressed_size_octets(pkt)
        plural = "octet" if size == 1 else "octets"
        print(f"packet {i}: {_rule_label(ctx, pkt)}, residue {pkt.residue.width} bits, "
              f"header {size} {plural} (was {stack.header_octets()})", file=sys.stderr)
        out.append(pkt.to_bytes().hex())
    _emit(out, args.output)
    return EXIT_OK


def cmd_decompress(args) -> int:
    ctx = _load_context(args)
    iid = None
    if args.device_iid is not None:
        try:
            iid = int(args.device_iid, 16)
        except ValueError:
            raise UsageError(f"device IID must be hex, got {args.device_iid!r}") from None
        if iid >> 64:
            raise UsageError("device IID is wider than 64 bits")
    env = DecompressionEnvironment(device_iid=iid, direction=_direction(args.direction))
    out = []
    for i, frame in enumerate(_read_input(args.input), 1):
        stack = decompress(frame, ctx, env)
        if not verify_checksum(stack):
            raise EngineError(f"packet {i}: checksum does not verify; wrong context or device IID?")
        out.append(serialize_stack(stack).hex())
    _emit(out, args.output)
    return EXIT_OK


def cmd_context(args) -> int:
    if args.action == "validate":
        try:
            ctx = cio.read_context(args.path, validate=False)
        except OSError as exc:
            raise ContextError(f"cannot read context: {exc}") from None
        violations = validate_context(ctx)
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        if violations:
            return EXIT_CONTEXT
        kind = "flat" if isinstance(ctx, FlatContext) else "layered"
        print(f"ok: {kind} context, {ctx.descriptor_count()} field descriptors")
        return EXIT_OK
    ctx = cio.read_context(args.path)
    if args.flatten and isinstance(ctx, LayeredContext):
        ctx = flatten(ctx)
    cio.write_context(args.output, ctx)
    return EXIT_OK


def _device(text: str) -> bytes:
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise UsageError(f"device address must be hex, got {text!r}") from None


def cmd_registry(args) -> int:
    reg = cio.read_registry(args.registry)
    if args.action == "register":
        ctx = cio.read_context(args.rules)
        rules = ctx.rules if isinstance(ctx, FlatContext) else [r for layer in Layer for r in ctx.rules(layer)]
        for rule in rules:
            print(cio.register_rule(reg, rule))
        cio.write_registry(args.registry, reg)
    elif args.action == "provision":
        try:
            selection = [int(x) for x in args.long_ids.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"bad long ID list {args.long_ids!r}") from None
        ctx, mapping = cio.provision_device(reg, _device(args.device), selection)
        cio.write_context(args.output, ctx)
        cio.write_registry(args.registry, reg)
        for (layer, short), long_id in mapping.items():
            where = "" if layer is None else f"{layer.name.lower()} "
            print(f"{where}short {short} -> long {long_id}")
    elif args.action == "resolve":
        layer = None if args.layer is None else Layer[args.layer.upper()]
        rule = cio.resolve(reg, _device(args.device), args.short_id, layer)
        sys.stdout.write(json.dumps(cio.rule_to_doc(rule, text=True), indent=2) + "\n")
    else:
        for long_id, rule in sorted(reg.long_rules.items()):
            kind = "flat" if isinstance(rule, FlatRule) else rule.layer.name.lower()
            print(f"{long_id}\t{kind}\t{len(rule.fields)} fields")
        for device, mapping in sorted(reg.device_maps.items()):
            print(f"device {device.hex()}: {len(mapping)} rules")
    return EXIT_OK


def _table(rows: list[list], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        return buf.getvalue()
    cells = [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    return "".join("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in cells)


def cmd_bench(args) -> int:
    res = scenarios.run_bench(args.mode, args.packets, args.seed)
    fmt = args.format
    out = sys.stdout
    rows = [["flow", "packets", "uncompressed", "compressed", "factor", "iphc_ref", "iphc_factor"]]
    for f in res.flows:
        iphc = scenarios.IPHC_FLOW_OCTETS[f.flow.label]
        rows.append([f.flow.label, f.packets, f.uncompressed_header_octets, f.compressed_header_octets,
                     f"{f.uncompressed_header_octets / f.compressed_header_octets:.2f}",
                     iphc, f"{f.uncompressed_header_octets / iphc:.2f}"])
    out.write(f"# compression factors ({res.mode} mode)\n")
    out.write(_table(rows, fmt))

    sizes = {f.flow.label: f.compressed_header_octets for f in res.flows}
    schc_stated = scenarios.stated_mix_mean(sizes, scenarios.STATED_MIX_SCHC)
    iphc_stated = scenarios.stated_mix_mean(scenarios.IPHC_FLOW_OCTETS, scenarios.STATED_MIX_IPHC)
    rows = [["quantity", "octets_per_packet"],
            ["replayed_mean", f"{res.mean_octets:.3f}"],
            ["stated_mix_mean", f"{schc_stated:.3f}"],
            ["iphc_stated_mix_mean", f"{iphc_stated:.3f}"],
            ["reference_schc_published", f"{scenarios.REFERENCE_SCHC_AVG:.2f}"],
            ["reference_iphc_published", f"{scenarios.REFERENCE_IPHC_AVG:.2f}"]]
    out.write("# header octets per packet (published values are reference constants; "
              "they do not follow from the per-flow sizes)\n")
    out.write(_table(rows, fmt))

    params = params_per_sf()
    rows = [["flow", "octets"] + [f"SF{p.spreading_factor}" for p in params]]
    for f in res.flows:
        for label, octets in ((f.flow.label, f.compressed_header_octets),
                              (f"{f.flow.label}-iphc", scenarios.IPHC_FLOW_OCTETS[f.flow.label]),
                              (f"{f.flow.label}-raw", f.uncompressed_header_octets)):
            rows.append([label, octets] + [f"{lora_time_on_air(p, octets):.2f}" for p in params])
    out.write("# LoRa time on air of the headers, ms (125 kHz, CR 4/5, 8 preamble symbols)\n")
    out.write(_table(rows, fmt))

    out.write(f"# stored field descriptors: {res.mode} {res.descriptor_count}, "
              f"{'layered' if res.mode == 'flat' else 'flat'} {res.other_mode_descriptor_count}\n")
    return EXIT_OK


def cmd_airtime(args) -> int:
    base = LoraParams(bandwidth_hz=args.bw, coding_rate_denominator=args.cr,
                      preamble_symbols=args.preamble, duty_cycle=args.duty)
    params = params_per_sf(base, args.sf or range(7, 13))
    rows = [["sf", "octets", "toa_ms", "min_interval_ms"]]
    for p in params:
        toa = lora_time_on_air(p, args.octets)
        rows.append([p.spreading_factor, args.octets, f"{toa:.3f}",
                     f"{duty_cycle_min_interval(toa, p.duty_cycle):.1f}"])
    sys.stdout.write(_table(rows, args.format))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lschc", description="SCHC / layered SCHC header compression")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def engine_opts(sp):
        sp.add_argument("--context", required=True, help="context file (.schcb or .schct)")
        sp.add_argument("--mode", choices=("flat", "layered"),
                        help="default: the context file's own mode")
        sp.add_argument("--direction", choices=("up", "down"), default="up")
        sp.add_argument("-o", "--output", help="write hex lines here instead of stdout")
        sp.add_argument("input", help="packet file (binary or hex lines), '-' for stdin")

    sp = sub.add_parser("compress", help="compress IPv6 packets")
    engine_opts(sp)
    sp.add_argument("--coap-port", type=int, action="append",
                    help="UDP port whose payload starts with a CoAP header (repeatable)")
    sp.set_defaults(func=cmd_compress)

    sp = sub.add_parser("decompress", help="restore packets from compressed frames")
    engine_opts(sp)
    sp.add_argument("--device-iid", help="64-bit device interface ID as 16 hex digits")
    sp.set_defaults(func=cmd_decompress)

    sp = sub.add_parser("context", help="validate or convert context files")
    csub = sp.add_subparsers(dest="action", required=True, parser_class=_Parser)
    c = csub.add_parser("validate")
    c.add_argument("path")
    c = csub.add_parser("convert", help="re-encode; the output suffix picks binary or text")
    c.add_argument("path")
    c.add_argument("output")
    c.add_argument("--flatten", action="store_true", help="write a layered context as flat rules")
    sp.set_defaults(func=cmd_context)

    sp = sub.add_parser("registry", help="network-side rule registry")
    rsub = sp.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name in ("register", "provision", "resolve", "list"):
        r = rsub.add_parser(name)
        r.add_argument("--registry", required=True, help="registry file (created if missing)")
        if name == "register":
            r.add_argument("rules", help="context file whose rules are registered")
        elif name == "provision":
            r.add_argument("--device", required=True, help="device address, hex")
            r.add_argument("--long-ids", required=True, help="comma-separated long IDs")
            r.add_argument("-o", "--output", required=True, help="device context file to write")
        elif name == "resolve":
            r.add_argument("--device", required=True)
            r.add_argument("--short-id", type=int, required=True)
            r.add_argument("--layer", choices=("network", "transport", "application"))
    sp.set_defaults(func=cmd_registry)

    sp = sub.add_parser("bench", help="three-flow evaluation (factors, averages, airtime)")
    sp.add_argument("--mode", choices=("flat", "layered"), default="flat")
    sp.add_argument("--packets", type=int, default=660)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--format", choices=("text", "csv"), default="text")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("airtime", help="LoRa time on air and duty-cycle off time")
    sp.add_argument("--octets", type=int, required=True)
    sp.add_argument("--sf", type=int, action="append", choices=range(7, 13))
    sp.add_argument("--bw", type=int, default=125_000)
    sp.add_argument("--cr", type=int, default=5, help="coding rate denominator (4/CR)")
    sp.add_argument("--preamble", type=int, default=8)
    sp.add_argument("--duty", type=float, default=0.001)
    sp.add_argument("--format", choices=("text", "csv"), default="text")
    sp.set_defaults(func=cmd_airtime)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, InvalidParams, InvalidDuty) as exc:
        print(f"lschc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContextError as exc:
        print(f"lschc: context error: {exc}", file=sys.stderr)
        return EXIT_CONTEXT
    except PacketError as exc:
        print(f"lschc: packet error: {exc}", file=sys.stderr)
        return EXIT_PACKET
    except EngineError as exc:
        print(f"lschc: engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except SchcError as exc:
        print(f"lschc: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except OSError as exc:
        print(f"lschc: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
