"""Compression factors, per-packet header averages and LoRa time on air."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .errors import EmptyInput, InvalidDuty, InvalidParams

BANDWIDTHS_HZ = (125_000, 250_000, 500_000)
SPREADING_FACTORS = tuple(range(7, 13))


@dataclass(frozen=True)
class FlowStats:
    flow_label: str
    packet_count: float
    uncompressed_header_octets: int
    compressed_header_octets: int

    @property
    def compression_factor(self) -> float:
        return compression_factor(self.uncompressed_header_octets, self.compressed_header_octets)


@dataclass(frozen=True)
class LoraParams:
    """Modem settings for one airtime computation.

    ``low_data_rate_optimize=None`` turns it on when the symbol time exceeds
    16 ms, i.e. SF11 and SF12 at 125 kHz.
    """

    spreading_factor: int = 7
    bandwidth_hz: int = 125_000
    coding_rate_denominator: int = 5
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc: bool = True
    low_data_rate_optimize: Optional[bool] = None
    duty_cycle: float = 0.001

    def validate(self) -> None:
        if self.spreading_factor not in SPREADING_FACTORS:
            raise InvalidParams(f"spreading factor {self.spreading_factor} not in 7..12")
        if self.bandwidth_hz not in BANDWIDTHS_HZ:
            raise InvalidParams(f"bandwidth {self.bandwidth_hz} Hz not in {BANDWIDTHS_HZ}")
        if not 5 <= self.coding_rate_denominator <= 8:
            raise InvalidParams(f"coding rate 4/{self.coding_rate_denominator} not in 4/5..4/8")
        if self.preamble_symbols < 0:
            raise InvalidParams("negative preamble length")
        if not 0 < self.duty_cycle <= 1:
            raise InvalidParams(f"duty cycle {self.duty_cycle} not in (0, 1]")

    @property
    def symbol_time_ms(self) -> float:
        return (1 << self.spreading_factor) / self.bandwidth_hz * 1000

    @property
    def ldro(self) -> bool:
        if self.low_data_rate_optimize is not None:
            return self.low_data_rate_optimize
        return self.symbol_time_ms > 16


def compression_factor(uncompressed_octets: int, compressed_octets: int) -> float:
    if compressed_octets == 0:
        raise ZeroDivisionError("compressed size is zero")
    return uncompressed_octets / compressed_octets


def average_octets_per_packet(stats: Sequence[FlowStats]) -> float:
    total = sum(s.packet_count for s in stats)
    if not stats or total <= 0:
        raise EmptyInput("no packets to average over")
    return sum(s.packet_count * s.compressed_header_octets for s in stats) / total


def payload_symbols(params: LoraParams, payload_octets: int) -> int:
    sf = params.spreading_factor
    de = 1 if params.ldro else 0
    h = 0 if params.explicit_header else 1
    crc = 1 if params.crc else 0
    numerator = 8 * payload_octets - 4 * sf + 28 + 16 * crc - 20 * h
    blocks = math.ceil(numerator / (4 * (sf - 2 * de)))
    return 8 + max(blocks * params.coding_rate_denominator, 0)


def lora_time_on_air(params: LoraParams, payload_octets: int) -> float:
    """Time on air in milliseconds for one LoRa frame carrying ``payload_octets``."""
    params.validate()
    if payload_octets < 1:
        raise InvalidParams("payload must be at least one octet")
    t_sym = params.symbol_time_ms
    preamble = (params.preamble_symbols + 4.25) * t_sym
    return preamble + payload_symbols(params, payload_octets) * t_sym


def duty_cycle_min_interval(toa_ms: float, duty: float) -> float:
    """Mandatory silence after a transmission of ``toa_ms`` under duty cycle ``duty``."""
    if not 0 < duty <= 1:
        raise InvalidDuty(f"duty cycle {duty} not in (0, 1]")
    return toa_ms * (1 / duty - 1)


def params_per_sf(base: LoraParams = LoraParams(), sfs=SPREADING_FACTORS) -> list[LoraParams]:
    return [replace(base, spreading_factor=sf) for sf in sfs]


def airtime_report(stats: Sequence[FlowStats], params: Sequence[LoraParams],
                   uncompressed: bool = False) -> dict[str, dict[int, float]]:
    """``{flow_label: {sf: ms}}`` for each flow's header octets (compressed by default)."""
    table: dict[str, dict[int, float]] = {}
    for s in stats:
        octets = s.uncompressed_header_octets if uncompressed else s.compressed_header_octets
        table[s.flow_label] = {p.spreading_factor: lora_time_on_air(p, octets) for p in params}
    return table
