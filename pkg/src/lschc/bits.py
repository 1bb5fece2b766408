"""Fixed-width bit strings and MSB-first bit stream reader/writer."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ResidueUnderflow, WidthMismatch


@dataclass(frozen=True, order=True)
class Bits:
    """An unsigned value with an explicit bit width.

    ``Bits(6, 4)`` is the bit string ``0110``. Leading zeros are significant,
    which is why a plain ``int`` is not enough to describe a header field.
    """

    value: int
    width: int

    def __post_init__(self):
        if self.width < 0:
            raise WidthMismatch(f"negative width {self.width}")
        if self.value < 0 or self.value >> self.width:
            raise WidthMismatch(f"value {self.value} does not fit in {self.width} bits")

    @classmethod
    def from_str(cls, text: str) -> Bits:
        text = text.replace(" ", "").replace("_", "")
        if text and set(text) - {"0", "1"}:
            raise ValueError(f"not a bit string: {text!r}")
        return cls(int(text, 2) if text else 0, len(text))

    @classmethod
    def from_bytes(cls, data: bytes) -> Bits:
        return cls(int.from_bytes(data, "big"), 8 * len(data))

    def to_bytes(self) -> bytes:
        if self.width % 8:
            raise WidthMismatch(f"{self.width} bits is not a whole number of octets")
        return self.value.to_bytes(self.width // 8, "big")

    def __len__(self):
        return self.width

    def __add__(self, other: Bits) -> Bits:
        return Bits((self.value << other.width) | other.value, self.width + other.width)

    def __str__(self):
        return format(self.value, f"0{self.width}b") if self.width else ""


class BitWriter:
    def __init__(self):
        self._acc = 0
        self._nbits = 0

    @property
    def bit_length(self) -> int:
        return self._nbits

    def write(self, value: int, width: int) -> None:
        if value < 0 or value >> width:
            raise WidthMismatch(f"value {value} does not fit in {width} bits")
        self._acc = (self._acc << width) | value
        self._nbits += width

    def write_bits(self, bits: Bits) -> None:
        self.write(bits.value, bits.width)

    def write_bytes(self, data: bytes) -> None:
        self.write(int.from_bytes(data, "big"), 8 * len(data))

    def bits(self) -> Bits:
        return Bits(self._acc, self._nbits)

    def to_bytes(self) -> bytes:
        """Contents padded with zero bits up to the next octet boundary."""
        pad = -self._nbits % 8
        return (self._acc << pad).to_bytes((self._nbits + pad) // 8, "big")


class BitReader:
    def __init__(self, data: bytes, bit_length: int | None = None):
        self._data = data
        self._value = int.from_bytes(data, "big")
        self._total = 8 * len(data)
        self._limit = self._total if bit_length is None else bit_length
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self._limit - self.pos

    def read(self, width: int) -> int:
        if width > self.remaining:
            raise ResidueUnderflow(
                f"need {width} bits at offset {self.pos}, only {self.remaining} left")
        shift = self._total - self.pos - width
        self.pos += width
        return (self._value >> shift) & ((1 << width) - 1)

    def read_bits(self, width: int) -> Bits:
        return Bits(self.read(width), width)

    def read_bytes(self, count: int) -> bytes:
        return self.read(8 * count).to_bytes(count, "big")

    def align(self) -> None:
        self.pos = min(self._limit, self.pos + (-self.pos % 8))

    def tail(self) -> bytes:
        """Every octet after the current (aligned) position."""
        if self.pos % 8:
            raise ValueError("reader is not octet aligned")
        return self._data[self.pos // 8:]
