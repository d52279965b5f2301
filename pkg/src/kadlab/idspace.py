"""Identifier arithmetic: XOR metric, common-prefix length, bit distance, diversity degree.

Identifiers are fixed-width unsigned integers interpreted big-endian: bit 0 is the
most significant bit, so a "prefix" is the high-order end. All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class NodeId:
    """A b-bit identifier. ``bits`` is the integer value, ``width`` the bit count b."""

    bits: int
    width: int

    def __post_init__(self):
        if not 0 < self.width:
            raise ValueError("width must be positive")
        if not 0 <= self.bits < (1 << self.width):
            raise ValueError(f"bits out of range for width {self.width}")

    def to_hex(self) -> str:
        """Lowercase hex, zero-padded to width/4 digits."""
        return format(self.bits, f"0{(self.width + 3) // 4}x")

    @classmethod
    def from_hex(cls, s: str, width: int) -> "NodeId":
        return cls(int(s, 16), width)

    def __xor__(self, other: "NodeId") -> int:
        _check_widths(self, other)
        return self.bits ^ other.bits


@dataclass(frozen=True, slots=True)
class DiversityDegree:
    """Count of distinct post-prefix bit patterns in a bucket; max_value is 2^q."""

    value: int
    max_value: int

    def __post_init__(self):
        if self.value < 0 or self.value > self.max_value:
            raise ValueError("diversity degree out of range")


def _check_widths(x: NodeId, y: NodeId) -> None:
    if x.width != y.width:
        raise ValueError(f"width mismatch: {x.width} != {y.width}")


def common_prefix_length(x: NodeId, y: NodeId) -> int:
    """Number of leading bits on which x and y agree; equals width iff x == y."""
    _check_widths(x, y)
    return x.width - (x.bits ^ y.bits).bit_length()


def bit_distance(x: NodeId, y: NodeId) -> int:
    """width minus the common prefix length; 0 iff x == y."""
    _check_widths(x, y)
    return (x.bits ^ y.bits).bit_length()


def xor_distance(x: NodeId, y: NodeId) -> int:
    _check_widths(x, y)
    return x.bits ^ y.bits


def bit_distance_int(x: int, y: int) -> int:
    """Bit distance on raw integer identifiers of equal (implicit) width."""
    return (x ^ y).bit_length()


def pattern_of(bits: int, width: int, prefix_len: int, q: int) -> int:
    """The q-bit substring at positions [prefix_len, prefix_len + q)."""
    if q < 1 or prefix_len + q > width:
        raise ValueError("pattern window out of range")
    return (bits >> (width - prefix_len - q)) & ((1 << q) - 1)


def diversity_degree(ids, prefix_len: int, q: int) -> DiversityDegree:
    """Distinct q-bit patterns right after a shared prefix of length prefix_len.

    All ids must share their first prefix_len bits; the empty set has degree 0.
    Accepts NodeId instances or raw ints paired with a width via NodeId only.
    """
    ids = list(ids)
    if not ids:
        return DiversityDegree(0, 1 << q)
    width = ids[0].width
    if q < 1 or prefix_len + q > width:
        raise ValueError("need q >= 1 and prefix_len + q <= width")
    if prefix_len > 0:
        ref = ids[0].bits >> (width - prefix_len)
        for nid in ids:
            if nid.width != width:
                raise ValueError("mixed widths")
            if nid.bits >> (width - prefix_len) != ref:
                raise ValueError("ids do not share the stated prefix")
    patterns = {pattern_of(nid.bits, width, prefix_len, q) for nid in ids}
    return DiversityDegree(len(patterns), 1 << q)


def diversity_degree_int(ids, width: int, prefix_len: int, q: int) -> int:
    """Degree count on raw int ids; no prefix validation (hot path)."""
    shift = width - prefix_len - q
    mask = (1 << q) - 1
    return len({(i >> shift) & mask for i in ids})
