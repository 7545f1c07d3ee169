"""Condition-flag semantics for the supported arithmetic classes."""

from __future__ import annotations

import enum

from .isa import AF, CF, OF, PF, SF, ZF

__all__ = ["FlagKind", "kind_for", "compute_flags", "UNCHANGED"]

# Marker distinguishing "flag not modified" (INC/DEC carry) from "flag is 0".
UNCHANGED = None

_M64 = (1 << 64) - 1


class FlagKind(enum.Enum):
    ADD = "add"
    SUB = "sub"  # also CMP
    INC = "inc"
    DEC = "dec"
    LOGIC = "logic"  # AND/OR/XOR/TEST
    SHL = "shl"


def kind_for(mnemonic) -> FlagKind | None:
    from .isa import Mnemonic

    return {
        Mnemonic.ADD: FlagKind.ADD,
        Mnemonic.SUB: FlagKind.SUB,
        Mnemonic.CMP: FlagKind.SUB,
        Mnemonic.INC: FlagKind.INC,
        Mnemonic.DEC: FlagKind.DEC,
        Mnemonic.AND: FlagKind.LOGIC,
        Mnemonic.OR: FlagKind.LOGIC,
        Mnemonic.XOR: FlagKind.LOGIC,
        Mnemonic.TEST: FlagKind.LOGIC,
        Mnemonic.SHL: FlagKind.SHL,
    }.get(mnemonic)


def _parity_even(value: int) -> bool:
    """Even parity of the low eight result bits."""
    v = value & 0xFF
    v ^= v >> 4
    v ^= v >> 2
    v ^= v >> 1
    return (v & 1) == 0


def compute_flags(
    kind: FlagKind,
    width: int,
    a: int,
    b: int,
    result: int,
    carry_out: int = 0,
) -> dict[int, bool | None]:
    """Return the six flag values for one arithmetic result.

    ``a`` and ``b`` are the 64-bit operand values as the instruction saw them;
    ``result`` is the full-width result before masking.  For SHL, ``b`` is the
    masked shift count and ``carry_out`` the last bit shifted out.  A value of
    ``UNCHANGED`` means the instruction leaves that flag alone (INC/DEC carry).

    Pinned choices shared by the interpreter and the flag tiles: logic ops and
    shifts set AF to 0; a shift count of 0 still rewrites all six flags from
    the (unchanged) result; OF after a shift by more than one is 0.
    """
    mask = _M64 if width == 64 else (1 << width) - 1
    sign = 1 << (width - 1)
    r = result & mask
    zf = r == 0
    sf = bool(r & sign)
    pf = _parity_even(r)

    if kind is FlagKind.ADD or kind is FlagKind.INC:
        cf: bool | None = ((a & mask) + (b & mask)) > mask
        af = bool((a ^ b ^ result) & 0x10)
        of = bool(~(a ^ b) & (a ^ result) & sign)
        if kind is FlagKind.INC:
            cf = UNCHANGED
    elif kind is FlagKind.SUB or kind is FlagKind.DEC:
        cf = (a & mask) < (b & mask)
        af = bool((a ^ b ^ result) & 0x10)
        of = bool((a ^ b) & (a ^ result) & sign)
        if kind is FlagKind.DEC:
            cf = UNCHANGED
    elif kind is FlagKind.LOGIC:
        cf = False
        af = False
        of = False
    elif kind is FlagKind.SHL:
        count = b
        cf = bool(carry_out) if count else False
        af = False
        of = bool(carry_out) ^ sf if count == 1 else False
    else:
        raise ValueError(f"unknown flag kind: {kind!r}")

    return {CF: cf, PF: pf, AF: af, ZF: zf, SF: sf, OF: of}


def shl_carry_out(width: int, value: int, count: int) -> int:
    """Last bit shifted out by ``value << count`` at the given width (0 if count is 0)."""
    if count == 0:
        return 0
    return (value >> (width - count)) & 1
