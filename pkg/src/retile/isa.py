"""Source-ISA domain types: registers, mnemonics, flags, operands, decoded instructions."""

from __future__ import annotations

import enum
from dataclasses import dataclass

__all__ = [
    "Reg", "REG_NAMES", "REG8_NAMES", "REG32_NAMES",
    "CF", "PF", "AF", "ZF", "SF", "OF", "ALL_FLAGS", "FLAG_NAMES", "flag_names",
    "Mnemonic", "COND_BRANCHES", "flags_written", "flags_read",
    "RegOp", "ImmOp", "MemOp", "Operand",
    "DecodedInstruction", "InvalidDecode", "InvalidReason",
]


class Reg(enum.IntEnum):
    """The sixteen x86-64 general-purpose registers, by hardware encoding."""

    RAX = 0
    RCX = 1
    RDX = 2
    RBX = 3
    RSP = 4
    RBP = 5
    RSI = 6
    RDI = 7
    R8 = 8
    R9 = 9
    R10 = 10
    R11 = 11
    R12 = 12
    R13 = 13
    R14 = 14
    R15 = 15


REG_NAMES = {r: r.name.lower() for r in Reg}
REG32_NAMES = {
    Reg.RAX: "eax", Reg.RCX: "ecx", Reg.RDX: "edx", Reg.RBX: "ebx",
    Reg.RSP: "esp", Reg.RBP: "ebp", Reg.RSI: "esi", Reg.RDI: "edi",
    Reg.R8: "r8d", Reg.R9: "r9d", Reg.R10: "r10d", Reg.R11: "r11d",
    Reg.R12: "r12d", Reg.R13: "r13d", Reg.R14: "r14d", Reg.R15: "r15d",
}
# Low-byte aliases only.  The high-byte registers (AH..BH) are outside the
# subset; encodings 4..7 at width 8 are valid only when a REX prefix is present.
REG8_NAMES = {
    Reg.RAX: "al", Reg.RCX: "cl", Reg.RDX: "dl", Reg.RBX: "bl",
    Reg.RSP: "spl", Reg.RBP: "bpl", Reg.RSI: "sil", Reg.RDI: "dil",
    Reg.R8: "r8b", Reg.R9: "r9b", Reg.R10: "r10b", Reg.R11: "r11b",
    Reg.R12: "r12b", Reg.R13: "r13b", Reg.R14: "r14b", Reg.R15: "r15b",
}

# Condition flags at their RFLAGS bit positions.
CF = 1 << 0
PF = 1 << 2
AF = 1 << 4
ZF = 1 << 6
SF = 1 << 7
OF = 1 << 11
ALL_FLAGS = CF | PF | AF | ZF | SF | OF

FLAG_NAMES = ((CF, "CF"), (PF, "PF"), (AF, "AF"), (ZF, "ZF"), (SF, "SF"), (OF, "OF"))


def flag_names(mask: int) -> str:
    """Render a flag mask like 'CF|ZF' ('-' when empty)."""
    parts = [name for bit, name in FLAG_NAMES if mask & bit]
    return "|".join(parts) if parts else "-"


class Mnemonic(enum.Enum):
    MOV = "mov"
    LEA = "lea"
    ADD = "add"
    SUB = "sub"
    AND = "and"
    OR = "or"
    XOR = "xor"
    CMP = "cmp"
    TEST = "test"
    INC = "inc"
    DEC = "dec"
    SHL = "shl"
    PUSH = "push"
    POP = "pop"
    CALL = "call"
    RET = "ret"
    JMP = "jmp"
    JZ = "jz"
    JNZ = "jnz"
    JL = "jl"
    JGE = "jge"
    JLE = "jle"
    JG = "jg"
    JB = "jb"
    JAE = "jae"
    CALL_REG = "call_reg"
    JMP_REG = "jmp_reg"
    NOP = "nop"
    INT3 = "int3"


COND_BRANCHES = {
    Mnemonic.JZ, Mnemonic.JNZ, Mnemonic.JL, Mnemonic.JGE,
    Mnemonic.JLE, Mnemonic.JG, Mnemonic.JB, Mnemonic.JAE,
}

# Flag effects are fixed per mnemonic, never per operand value.  INC/DEC leave
# CF untouched; the logic group and SHL pin the architecturally undefined
# results (AF, and OF for shifts by more than one) to zero on both execution
# routes.
_FLAGS_WRITTEN = {
    Mnemonic.ADD: ALL_FLAGS,
    Mnemonic.SUB: ALL_FLAGS,
    Mnemonic.CMP: ALL_FLAGS,
    Mnemonic.AND: ALL_FLAGS,
    Mnemonic.OR: ALL_FLAGS,
    Mnemonic.XOR: ALL_FLAGS,
    Mnemonic.TEST: ALL_FLAGS,
    Mnemonic.SHL: ALL_FLAGS,
    Mnemonic.INC: ALL_FLAGS & ~CF,
    Mnemonic.DEC: ALL_FLAGS & ~CF,
}

_FLAGS_READ = {
    Mnemonic.JZ: ZF,
    Mnemonic.JNZ: ZF,
    Mnemonic.JL: SF | OF,
    Mnemonic.JGE: SF | OF,
    Mnemonic.JLE: ZF | SF | OF,
    Mnemonic.JG: ZF | SF | OF,
    Mnemonic.JB: CF,
    Mnemonic.JAE: CF,
}


def flags_written(mnemonic: Mnemonic) -> int:
    return _FLAGS_WRITTEN.get(mnemonic, 0)


def flags_read(mnemonic: Mnemonic) -> int:
    return _FLAGS_READ.get(mnemonic, 0)


@dataclass(frozen=True, slots=True)
class RegOp:
    reg: Reg


@dataclass(frozen=True, slots=True)
class ImmOp:
    value: int  # semantic value, sign-extension already applied


@dataclass(frozen=True, slots=True)
class MemOp:
    """A [base + index*scale + disp] effective address, or [rip + disp]."""

    base: Reg | None = None
    index: Reg | None = None
    scale: int = 1
    disp: int = 0
    rip_relative: bool = False

    def __post_init__(self) -> None:
        if self.rip_relative and (self.base is not None or self.index is not None):
            raise ValueError("rip-relative operand cannot carry base or index")
        if self.index is None and self.scale != 1:
            raise ValueError("scale requires an index register")


Operand = RegOp | ImmOp | MemOp


class InvalidReason(enum.Enum):
    UNSUPPORTED = "unsupported-opcode"
    TRUNCATED = "truncated"
    MALFORMED = "malformed"


@dataclass(frozen=True, slots=True)
class InvalidDecode:
    offset: int
    reason: InvalidReason
    detail: str = ""


@dataclass(frozen=True, slots=True)
class DecodedInstruction:
    """One instruction decoded at a byte offset of the image."""

    offset: int
    length: int
    mnemonic: Mnemonic
    width: int  # operand width in bits: 8, 32 or 64 (0 for width-free ops)
    operands: tuple[Operand, ...]
    flags_written: int
    flags_read: int

    def memory_operand(self) -> MemOp | None:
        for op in self.operands:
            if isinstance(op, MemOp):
                return op
        return None
