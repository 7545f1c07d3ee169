"""Byte-level decoder for the supported x86-64 subset.

Decoding at an offset is a pure function of the image bytes: REX prefix,
opcode (one or two bytes), ModRM/SIB, disp8/disp32, imm8/imm32.  Anything
outside the subset comes back as an InvalidDecode with a reason, never an
exception, so every byte offset of an image can be decoded independently.
"""

from __future__ import annotations

from .isa import (
    DecodedInstruction,
    ImmOp,
    InvalidDecode,
    InvalidReason,
    MemOp,
    Mnemonic,
    Operand,
    Reg,
    RegOp,
    flags_read,
    flags_written,
)

__all__ = ["decode"]

_REX_W = 8
_REX_R = 4
_REX_X = 2
_REX_B = 1

# reg/rm-direction ModRM ALU forms, width 32/64 by REX.W.
_MODRM_MR = {
    0x01: Mnemonic.ADD, 0x29: Mnemonic.SUB, 0x21: Mnemonic.AND,
    0x09: Mnemonic.OR, 0x31: Mnemonic.XOR, 0x39: Mnemonic.CMP,
    0x85: Mnemonic.TEST, 0x89: Mnemonic.MOV,
}
_MODRM_RM = {
    0x03: Mnemonic.ADD, 0x2B: Mnemonic.SUB, 0x23: Mnemonic.AND,
    0x0B: Mnemonic.OR, 0x33: Mnemonic.XOR, 0x3B: Mnemonic.CMP,
    0x8B: Mnemonic.MOV,
}
# Group-1 immediates (0x83 imm8, 0x81 imm32); /2 ADC and /3 SBB are outside
# the subset.
_GROUP1 = {0: Mnemonic.ADD, 1: Mnemonic.OR, 4: Mnemonic.AND,
           5: Mnemonic.SUB, 6: Mnemonic.XOR, 7: Mnemonic.CMP}

_JCC_REL8 = {
    0x74: Mnemonic.JZ, 0x75: Mnemonic.JNZ, 0x7C: Mnemonic.JL, 0x7D: Mnemonic.JGE,
    0x7E: Mnemonic.JLE, 0x7F: Mnemonic.JG, 0x72: Mnemonic.JB, 0x73: Mnemonic.JAE,
}
_JCC_REL32 = {
    0x84: Mnemonic.JZ, 0x85: Mnemonic.JNZ, 0x8C: Mnemonic.JL, 0x8D: Mnemonic.JGE,
    0x8E: Mnemonic.JLE, 0x8F: Mnemonic.JG, 0x82: Mnemonic.JB, 0x83: Mnemonic.JAE,
}

# Opcodes for which a preceding REX prefix is meaningful.  A REX in front of
# anything else (RET, NOP, branches, ...) selects semantics outside the subset
# (e.g. 41 90 is XCHG R8D, EAX) and is rejected rather than silently ignored.
_REX_OK = set(_MODRM_MR) | set(_MODRM_RM) | {
    0x8D, 0xC7, 0x83, 0x81, 0xC1, 0xD1, 0xFF,
    *range(0x50, 0x60), *range(0xB0, 0xC0),
}


class _Truncated(Exception):
    pass


class _Cursor:
    __slots__ = ("image", "pos")

    def __init__(self, image: bytes, pos: int) -> None:
        self.image = image
        self.pos = pos

    def u8(self) -> int:
        if self.pos >= len(self.image):
            raise _Truncated
        b = self.image[self.pos]
        self.pos += 1
        return b

    def s8(self) -> int:
        b = self.u8()
        return b - 256 if b >= 128 else b

    def u32(self) -> int:
        if self.pos + 4 > len(self.image):
            raise _Truncated
        v = int.from_bytes(self.image[self.pos:self.pos + 4], "little")
        self.pos += 4
        return v

    def s32(self) -> int:
        v = self.u32()
        return v - (1 << 32) if v >= (1 << 31) else v


def _parse_modrm(cur: _Cursor, rex: int) -> tuple[int, Operand]:
    """Parse ModRM (+SIB/disp) and return (reg field, rm operand)."""
    modrm = cur.u8()
    mod = modrm >> 6
    reg = ((modrm >> 3) & 7) | ((rex & _REX_R) << 1)
    rm = modrm & 7

    if mod == 3:
        return reg, RegOp(Reg(rm | ((rex & _REX_B) << 3)))

    if rm == 4:  # SIB
        sib = cur.u8()
        scale = 1 << (sib >> 6)
        index_num = ((sib >> 3) & 7) | ((rex & _REX_X) << 2)
        base_num = (sib & 7) | ((rex & _REX_B) << 3)
        index = None if index_num == 4 else Reg(index_num)
        if mod == 0 and (sib & 7) == 5:
            base = None
            disp = cur.s32()
        else:
            base = Reg(base_num)
            disp = cur.s8() if mod == 1 else (cur.s32() if mod == 2 else 0)
        return reg, MemOp(base=base, index=index,
                          scale=scale if index is not None else 1, disp=disp)

    if mod == 0 and rm == 5:  # RIP-relative
        return reg, MemOp(disp=cur.s32(), rip_relative=True)

    base = Reg(rm | ((rex & _REX_B) << 3))
    disp = cur.s8() if mod == 1 else (cur.s32() if mod == 2 else 0)
    return reg, MemOp(base=base, disp=disp)


def _make(offset: int, length: int, mnemonic: Mnemonic, width: int,
          operands: tuple[Operand, ...]) -> DecodedInstruction:
    return DecodedInstruction(
        offset=offset, length=length, mnemonic=mnemonic, width=width,
        operands=operands,
        flags_written=flags_written(mnemonic), flags_read=flags_read(mnemonic),
    )


def decode(image: bytes, offset: int) -> DecodedInstruction | InvalidDecode:
    """Decode the instruction starting at ``offset``; total over all byte values."""
    if not 0 <= offset < len(image):
        raise IndexError(f"offset {offset} outside image of {len(image)} bytes")
    try:
        return _decode(image, offset)
    except _Truncated:
        return InvalidDecode(offset, InvalidReason.TRUNCATED)


def _decode(image: bytes, offset: int) -> DecodedInstruction | InvalidDecode:
    cur = _Cursor(image, offset)

    rex = 0
    has_rex = False
    op = cur.u8()
    if 0x40 <= op <= 0x4F:
        rex = op & 0xF
        has_rex = True
        op = cur.u8()
        if not (0x40 <= op <= 0x4F) and op not in _REX_OK and op != 0x0F:
            return InvalidDecode(offset, InvalidReason.UNSUPPORTED,
                                 f"rex before {op:#04x}")

    def unsupported(detail: str = "") -> InvalidDecode:
        return InvalidDecode(offset, InvalidReason.UNSUPPORTED,
                             detail or f"opcode {op:#04x}")

    def done(mnemonic: Mnemonic, width: int, *operands: Operand) -> DecodedInstruction:
        return _make(offset, cur.pos - offset, mnemonic, width, operands)

    width = 64 if rex & _REX_W else 32

    if op in _MODRM_MR or op in _MODRM_RM:
        mnemonic = _MODRM_MR.get(op) or _MODRM_RM[op]
        reg_field, rm_op = _parse_modrm(cur, rex)
        reg_op = RegOp(Reg(reg_field))
        if op in _MODRM_MR:
            return done(mnemonic, width, rm_op, reg_op)
        return done(mnemonic, width, reg_op, rm_op)

    if op == 0x8D:  # LEA requires a memory source
        reg_field, rm_op = _parse_modrm(cur, rex)
        if not isinstance(rm_op, MemOp):
            return InvalidDecode(offset, InvalidReason.MALFORMED, "lea with register source")
        return done(Mnemonic.LEA, width, RegOp(Reg(reg_field)), rm_op)

    if op in (0x83, 0x81):
        ext, rm_op = _parse_modrm(cur, rex)
        mnemonic = _GROUP1.get(ext)
        if mnemonic is None:
            return unsupported(f"group1 /{ext}")
        imm = cur.s8() if op == 0x83 else cur.s32()
        return done(mnemonic, width, rm_op, ImmOp(imm))

    if op == 0xC7:
        ext, rm_op = _parse_modrm(cur, rex)
        if ext != 0:
            return unsupported(f"c7 /{ext}")
        imm = cur.s32() if width == 64 else cur.u32()
        return done(Mnemonic.MOV, width, rm_op, ImmOp(imm))

    if op in (0xC1, 0xD1):
        ext, rm_op = _parse_modrm(cur, rex)
        if ext != 4:
            return unsupported(f"{op:#04x} /{ext}")
        count = cur.u8() if op == 0xC1 else 1
        return done(Mnemonic.SHL, width, rm_op, ImmOp(count))

    if op == 0xFF:
        ext, rm_op = _parse_modrm(cur, rex)
        if ext == 0:
            return done(Mnemonic.INC, width, rm_op)
        if ext == 1:
            return done(Mnemonic.DEC, width, rm_op)
        if ext in (2, 4):
            if not isinstance(rm_op, RegOp):
                return unsupported("memory-indirect branch")
            mnemonic = Mnemonic.CALL_REG if ext == 2 else Mnemonic.JMP_REG
            return done(mnemonic, 64, rm_op)
        return unsupported(f"ff /{ext}")

    if 0x50 <= op <= 0x57:
        return done(Mnemonic.PUSH, 64, RegOp(Reg((op - 0x50) | ((rex & _REX_B) << 3))))
    if 0x58 <= op <= 0x5F:
        return done(Mnemonic.POP, 64, RegOp(Reg((op - 0x58) | ((rex & _REX_B) << 3))))

    if 0xB0 <= op <= 0xB7:
        num = (op - 0xB0) | ((rex & _REX_B) << 3)
        if not has_rex and num >= 4:
            return unsupported("high-byte register")
        return done(Mnemonic.MOV, 8, RegOp(Reg(num)), ImmOp(cur.u8()))

    if 0xB8 <= op <= 0xBF:
        if rex & _REX_W:
            return unsupported("mov r64, imm64")
        num = (op - 0xB8) | ((rex & _REX_B) << 3)
        return done(Mnemonic.MOV, 32, RegOp(Reg(num)), ImmOp(cur.u32()))

    if op == 0xE8:
        return done(Mnemonic.CALL, 0, ImmOp(cur.s32()))
    if op == 0xE9:
        return done(Mnemonic.JMP, 0, ImmOp(cur.s32()))
    if op == 0xEB:
        return done(Mnemonic.JMP, 0, ImmOp(cur.s8()))
    if op in _JCC_REL8:
        return done(_JCC_REL8[op], 0, ImmOp(cur.s8()))

    if op == 0x0F:
        op2 = cur.u8()
        if op2 in _JCC_REL32 and not has_rex:
            return done(_JCC_REL32[op2], 0, ImmOp(cur.s32()))
        return InvalidDecode(offset, InvalidReason.UNSUPPORTED, f"0f {op2:#04x}")

    if op == 0xC3:
        return done(Mnemonic.RET, 0)
    if op == 0x90:
        return done(Mnemonic.NOP, 0)
    if op == 0xCC:
        return done(Mnemonic.INT3, 0)

    return unsupported()
