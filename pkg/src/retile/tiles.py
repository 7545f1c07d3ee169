"""Tile bank: the fixed register map, tile templates, and the specializer.

Every supported (mnemonic, width, operand-combination) gets a named tile: a
short T64 instruction sequence operating directly on the mapped registers.
Arithmetic and flag updates are separate tiles; memory operands decompose
into an address tile, a load/store tile, and value tiles reading the loaded
scratch register.  The bank is built once, deterministically, independent of
any input binary, by specializing each template over its admissible operand
combinations.

Tile group order per instruction: [EA] [LOAD] [FLAG] [EA again when a store
follows] [ALU] [STORE].  The flag tile runs before the value write so it can
read original operand values; for read-modify-write forms it uses the address
scratch as workspace, which is why the address is recomputed before the store
(source registers are unmodified at that point, so the recompute is exact).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .flags import FlagKind
from .isa import (
    CF,
    DecodedInstruction,
    ImmOp,
    MemOp,
    Mnemonic,
    Reg,
    RegOp,
)
from .memory import IMAGE_BASE
from .t64 import Opcode, TargetInstruction

__all__ = ["RegisterMap", "default_register_map", "TileTemplate", "Tile",
           "TileBank", "templates", "specialize", "build_tile_bank", "get_bank",
           "lookup_tiles", "instantiate", "UnsupportedInstruction", "dump_bank",
           "S_ADDR", "S_VAL", "S_TMP", "T_FLAGS"]

_M64 = (1 << 64) - 1

# scratch and flag registers, disjoint from the register map image
S_TMP = 15   # flag-tile workspace
S_ADDR = 16  # effective address / second flag workspace
S_VAL = 17   # loaded memory value / store source
T_FLAGS = 14


@dataclass(frozen=True)
class RegisterMap:
    """Fixed injective source-to-target register assignment.

    Pinned pairs: RCX->T3, RDX->T2, RAX->T9, flags->T14 (R8->T4 and R9->T5
    continue the argument-position pattern).  Caller-saved sources sit in
    T2..T13 and callee-saved in T19..T25, mirroring the volatility split;
    T0/T1 and T6..T8 stay free for a future hostcall ABI and T26..T28 for
    shadow state.
    """

    gpr_map: dict[Reg, int]
    flags_reg: int
    scratch: tuple[int, ...]

    def inverse(self) -> dict[int, Reg]:
        return {t: r for r, t in self.gpr_map.items()}


_DEFAULT_MAP = RegisterMap(
    gpr_map={
        Reg.RAX: 9, Reg.RCX: 3, Reg.RDX: 2, Reg.RBX: 19,
        Reg.RSP: 21, Reg.RBP: 20, Reg.RSI: 10, Reg.RDI: 11,
        Reg.R8: 4, Reg.R9: 5, Reg.R10: 12, Reg.R11: 13,
        Reg.R12: 22, Reg.R13: 23, Reg.R14: 24, Reg.R15: 25,
    },
    flags_reg=T_FLAGS,
    scratch=(S_TMP, S_ADDR, S_VAL),
)


def default_register_map() -> RegisterMap:
    mapped = set(_DEFAULT_MAP.gpr_map.values())
    assert len(mapped) == 16, "register map must be injective"
    assert _DEFAULT_MAP.flags_reg not in mapped
    assert not (set(_DEFAULT_MAP.scratch) & mapped)
    assert 0 not in mapped, "register 0 is the zero-by-convention register"
    return _DEFAULT_MAP


class UnsupportedInstruction(LookupError):
    pass


@dataclass(frozen=True)
class TileTemplate:
    """One tile family: positional parameters bound per operand combination."""

    stem: str       # specialized names are stem + rendered operand tokens
    family: str     # emitter dispatch key
    width: int
    arity: int
    semantics: str  # value/flag expression over the positional parameters
    mnemonic: Mnemonic | None = None


@dataclass(frozen=True)
class Tile:
    name: str
    template: TileTemplate
    code: tuple[TargetInstruction, ...]
    slots: tuple[tuple[int, str], ...] = ()  # (code index, kind): imm | disp | rip
    reads: frozenset = frozenset()
    writes: frozenset = frozenset()


def _infer_access(code) -> tuple[frozenset, frozenset]:
    reads: set[int] = set()
    writes: set[int] = set()
    for ins in code:
        op = ins.opcode
        if op == Opcode.LDI:
            writes.add(ins.rd)
        elif op in (Opcode.MOVR, Opcode.NOT, Opcode.ADDI):
            reads.add(ins.rn)
            writes.add(ins.rd)
        elif op in (Opcode.ADD, Opcode.SUB, Opcode.AND, Opcode.OR,
                    Opcode.XOR, Opcode.SHL, Opcode.SHR):
            reads.update((ins.rn, ins.rm))
            writes.add(ins.rd)
        elif op in (Opcode.LOAD1, Opcode.LOAD4, Opcode.LOAD8):
            reads.add(ins.rn)
            writes.add(ins.rd)
        elif op in (Opcode.STORE1, Opcode.STORE4, Opcode.STORE8):
            reads.update((ins.rd, ins.rn))
        else:
            raise AssertionError(f"non-tile opcode in tile: {ins}")
    reads.discard(0)
    return frozenset(reads), frozenset(writes)


class _Emit:
    """Small builder for tile code with slot tracking."""

    def __init__(self) -> None:
        self.code: list[TargetInstruction] = []
        self.slots: list[tuple[int, str]] = []

    def ins(self, opcode: Opcode, rd: int = 0, rn: int = 0, rm: int = 0,
            imm: int = 0, slot: str | None = None) -> None:
        if slot is not None:
            self.slots.append((len(self.code), slot))
        self.code.append(TargetInstruction(opcode, rd, rn, rm, imm & _M64))

    # operand2 descriptors: (rm, imm) or (rm, imm, slot-kind)
    def alu(self, opcode: Opcode, rd: int, rn: int, op2) -> None:
        slot = op2[2] if len(op2) > 2 else None
        self.ins(opcode, rd, rn, op2[0], op2[1], slot)


def _reg_op2(reg: int):
    return (reg, 0)


def _const_op2(value: int):
    return (0, value)


_IMM_SLOT = (0, 0, "imm")
_WIDTH_MASK = {8: 0xFF, 32: 0xFFFFFFFF, 64: _M64}

_ALU_OPCODE = {
    Mnemonic.ADD: Opcode.ADD, Mnemonic.SUB: Opcode.SUB, Mnemonic.AND: Opcode.AND,
    Mnemonic.OR: Opcode.OR, Mnemonic.XOR: Opcode.XOR,
    Mnemonic.CMP: Opcode.SUB, Mnemonic.TEST: Opcode.AND,
}

_FLAG_KIND = {
    Mnemonic.ADD: FlagKind.ADD, Mnemonic.SUB: FlagKind.SUB,
    Mnemonic.CMP: FlagKind.SUB, Mnemonic.AND: FlagKind.LOGIC,
    Mnemonic.OR: FlagKind.LOGIC, Mnemonic.XOR: FlagKind.LOGIC,
    Mnemonic.TEST: FlagKind.LOGIC, Mnemonic.INC: FlagKind.INC,
    Mnemonic.DEC: FlagKind.DEC, Mnemonic.SHL: FlagKind.SHL,
}


# ---------------------------------------------------------------------------
# flag-tile emission


def _emit_result(e: _Emit, dest: int, kind: FlagKind, width: int,
                 a_rn: int, b_op2, logic_op, count: int) -> None:
    """dest := width-masked result, recomputed from readable inputs."""
    if kind in (FlagKind.ADD, FlagKind.INC):
        e.alu(Opcode.ADD, dest, a_rn, b_op2)
    elif kind in (FlagKind.SUB, FlagKind.DEC):
        e.alu(Opcode.SUB, dest, a_rn, b_op2)
    elif kind is FlagKind.LOGIC:
        e.alu(logic_op, dest, a_rn, b_op2)
    elif kind is FlagKind.SHL:
        e.alu(Opcode.SHL, dest, a_rn, _const_op2(count))
    if width != 64:
        e.alu(Opcode.AND, dest, dest, _const_op2(_WIDTH_MASK[width]))


def _flag_tile_code(kind: FlagKind, width: int, a_rn: int, b_op2,
                    logic_op=None, count: int = 0) -> _Emit:
    """Pack the six flag values into T14.

    Inputs stay readable throughout: ``a_rn`` a register, ``b_op2`` an
    operand2 descriptor.  Workspace is S_TMP and S_ADDR; the flags register
    accumulates bit by bit, so INC/DEC can keep the carry they do not write.
    """
    e = _Emit()
    w1, w2 = S_TMP, S_ADDR
    f = T_FLAGS
    sign = width - 1

    writes_cf = kind not in (FlagKind.INC, FlagKind.DEC)
    if writes_cf:
        e.ins(Opcode.LDI, f, imm=0)
    else:
        e.alu(Opcode.AND, f, f, _const_op2(CF))  # preserve carry

    def result_into(dest: int) -> None:
        _emit_result(e, dest, kind, width, a_rn, b_op2, logic_op, count)

    # PF: even parity of the low eight result bits (bit 2)
    result_into(w1)
    e.alu(Opcode.AND, w1, w1, _const_op2(0xFF))
    for shift in (4, 2, 1):
        e.alu(Opcode.SHR, w2, w1, _const_op2(shift))
        e.alu(Opcode.XOR, w1, w1, _reg_op2(w2))
    e.ins(Opcode.NOT, w1, w1)
    e.alu(Opcode.AND, w1, w1, _const_op2(1))
    e.alu(Opcode.SHL, w1, w1, _const_op2(2))
    e.alu(Opcode.OR, f, f, _reg_op2(w1))

    # ZF: result == 0 (bit 6)
    result_into(w1)
    e.alu(Opcode.SUB, w2, 0, _reg_op2(w1))
    e.alu(Opcode.OR, w2, w2, _reg_op2(w1))
    e.alu(Opcode.SHR, w2, w2, _const_op2(63))
    e.alu(Opcode.XOR, w2, w2, _const_op2(1))
    e.alu(Opcode.SHL, w2, w2, _const_op2(6))
    e.alu(Opcode.OR, f, f, _reg_op2(w2))

    # SF: top result bit at the operand width (bit 7)
    result_into(w1)
    e.alu(Opcode.SHR, w1, w1, _const_op2(sign))
    e.alu(Opcode.SHL, w1, w1, _const_op2(7))
    e.alu(Opcode.OR, f, f, _reg_op2(w1))

    if kind in (FlagKind.ADD, FlagKind.INC, FlagKind.SUB, FlagKind.DEC):
        add_like = kind in (FlagKind.ADD, FlagKind.INC)
        arith = Opcode.ADD if add_like else Opcode.SUB
        # AF: carry/borrow into bit 4 = bit 4 of a^b^result
        e.alu(Opcode.XOR, w1, a_rn, b_op2)
        e.alu(arith, w2, a_rn, b_op2)
        e.alu(Opcode.XOR, w1, w1, _reg_op2(w2))
        e.alu(Opcode.AND, w1, w1, _const_op2(0x10))
        e.alu(Opcode.OR, f, f, _reg_op2(w1))

        if writes_cf:
            # CF at bit 0: carry-out a&b | (a^b)&~r; borrow-out ~a&b | ~(a^b)&r
            e.alu(Opcode.XOR, w1, a_rn, b_op2)
            if add_like:
                e.alu(Opcode.ADD, w2, a_rn, b_op2)
                e.ins(Opcode.NOT, w2, w2)
            else:
                e.ins(Opcode.NOT, w1, w1)
                e.alu(Opcode.SUB, w2, a_rn, b_op2)
            e.alu(Opcode.AND, w1, w1, _reg_op2(w2))
            if add_like:
                e.alu(Opcode.AND, w2, a_rn, b_op2)
            else:
                e.ins(Opcode.NOT, w2, a_rn)
                e.alu(Opcode.AND, w2, w2, b_op2)
            e.alu(Opcode.OR, w1, w1, _reg_op2(w2))
            e.alu(Opcode.SHR, w1, w1, _const_op2(sign))
            e.alu(Opcode.AND, w1, w1, _const_op2(1))
            e.alu(Opcode.OR, f, f, _reg_op2(w1))

        # OF (bit 11): operand signs admit overflow and the result sign flipped
        e.alu(Opcode.XOR, w1, a_rn, b_op2)
        if add_like:
            e.ins(Opcode.NOT, w1, w1)
        e.alu(arith, w2, a_rn, b_op2)
        e.alu(Opcode.XOR, w2, w2, _reg_op2(a_rn))
        e.alu(Opcode.AND, w1, w1, _reg_op2(w2))
        e.alu(Opcode.SHR, w1, w1, _const_op2(sign))
        e.alu(Opcode.AND, w1, w1, _const_op2(1))
        e.alu(Opcode.SHL, w1, w1, _const_op2(11))
        e.alu(Opcode.OR, f, f, _reg_op2(w1))

    elif kind is FlagKind.SHL:
        if count:
            # CF (bit 0): last bit shifted out = bit (width-count) of a
            e.alu(Opcode.SHR, w1, a_rn, _const_op2(width - count))
            e.alu(Opcode.AND, w1, w1, _const_op2(1))
            e.alu(Opcode.OR, f, f, _reg_op2(w1))
        if count == 1:
            # OF (bit 11): carry-out xor new sign = top two bits of a differ
            e.alu(Opcode.SHR, w1, a_rn, _const_op2(width - 1))
            e.alu(Opcode.SHR, w2, a_rn, _const_op2(width - 2))
            e.alu(Opcode.XOR, w1, w1, _reg_op2(w2))
            e.alu(Opcode.AND, w1, w1, _const_op2(1))
            e.alu(Opcode.SHL, w1, w1, _const_op2(11))
            e.alu(Opcode.OR, f, f, _reg_op2(w1))

    # LOGIC pins CF/OF/AF to zero: nothing to accumulate.
    return e


# ---------------------------------------------------------------------------
# value-tile emission


def _value_tile_code(mnemonic: Mnemonic, width: int, dst: int, src_op2,
                     count: int = 0) -> _Emit:
    """dst := result at the given width (zero-extend 32, merge 8)."""
    e = _Emit()
    if width == 8:
        if mnemonic is Mnemonic.MOV:
            e.alu(Opcode.AND, dst, dst, _const_op2(~0xFF & _M64))
            e.alu(Opcode.OR, dst, dst, src_op2)
            return e
        w1 = S_TMP
        e.alu(_ALU_OPCODE[mnemonic], w1, dst, src_op2)
        e.alu(Opcode.AND, w1, w1, _const_op2(0xFF))
        e.alu(Opcode.AND, dst, dst, _const_op2(~0xFF & _M64))
        e.alu(Opcode.OR, dst, dst, _reg_op2(w1))
        return e

    if mnemonic is Mnemonic.MOV:
        if src_op2[0] == 0:  # immediate source (already width-correct)
            e.ins(Opcode.LDI, dst, imm=src_op2[1],
                  slot=src_op2[2] if len(src_op2) > 2 else None)
        elif width == 64:
            e.ins(Opcode.MOVR, dst, src_op2[0])
        else:
            e.alu(Opcode.AND, dst, src_op2[0], _const_op2(0xFFFFFFFF))
        return e
    if mnemonic in (Mnemonic.INC, Mnemonic.DEC):
        e.ins(Opcode.ADDI, dst, dst, imm=1 if mnemonic is Mnemonic.INC else -1)
    elif mnemonic is Mnemonic.SHL:
        e.alu(Opcode.SHL, dst, dst, _const_op2(count))
    else:
        e.alu(_ALU_OPCODE[mnemonic], dst, dst, src_op2)
    if width == 32:
        e.alu(Opcode.AND, dst, dst, _const_op2(0xFFFFFFFF))
    return e


# ---------------------------------------------------------------------------
# templates and the specializer


def _alu_semantics(mnemonic: Mnemonic, width: int) -> str:
    op = mnemonic.value
    if width == 8:
        return f"R1 := ((R1 {op} R2) & 0xFF) | (R1 & ~0xFF)"
    if width == 32:
        return f"R1 := (R1 {op} R2) & 0xFFFFFFFF"
    return f"R1 := R1 {op} R2"


def templates() -> dict[str, TileTemplate]:
    """Every tile template, keyed by stem; deterministic."""
    out: dict[str, TileTemplate] = {}

    def add(stem: str, family: str, width: int, arity: int, semantics: str,
            mnemonic: Mnemonic | None = None) -> None:
        out[stem] = TileTemplate(stem=stem, family=family, width=width,
                                 arity=arity, semantics=semantics, mnemonic=mnemonic)

    widths_by_mnem = {
        Mnemonic.ADD: (8, 32, 64), Mnemonic.SUB: (8, 32, 64),
        Mnemonic.AND: (32, 64), Mnemonic.OR: (32, 64), Mnemonic.XOR: (32, 64),
    }
    for mnem, widths in widths_by_mnem.items():
        for width in widths:
            add(f"{mnem.name}{width}", "alu_value", width, 3,
                _alu_semantics(mnem, width), mnem)
            add(f"{mnem.name}{width}F", "alu_flags", width, 2,
                f"T14 := flags<{_FLAG_KIND[mnem].value},{width}>(R1, R2)", mnem)
    for mnem in (Mnemonic.CMP, Mnemonic.TEST):
        for width in (32, 64):
            add(f"{mnem.name}{width}F", "alu_flags", width, 2,
                f"T14 := flags<{_FLAG_KIND[mnem].value},{width}>(R1, R2)", mnem)
    for width in (8, 32, 64):
        srcs = "IMM" if width == 8 else "R2"
        add(f"MOV{width}", "mov_value", width, 2,
            f"R1 := mov<{width}>({srcs})", Mnemonic.MOV)
    for mnem in (Mnemonic.INC, Mnemonic.DEC):
        for width in (32, 64):
            delta = "+ 1" if mnem is Mnemonic.INC else "- 1"
            add(f"{mnem.name}{width}", "step_value", width, 1,
                f"R1 := (R1 {delta}) at width {width}", mnem)
            add(f"{mnem.name}{width}F", "step_flags", width, 1,
                f"T14 := flags<{_FLAG_KIND[mnem].value},{width}>(R1, 1); CF kept", mnem)
    for width in (32, 64):
        add(f"SHL{width}", "shl_value", width, 2,
            f"R1 := (R1 << C) at width {width}", Mnemonic.SHL)
        add(f"SHL{width}F", "shl_flags", width, 2,
            f"T14 := flags<shl,{width}>(R1, C)", Mnemonic.SHL)
        add(f"LEA{width}", "lea", width, 1, f"R1 := S0 at width {width}")
        add(f"LOAD{width}", "load", width, 0, "S1 := [S0] zero-extended")
        add(f"STORE{width}", "store", width, 0, f"[S0] := S1 low {width // 8} bytes")
    add("PUSH", "push", 64, 1, "[rsp - 8] := R1; rsp := rsp - 8")
    add("POP", "pop", 64, 1, "R1 := [rsp]; rsp := rsp + 8")
    add("EA_B", "ea_b", 64, 1, "S0 := R1 + disp")
    add("EA_BIS", "ea_bis", 64, 3, "S0 := R1 + R2*scale + disp")
    add("EA_IS", "ea_is", 64, 2, "S0 := R1*scale + disp")
    add("EA_ABS", "ea_abs", 64, 0, "S0 := disp")
    add("EA_RIP", "ea_rip", 64, 0, "S0 := end-of-instruction + disp")
    return out


def _token(operand, family: str) -> str:
    if isinstance(operand, Reg):
        return operand.name
    if isinstance(operand, int):
        return f"C{operand}" if family.startswith("shl") else str(operand)
    return str(operand)


def _operand2_for(operand, rmap: RegisterMap):
    """b-side operand2 descriptor: register, loaded scratch, or imm slot."""
    if isinstance(operand, Reg):
        return _reg_op2(rmap.gpr_map[operand])
    if operand == "M":
        return _reg_op2(S_VAL)
    if operand == "IMM":
        return _IMM_SLOT
    raise ValueError(f"bad value operand {operand!r}")


def _place_for(operand, rmap: RegisterMap) -> int:
    """Register holding a destination-side operand (mapped or loaded scratch)."""
    if isinstance(operand, Reg):
        return rmap.gpr_map[operand]
    if operand == "M":
        return S_VAL
    raise ValueError(f"bad register operand {operand!r}")


def specialize(template: TileTemplate, operands: tuple, rmap: RegisterMap) -> Tile:
    """Bind a template's positional parameters to concrete operands.

    The tile name is synthesized mechanically from the template stem and the
    operand tokens; emitted code computes exactly the template semantics over
    the mapped registers.
    """
    if len(operands) != template.arity:
        raise ValueError(
            f"{template.stem} expects {template.arity} operands, got {len(operands)}")
    family = template.family
    width = template.width
    mnem = template.mnemonic
    name = "_".join([template.stem] + [_token(op, family) for op in operands])

    if family == "alu_value":
        dst, dst2, src = operands
        if dst != dst2:
            raise ValueError("destination must repeat as the first source")
        e = _value_tile_code(mnem, width, _place_for(dst, rmap),
                             _operand2_for(src, rmap))
    elif family == "alu_flags":
        a, b = operands
        logic = _ALU_OPCODE[mnem] if _FLAG_KIND[mnem] is FlagKind.LOGIC else None
        e = _flag_tile_code(_FLAG_KIND[mnem], width, _place_for(a, rmap),
                            _operand2_for(b, rmap), logic_op=logic)
    elif family == "mov_value":
        dst, src = operands
        if dst == "M":
            e = _Emit()
            if src == "IMM":
                e.ins(Opcode.LDI, S_VAL, imm=0, slot="imm")
            else:
                e.ins(Opcode.MOVR, S_VAL, rmap.gpr_map[src])
        else:
            e = _value_tile_code(Mnemonic.MOV, width, _place_for(dst, rmap),
                                 _operand2_for(src, rmap))
    elif family == "step_value":
        e = _value_tile_code(mnem, width, _place_for(operands[0], rmap), None)
    elif family == "step_flags":
        e = _flag_tile_code(_FLAG_KIND[mnem], width,
                            _place_for(operands[0], rmap), _const_op2(1))
    elif family == "shl_value":
        dst, count = operands
        e = _value_tile_code(Mnemonic.SHL, width, _place_for(dst, rmap),
                             None, count)
    elif family == "shl_flags":
        a, count = operands
        e = _flag_tile_code(FlagKind.SHL, width, _place_for(a, rmap),
                            _const_op2(count), count=count)
    elif family == "lea":
        e = _Emit()
        dst = rmap.gpr_map[operands[0]]
        if width == 64:
            e.ins(Opcode.MOVR, dst, S_ADDR)
        else:
            e.alu(Opcode.AND, dst, S_ADDR, _const_op2(0xFFFFFFFF))
    elif family == "push":
        reg = rmap.gpr_map[operands[0]]
        rsp = rmap.gpr_map[Reg.RSP]
        e = _Emit()
        e.ins(Opcode.STORE8, reg, rsp, imm=-8)
        e.ins(Opcode.ADDI, rsp, rsp, imm=-8)
    elif family == "pop":
        reg = rmap.gpr_map[operands[0]]
        rsp = rmap.gpr_map[Reg.RSP]
        e = _Emit()
        e.ins(Opcode.ADDI, rsp, rsp, imm=8)
        e.ins(Opcode.LOAD8, reg, rsp, imm=-8)
    elif family == "ea_b":
        e = _Emit()
        e.ins(Opcode.ADDI, S_ADDR, rmap.gpr_map[operands[0]], imm=0, slot="disp")
    elif family == "ea_bis":
        base, index, scale = operands
        e = _Emit()
        e.alu(Opcode.SHL, S_ADDR, rmap.gpr_map[index],
              _const_op2(scale.bit_length() - 1))
        e.alu(Opcode.ADD, S_ADDR, S_ADDR, _reg_op2(rmap.gpr_map[base]))
        e.ins(Opcode.ADDI, S_ADDR, S_ADDR, imm=0, slot="disp")
    elif family == "ea_is":
        index, scale = operands
        e = _Emit()
        e.alu(Opcode.SHL, S_ADDR, rmap.gpr_map[index],
              _const_op2(scale.bit_length() - 1))
        e.ins(Opcode.ADDI, S_ADDR, S_ADDR, imm=0, slot="disp")
    elif family == "ea_abs":
        e = _Emit()
        e.ins(Opcode.LDI, S_ADDR, imm=0, slot="disp")
    elif family == "ea_rip":
        e = _Emit()
        e.ins(Opcode.LDI, S_ADDR, imm=0, slot="rip")
    elif family == "load":
        e = _Emit()
        e.ins(Opcode.LOAD8 if width == 64 else Opcode.LOAD4, S_VAL, S_ADDR)
    elif family == "store":
        e = _Emit()
        e.ins(Opcode.STORE8 if width == 64 else Opcode.STORE4, S_VAL, S_ADDR)
    else:
        raise AssertionError(f"unknown family {family}")

    code = tuple(e.code)
    reads, writes = _infer_access(code)
    return Tile(name=name, template=template, code=code, slots=tuple(e.slots),
                reads=reads, writes=writes)


# ---------------------------------------------------------------------------
# bank construction


class TileBank:
    def __init__(self, rmap: RegisterMap) -> None:
        self.rmap = rmap
        self.tiles: dict[str, Tile] = {}

    def add(self, tile: Tile) -> None:
        assert tile.name not in self.tiles, f"duplicate tile {tile.name}"
        self.tiles[tile.name] = tile

    def __contains__(self, name: str) -> bool:
        return name in self.tiles

    def __getitem__(self, name: str) -> Tile:
        return self.tiles[name]

    def __len__(self) -> int:
        return len(self.tiles)


def build_tile_bank(rmap: RegisterMap | None = None) -> TileBank:
    """Specialize every template over its admissible operand combinations."""
    rmap = rmap or default_register_map()
    bank = TileBank(rmap)
    tmpl = templates()
    regs = list(Reg)

    def emit(stem: str, *operands) -> None:
        bank.add(specialize(tmpl[stem], operands, rmap))

    for mnem in (Mnemonic.ADD, Mnemonic.SUB, Mnemonic.AND, Mnemonic.OR, Mnemonic.XOR):
        widths = (8, 32, 64) if mnem in (Mnemonic.ADD, Mnemonic.SUB) else (32, 64)
        for width in widths:
            mw = f"{mnem.name}{width}"
            if width == 8:  # register pairs only (decoder emits none; kept per template)
                for dst in regs:
                    for src in regs:
                        emit(mw, dst, dst, src)
                        emit(f"{mw}F", dst, src)
                continue
            for dst in regs:
                for src in regs:
                    emit(mw, dst, dst, src)
                    emit(f"{mw}F", dst, src)
                emit(mw, dst, dst, "IMM")
                emit(f"{mw}F", dst, "IMM")
                emit(mw, dst, dst, "M")
                emit(f"{mw}F", dst, "M")
                emit(mw, "M", "M", dst)
                emit(f"{mw}F", "M", dst)
            emit(mw, "M", "M", "IMM")
            emit(f"{mw}F", "M", "IMM")

    for width in (32, 64):
        for a in regs:
            for b in regs:
                emit(f"CMP{width}F", a, b)
                emit(f"TEST{width}F", a, b)
            emit(f"CMP{width}F", a, "IMM")
            emit(f"CMP{width}F", a, "M")
            emit(f"CMP{width}F", "M", a)
            emit(f"TEST{width}F", "M", a)
        emit(f"CMP{width}F", "M", "IMM")

        for dst in regs:
            for src in regs:
                emit(f"MOV{width}", dst, src)
            emit(f"MOV{width}", dst, "IMM")
            emit(f"MOV{width}", dst, "M")
            emit(f"MOV{width}", "M", dst)
        emit(f"MOV{width}", "M", "IMM")

        for mnem in (Mnemonic.INC, Mnemonic.DEC):
            for dst in regs:
                emit(f"{mnem.name}{width}", dst)
                emit(f"{mnem.name}{width}F", dst)
            emit(f"{mnem.name}{width}", "M")
            emit(f"{mnem.name}{width}F", "M")

        for count in range(width):
            for dst in regs:
                emit(f"SHL{width}", dst, count)
                emit(f"SHL{width}F", dst, count)
            emit(f"SHL{width}", "M", count)
            emit(f"SHL{width}F", "M", count)

        for dst in regs:
            emit(f"LEA{width}", dst)
        emit(f"LOAD{width}")
        emit(f"STORE{width}")

    for reg in regs:
        emit("MOV8", reg, "IMM")
        emit("PUSH", reg)
        emit("POP", reg)

    for base in regs:
        emit("EA_B", base)
        for index in regs:
            if index is Reg.RSP:
                continue
            for scale in (1, 2, 4, 8):
                emit("EA_BIS", base, index, scale)
    for index in regs:
        if index is Reg.RSP:
            continue
        for scale in (1, 2, 4, 8):
            emit("EA_IS", index, scale)
    emit("EA_ABS")
    emit("EA_RIP")
    return bank


_BANK_CACHE: TileBank | None = None


def get_bank() -> TileBank:
    """Process-wide bank singleton (the bank is input-independent)."""
    global _BANK_CACHE
    if _BANK_CACHE is None:
        _BANK_CACHE = build_tile_bank()
    return _BANK_CACHE


# ---------------------------------------------------------------------------
# tile selection


def _ea_pick(mem: MemOp) -> str:
    if mem.rip_relative:
        return "EA_RIP"
    if mem.base is None and mem.index is None:
        return "EA_ABS"
    if mem.index is None:
        return f"EA_B_{mem.base.name}"
    if mem.base is None:
        return f"EA_IS_{mem.index.name}_{mem.scale}"
    return f"EA_BIS_{mem.base.name}_{mem.index.name}_{mem.scale}"


def _operand_token(op) -> str:
    if isinstance(op, RegOp):
        return op.reg.name
    if isinstance(op, ImmOp):
        return "IMM"
    return "M"


def lookup_tiles(bank: TileBank, instr: DecodedInstruction, live: int) -> list[Tile]:
    """Ordered tile group for one instruction (bank-lowerable mnemonics only).

    Raises UnsupportedInstruction for control transfers and traps, which are
    lowered from hand-crafted templates instead.
    """
    m = instr.mnemonic
    width = instr.width

    def tile(name: str) -> Tile:
        try:
            return bank[name]
        except KeyError:
            raise UnsupportedInstruction(name) from None

    if m is Mnemonic.NOP:
        return []
    if m in (Mnemonic.PUSH, Mnemonic.POP):
        return [tile(f"{m.name}_{instr.operands[0].reg.name}")]

    group: list[Tile] = []
    mem = instr.memory_operand()
    needs_flags = bool(instr.flags_written & live)

    if m is Mnemonic.LEA:
        dst, src = instr.operands
        return [tile(_ea_pick(src)), tile(f"LEA{width}_{dst.reg.name}")]

    if m is Mnemonic.MOV:
        dst, src = instr.operands
        if mem is None:
            return [tile(f"MOV{width}_{dst.reg.name}_{_operand_token(src)}")]
        if isinstance(dst, MemOp):
            return [tile(_ea_pick(mem)),
                    tile(f"MOV{width}_M_{_operand_token(src)}"),
                    tile(f"STORE{width}")]
        return [tile(_ea_pick(mem)), tile(f"LOAD{width}"),
                tile(f"MOV{width}_{dst.reg.name}_M")]

    if m in (Mnemonic.CMP, Mnemonic.TEST):
        a, b = instr.operands
        if mem is not None:
            # the load happens even when the flags are dead: it can fault
            group += [tile(_ea_pick(mem)), tile(f"LOAD{width}")]
        if needs_flags:
            group.append(tile(f"{m.name}{width}F_{_operand_token(a)}_{_operand_token(b)}"))
        return group

    if m in (Mnemonic.ADD, Mnemonic.SUB, Mnemonic.AND, Mnemonic.OR, Mnemonic.XOR,
             Mnemonic.INC, Mnemonic.DEC, Mnemonic.SHL):
        if m in (Mnemonic.INC, Mnemonic.DEC):
            dst, arith_suffix, flag_b = instr.operands[0], "", ""
        elif m is Mnemonic.SHL:
            count = instr.operands[1].value & (63 if width == 64 else 31)
            dst, arith_suffix, flag_b = instr.operands[0], f"_C{count}", f"_C{count}"
        else:
            dst, src = instr.operands
            token = _operand_token(src)
            arith_suffix, flag_b = f"_{token}", f"_{token}"
        dst_token = _operand_token(dst)
        rmw = isinstance(dst, MemOp)

        if mem is not None:
            group += [tile(_ea_pick(mem)), tile(f"LOAD{width}")]
        if needs_flags:
            group.append(tile(f"{m.name}{width}F_{dst_token}{flag_b}"))
            if rmw:
                group.append(tile(_ea_pick(mem)))  # flag workspace clobbered S_ADDR
        if m in (Mnemonic.INC, Mnemonic.DEC):
            group.append(tile(f"{m.name}{width}_{dst_token}"))
        elif m is Mnemonic.SHL:
            group.append(tile(f"SHL{width}_{dst_token}{arith_suffix}"))
        else:
            group.append(tile(f"{m.name}{width}_{dst_token}_{dst_token}{arith_suffix}"))
        if rmw:
            group.append(tile(f"STORE{width}"))
        return group

    raise UnsupportedInstruction(m.value)


def instantiate(tile: Tile, instr: DecodedInstruction) -> list[TargetInstruction]:
    """Resolve a tile's emission slots against a concrete instruction."""
    if not tile.slots:
        return list(tile.code)
    code = list(tile.code)
    for index, kind in tile.slots:
        if kind == "imm":
            imm_op = next(op for op in instr.operands if isinstance(op, ImmOp))
            value = imm_op.value & _M64
        elif kind == "disp":
            value = instr.memory_operand().disp & _M64
        elif kind == "rip":
            mem = instr.memory_operand()
            value = (IMAGE_BASE + instr.offset + instr.length + mem.disp) & _M64
        else:
            raise AssertionError(kind)
        code[index] = replace(code[index], imm=value)
    return code


def dump_bank(bank: TileBank) -> str:
    """Every tile with its listing, stably ordered, for golden-file checks."""
    lines = []
    for name in sorted(bank.tiles):
        tile = bank.tiles[name]
        lines.append(f"== {name} (width {tile.template.width})")
        lines.append(f"   ; {tile.template.semantics}")
        slot_by_index = dict(tile.slots)
        for i, ins in enumerate(tile.code):
            mark = f"  <{slot_by_index[i]}>" if i in slot_by_index else ""
            lines.append(f"   {ins}{mark}")
    return "\n".join(lines) + "\n"
