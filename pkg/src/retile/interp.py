"""Reference interpreter for the source ISA: the correctness oracle.

Executes decoded instructions directly over a MachineState.  Every pinned
semantic choice (partial-register writes, flag updates, hostcall protocol,
trap ordering) lives here and in the tile bank; differential tests hold the
two routes equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .decoder import decode
from .flags import compute_flags, kind_for, shl_carry_out
from .isa import (
    DecodedInstruction,
    ImmOp,
    InvalidDecode,
    MemOp,
    Mnemonic,
    Reg,
    RegOp,
)
from .memory import (
    HOSTCALL_EXIT,
    HOSTCALL_SLOTS,
    HOSTCALL_WRITE_CHAR,
    HOSTCALL_WRITE_U64,
    IMAGE_BASE,
    INITIAL_RSP,
    Memory,
)
from .result import (
    ExecutionResult,
    RunStatus,
    TrapError,
    TrapKind,
    fuel_exhausted,
    halted,
    trapped,
)

__all__ = ["MachineState", "step", "run_source", "execute_instruction"]

_M64 = (1 << 64) - 1


@dataclass
class MachineState:
    memory: Memory
    gpr: list[int] = field(default_factory=lambda: [0] * 16)
    flags: int = 0
    rip: int = IMAGE_BASE
    output: bytearray = field(default_factory=bytearray)

    @classmethod
    def boot(cls, image: bytes, entry: int, regs: dict[Reg, int] | None = None) -> "MachineState":
        state = cls(memory=Memory(image), rip=IMAGE_BASE + entry)
        state.gpr[Reg.RSP] = INITIAL_RSP
        for reg, value in (regs or {}).items():
            state.gpr[reg] = value & _M64
        return state


def _width_mask(width: int) -> int:
    return _M64 if width == 64 else (1 << width) - 1


def _write_reg(state: MachineState, reg: Reg, width: int, value: int) -> None:
    if width == 64:
        state.gpr[reg] = value & _M64
    elif width == 32:
        state.gpr[reg] = value & 0xFFFFFFFF  # 32-bit writes zero-extend
    else:  # 8-bit writes leave bits 8..63 alone
        state.gpr[reg] = (state.gpr[reg] & ~0xFF) | (value & 0xFF)


def _effective_address(state: MachineState, op: MemOp, instr: DecodedInstruction) -> int:
    if op.rip_relative:
        return (IMAGE_BASE + instr.offset + instr.length + op.disp) & _M64
    addr = op.disp
    if op.base is not None:
        addr += state.gpr[op.base]
    if op.index is not None:
        addr += state.gpr[op.index] * op.scale
    return addr & _M64


def _operand_value(state: MachineState, op, width: int, instr: DecodedInstruction) -> int:
    if isinstance(op, RegOp):
        return state.gpr[op.reg]
    if isinstance(op, ImmOp):
        return op.value & _M64
    return state.memory.read(_effective_address(state, op, instr), width // 8)


def _apply_flags(state: MachineState, values: dict[int, bool | None]) -> None:
    f = state.flags
    for bit, val in values.items():
        if val is None:
            continue
        f = (f | bit) if val else (f & ~bit)
    state.flags = f


def _write_dst(state: MachineState, dst, width: int, value: int,
               instr: DecodedInstruction) -> None:
    if isinstance(dst, RegOp):
        _write_reg(state, dst.reg, width, value)
    else:
        state.memory.write(_effective_address(state, dst, instr), width // 8, value)


def _push(state: MachineState, value: int) -> None:
    addr = (state.gpr[Reg.RSP] - 8) & _M64
    state.memory.write(addr, 8, value)
    state.gpr[Reg.RSP] = addr


def _pop(state: MachineState) -> int:
    addr = state.gpr[Reg.RSP]
    value = state.memory.read(addr, 8)
    state.gpr[Reg.RSP] = (addr + 8) & _M64
    return value


_ALU = {
    Mnemonic.ADD: lambda a, b: a + b,
    Mnemonic.SUB: lambda a, b: a - b,
    Mnemonic.CMP: lambda a, b: a - b,
    Mnemonic.AND: lambda a, b: a & b,
    Mnemonic.OR: lambda a, b: a | b,
    Mnemonic.XOR: lambda a, b: a ^ b,
    Mnemonic.TEST: lambda a, b: a & b,
}

_COND = {
    Mnemonic.JZ: lambda f: f.zf,
    Mnemonic.JNZ: lambda f: not f.zf,
    Mnemonic.JL: lambda f: f.sf != f.of,
    Mnemonic.JGE: lambda f: f.sf == f.of,
    Mnemonic.JLE: lambda f: f.zf or f.sf != f.of,
    Mnemonic.JG: lambda f: not f.zf and f.sf == f.of,
    Mnemonic.JB: lambda f: f.cf,
    Mnemonic.JAE: lambda f: not f.cf,
}


class _FlagView:
    __slots__ = ("zf", "sf", "of", "cf")

    def __init__(self, packed: int) -> None:
        self.cf = bool(packed & 0x1)
        self.zf = bool(packed & 0x40)
        self.sf = bool(packed & 0x80)
        self.of = bool(packed & 0x800)


def execute_instruction(state: MachineState, instr: DecodedInstruction) -> RunStatus | None:
    """Apply one decoded instruction's semantics.  Returns a status on halt/trap.

    Also usable with synthetic instructions (per-tile testing): ``state.rip``
    must equal ``IMAGE_BASE + instr.offset`` on entry.
    """
    mnemonic = instr.mnemonic
    width = instr.width
    next_rip = state.rip + instr.length

    op = _ALU.get(mnemonic)
    if op is not None:
        dst, src = instr.operands
        a = _operand_value(state, dst, width, instr)
        b = _operand_value(state, src, width, instr)
        result = op(a, b)
        _apply_flags(state, compute_flags(kind_for(mnemonic), width, a, b, result))
        if mnemonic is not Mnemonic.CMP and mnemonic is not Mnemonic.TEST:
            _write_dst(state, dst, width, result & _M64, instr)
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.MOV:
        dst, src = instr.operands
        value = _operand_value(state, src, width, instr)
        _write_dst(state, dst, width, value, instr)
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.LEA:
        dst, src = instr.operands
        _write_reg(state, dst.reg, width, _effective_address(state, src, instr))
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.INC or mnemonic is Mnemonic.DEC:
        (dst,) = instr.operands
        a = _operand_value(state, dst, width, instr)
        result = a + 1 if mnemonic is Mnemonic.INC else a - 1
        _apply_flags(state, compute_flags(kind_for(mnemonic), width, a, 1, result))
        _write_dst(state, dst, width, result & _M64, instr)
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.SHL:
        dst, count_op = instr.operands
        a = _operand_value(state, dst, width, instr)
        count = count_op.value & (63 if width == 64 else 31)
        result = (a & _width_mask(width)) << count
        _apply_flags(state, compute_flags(
            kind_for(mnemonic), width, a, count, result,
            carry_out=shl_carry_out(width, a, count)))
        _write_dst(state, dst, width, result & _M64, instr)
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.PUSH:
        _push(state, state.gpr[instr.operands[0].reg])
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.POP:
        value = _pop(state)
        _write_reg(state, instr.operands[0].reg, 64, value)
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.CALL:
        _push(state, next_rip)
        state.rip = (next_rip + instr.operands[0].value) & _M64
        return None

    if mnemonic is Mnemonic.RET:
        state.rip = _pop(state)
        return None

    if mnemonic is Mnemonic.JMP:
        state.rip = (next_rip + instr.operands[0].value) & _M64
        return None

    cond = _COND.get(mnemonic)
    if cond is not None:
        taken = cond(_FlagView(state.flags))
        state.rip = (next_rip + instr.operands[0].value) & _M64 if taken else next_rip
        return None

    if mnemonic is Mnemonic.CALL_REG:
        target = state.gpr[instr.operands[0].reg]  # read before the push
        _push(state, next_rip)
        state.rip = target
        return None

    if mnemonic is Mnemonic.JMP_REG:
        state.rip = state.gpr[instr.operands[0].reg]
        return None

    if mnemonic is Mnemonic.NOP:
        state.rip = next_rip
        return None

    if mnemonic is Mnemonic.INT3:
        return trapped(TrapKind.INT3)

    raise AssertionError(f"unhandled mnemonic {mnemonic}")


def _hostcall(state: MachineState) -> RunStatus | None:
    rdi = state.gpr[Reg.RDI]
    if state.rip == HOSTCALL_EXIT:
        return halted(rdi)
    if state.rip == HOSTCALL_WRITE_CHAR:
        state.output.append(rdi & 0xFF)
    elif state.rip == HOSTCALL_WRITE_U64:
        state.output.extend(rdi.to_bytes(8, "little"))
    state.rip = _pop(state)
    return None


def step(state: MachineState, image: bytes,
         decode_cache: dict[int, DecodedInstruction | InvalidDecode] | None = None,
         ) -> RunStatus | None:
    """Advance the machine by one instruction (or one hostcall effect)."""
    try:
        if state.rip in HOSTCALL_SLOTS:
            return _hostcall(state)
        offset = state.rip - IMAGE_BASE
        if not 0 <= offset < len(image):
            return trapped(TrapKind.UNTRANSLATED_TARGET)
        if decode_cache is not None:
            instr = decode_cache.get(offset)
            if instr is None:
                instr = decode(image, offset)
                decode_cache[offset] = instr
        else:
            instr = decode(image, offset)
        if isinstance(instr, InvalidDecode):
            return trapped(TrapKind.INVALID_DECODE)
        return execute_instruction(state, instr)
    except TrapError as exc:
        return trapped(exc.kind)


def run_source(image: bytes, entry: int, fuel: int = 1_000_000,
               regs: dict[Reg, int] | None = None) -> ExecutionResult:
    """Run the oracle until halt, trap or fuel exhaustion; deterministic."""
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    if not 0 <= entry < len(image):
        raise ValueError(f"entry {entry} outside image of {len(image)} bytes")
    state = MachineState.boot(image, entry, regs)
    cache: dict[int, DecodedInstruction | InvalidDecode] = {}
    status: RunStatus | None = None
    steps = 0
    while steps < fuel:
        status = step(state, image, cache)
        steps += 1
        if status is not None:
            break
    else:
        status = fuel_exhausted()
    if status is None:
        status = fuel_exhausted()
    return ExecutionResult(
        status=status,
        gprs=tuple(state.gpr),
        flags=state.flags,
        stack=state.memory.stack_snapshot(),
        output=bytes(state.output),
        steps=steps,
    )
