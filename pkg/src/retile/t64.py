"""T64: the compact RISC target machine.

Thirty-two 64-bit registers; register 0 is kept zero by convention (nothing
in the pipeline maps or writes it, so immediate forms use it as a zero base).
Binary ALU operations take operand2 = regs[rm] + imm, giving every operation
a register form (imm 0) and an immediate form (rm 0) with one opcode.  Shift
counts are masked to six bits.  Branch targets are absolute instruction
indices; XLATE is the runtime resolver from source addresses to indices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .isa import Reg
from .memory import INITIAL_RSP, Memory
from .result import (
    ExecutionResult,
    RunStatus,
    TrapError,
    TrapKind,
    fuel_exhausted,
    halted,
    trapped,
)

__all__ = ["Opcode", "TargetInstruction", "TargetState", "exec_step",
           "run_translated", "run_straightline_batch", "TRAP_CODES",
           "HOST_EXIT", "HOST_WRITE_CHAR", "HOST_WRITE_U64"]

_M64 = (1 << 64) - 1


class Opcode(enum.IntEnum):
    LDI = 0
    MOVR = 1
    ADD = 2
    SUB = 3
    AND = 4
    OR = 5
    XOR = 6
    NOT = 7
    SHL = 8
    SHR = 9
    ADDI = 10
    LOAD1 = 11
    LOAD4 = 12
    LOAD8 = 13
    STORE1 = 14
    STORE4 = 15
    STORE8 = 16
    B = 17
    BNEZ = 18
    BEQZ = 19
    XLATE = 20
    BR = 21
    HOST = 22
    TRAP = 23
    HALT = 24


@dataclass(slots=True, eq=True)
class TargetInstruction:
    """One T64 instruction in canonical form (unused fields zero)."""

    opcode: Opcode
    rd: int = 0
    rn: int = 0
    rm: int = 0
    imm: int = 0

    def __str__(self) -> str:
        return (f"{self.opcode.name.lower():6s} rd={self.rd:<2d} rn={self.rn:<2d} "
                f"rm={self.rm:<2d} imm={self.imm:#x}")


# host effect selectors for HOST
HOST_EXIT = 0
HOST_WRITE_CHAR = 1
HOST_WRITE_U64 = 2

# TRAP immediates, stable across serialization
TRAP_CODES = {
    0: TrapKind.INVALID_DECODE,
    1: TrapKind.UNTRANSLATED_TARGET,
    2: TrapKind.INT3,
}
TRAP_IMMS = {kind: code for code, kind in TRAP_CODES.items()}

# fixed mapped register the host effects read their argument from
_T_RDI = 11


@dataclass
class TargetState:
    memory: Memory
    regs: list[int] = field(default_factory=lambda: [0] * 32)
    pc: int = 0
    output: bytearray = field(default_factory=bytearray)


def exec_step(state: TargetState, image) -> RunStatus | None:
    """Execute one target instruction of ``image`` (a TranslatedImage)."""
    code = image.target_code
    if not 0 <= state.pc < len(code):
        return trapped(TrapKind.BAD_PC)
    ins = code[state.pc]
    regs = state.regs
    op = ins.opcode
    try:
        if op <= Opcode.ADDI:  # register/ALU group, ordered by Opcode value
            if op == Opcode.LDI:
                regs[ins.rd] = ins.imm
            elif op == Opcode.MOVR:
                regs[ins.rd] = regs[ins.rn]
            elif op == Opcode.NOT:
                regs[ins.rd] = regs[ins.rn] ^ _M64
            elif op == Opcode.ADDI:
                regs[ins.rd] = (regs[ins.rn] + ins.imm) & _M64
            else:
                op2 = (regs[ins.rm] + ins.imm) & _M64
                a = regs[ins.rn]
                if op == Opcode.ADD:
                    regs[ins.rd] = (a + op2) & _M64
                elif op == Opcode.SUB:
                    regs[ins.rd] = (a - op2) & _M64
                elif op == Opcode.AND:
                    regs[ins.rd] = a & op2
                elif op == Opcode.OR:
                    regs[ins.rd] = a | op2
                elif op == Opcode.XOR:
                    regs[ins.rd] = a ^ op2
                elif op == Opcode.SHL:
                    regs[ins.rd] = (a << (op2 & 63)) & _M64
                else:  # SHR
                    regs[ins.rd] = a >> (op2 & 63)
            state.pc += 1
            return None

        if op <= Opcode.STORE8:  # memory group
            addr = (regs[ins.rn] + ins.imm) & _M64
            if op == Opcode.LOAD1:
                regs[ins.rd] = state.memory.read(addr, 1)
            elif op == Opcode.LOAD4:
                regs[ins.rd] = state.memory.read(addr, 4)
            elif op == Opcode.LOAD8:
                regs[ins.rd] = state.memory.read(addr, 8)
            elif op == Opcode.STORE1:
                state.memory.write(addr, 1, regs[ins.rd])
            elif op == Opcode.STORE4:
                state.memory.write(addr, 4, regs[ins.rd])
            else:
                state.memory.write(addr, 8, regs[ins.rd])
            state.pc += 1
            return None

        if op == Opcode.B:
            state.pc = ins.imm
            return None
        if op == Opcode.BNEZ:
            state.pc = ins.imm if regs[ins.rn] != 0 else state.pc + 1
            return None
        if op == Opcode.BEQZ:
            state.pc = ins.imm if regs[ins.rn] == 0 else state.pc + 1
            return None
        if op == Opcode.XLATE:
            addr = regs[ins.rn]
            offset = addr - image.image_base
            if not 0 <= offset < len(image.table):
                return trapped(TrapKind.UNTRANSLATED_TARGET)
            entry = image.table[offset]
            if entry < 0:
                return trapped(TrapKind.UNTRANSLATED_TARGET)
            regs[ins.rd] = entry
            state.pc += 1
            return None
        if op == Opcode.BR:
            state.pc = regs[ins.rn]
            return None
        if op == Opcode.HOST:
            rdi = regs[_T_RDI]
            if ins.imm == HOST_EXIT:
                return halted(rdi)
            if ins.imm == HOST_WRITE_CHAR:
                state.output.append(rdi & 0xFF)
            elif ins.imm == HOST_WRITE_U64:
                state.output.extend(rdi.to_bytes(8, "little"))
            else:
                return trapped(TrapKind.BAD_PC)
            state.pc += 1
            return None
        if op == Opcode.TRAP:
            return trapped(TRAP_CODES.get(ins.imm, TrapKind.INVALID_DECODE))
        if op == Opcode.HALT:
            return halted(ins.imm)
    except TrapError as exc:
        return trapped(exc.kind)
    raise AssertionError(f"unhandled opcode {op}")


def boot_state(image, regs: dict[Reg, int] | None = None) -> TargetState:
    """TargetState with the same initial conditions the oracle uses."""
    from .tiles import default_register_map

    rmap = default_register_map()
    state = TargetState(memory=Memory(image.source_image))
    state.regs[rmap.gpr_map[Reg.RSP]] = INITIAL_RSP
    for reg, value in (regs or {}).items():
        state.regs[rmap.gpr_map[reg]] = value & _M64
    return state


def run_translated(image, fuel: int = 10_000_000,
                   regs: dict[Reg, int] | None = None,
                   entry_offset: int | None = None) -> ExecutionResult:
    """Run a TranslatedImage; the result maps registers back to source names."""
    from .tiles import default_register_map

    if fuel <= 0:
        raise ValueError("fuel must be positive")
    rmap = default_register_map()
    state = boot_state(image, regs)
    entry = image.entry if entry_offset is None else entry_offset
    start = image.table[entry]
    if start < 0:
        raise ValueError(f"entry offset {entry} has no landing pad")
    state.pc = start
    status: RunStatus | None = None
    steps = 0
    while steps < fuel:
        status = exec_step(state, image)
        steps += 1
        if status is not None:
            break
    if status is None:
        status = fuel_exhausted()
    return ExecutionResult(
        status=status,
        gprs=tuple(state.regs[rmap.gpr_map[r]] for r in Reg),
        flags=state.regs[rmap.flags_reg],
        stack=state.memory.stack_snapshot(),
        output=bytes(state.output),
        steps=steps,
    )


_NP64 = np.uint64


def run_straightline_batch(code, regs: dict[int, np.ndarray], n: int) -> dict[int, np.ndarray]:
    """Vectorized evaluator for straight-line register-only tile code.

    ``regs`` maps register index to a uint64 vector of length ``n``; registers
    not present read as zero.  Supports exactly the opcodes pure tiles use;
    anything else raises.  Used by the per-tile fidelity suite to push large
    input batches through tile code quickly (cross-checked against exec_step
    on a sample).
    """
    env: dict[int, np.ndarray] = {0: np.zeros(n, dtype=_NP64)}
    env.update(regs)

    def get(idx: int) -> np.ndarray:
        value = env.get(idx)
        if value is None:
            value = np.zeros(n, dtype=_NP64)
            env[idx] = value
        return value

    for ins in code:
        op = ins.opcode
        if op == Opcode.LDI:
            env[ins.rd] = np.full(n, ins.imm & _M64, dtype=_NP64)
        elif op == Opcode.MOVR:
            env[ins.rd] = get(ins.rn).copy()
        elif op == Opcode.NOT:
            env[ins.rd] = ~get(ins.rn)
        elif op == Opcode.ADDI:
            env[ins.rd] = get(ins.rn) + _NP64(ins.imm & _M64)
        elif op in (Opcode.ADD, Opcode.SUB, Opcode.AND, Opcode.OR,
                    Opcode.XOR, Opcode.SHL, Opcode.SHR):
            op2 = get(ins.rm) + _NP64(ins.imm & _M64)
            a = get(ins.rn)
            if op == Opcode.ADD:
                env[ins.rd] = a + op2
            elif op == Opcode.SUB:
                env[ins.rd] = a - op2
            elif op == Opcode.AND:
                env[ins.rd] = a & op2
            elif op == Opcode.OR:
                env[ins.rd] = a | op2
            elif op == Opcode.XOR:
                env[ins.rd] = a ^ op2
            elif op == Opcode.SHL:
                env[ins.rd] = a << (op2 & _NP64(63))
            else:
                env[ins.rd] = a >> (op2 & _NP64(63))
        else:
            raise ValueError(f"not straight-line register code: {ins}")
    return env
