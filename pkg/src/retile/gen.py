"""Deterministic program generator for the differential harness.

Programs terminate by construction: block-to-block branches only go forward,
push/pop pairs balance within a block, and the call-based gadgets (computed
jumps, overlapping decodes) are straight-line functions.  Every program ends
in the exit hostcall with the accumulated value in RDI.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .isa import Reg

__all__ = ["GenSpec", "GenFeatures", "gen_program"]

# RBX stays the memory-window base; RSP only moves through balanced push/pop.
_FREE_REGS = [r for r in Reg if r not in (Reg.RSP, Reg.RBX)]
_MEM_BASE = 0x7F8000
_MEM_WINDOW = 0x3800


@dataclass(frozen=True)
class GenFeatures:
    mem_ops: bool = True
    indirect: bool = True
    overlap: bool = True

    @classmethod
    def parse(cls, text: str) -> "GenFeatures":
        if not text or text == "all":
            return cls()
        if text == "none":
            return cls(False, False, False)
        wanted = {part.strip() for part in text.split(",") if part.strip()}
        unknown = wanted - {"mem", "indirect", "overlap"}
        if unknown:
            raise ValueError(f"unknown features: {sorted(unknown)}")
        return cls(mem_ops="mem" in wanted, indirect="indirect" in wanted,
                   overlap="overlap" in wanted)


@dataclass(frozen=True)
class GenSpec:
    seed: int
    budget: int = 200
    features: GenFeatures = field(default_factory=GenFeatures)


def _reg64(rng: random.Random) -> str:
    return rng.choice(_FREE_REGS).name.lower()


def _reg32(rng: random.Random) -> str:
    from .isa import REG32_NAMES

    return REG32_NAMES[rng.choice(_FREE_REGS)]


def gen_program(spec: GenSpec) -> str:
    """Generate assembler text; a pure function of the spec."""
    if spec.budget < 1:
        raise ValueError("budget must be at least 1")
    rng = random.Random(spec.seed)
    feats = spec.features

    lines: list[str] = ["Main:"]
    if spec.budget == 1:
        lines.append("    call __exit")
        return "\n".join(lines) + "\n"

    n_blocks = max(1, spec.budget // 6)
    n_funcs = min(3, 1 + spec.budget // 64) if spec.budget >= 8 else 0
    gadget_calls: list[str] = []
    if feats.indirect and n_funcs:
        gadget_calls.append("jump_table")
    if feats.overlap and n_funcs:
        gadget_calls.append("overlap_probe")

    if feats.mem_ops:
        lines.append(f"    mov ebx, {_MEM_BASE:#x}")

    emitted = 0

    def emit(text: str) -> None:
        nonlocal emitted
        lines.append(f"    {text}")
        emitted += 1

    def random_alu(width64: bool) -> None:
        op = rng.choice(["add", "sub", "and", "or", "xor", "cmp", "mov"])
        dst = _reg64(rng) if width64 else _reg32(rng)
        if rng.random() < 0.4:
            emit(f"{op} {dst}, {rng.randint(-(1 << 31), (1 << 31) - 1)}")
        else:
            src = _reg64(rng) if width64 else _reg32(rng)
            emit(f"{op} {dst}, {src}")

    def random_mem_op() -> None:
        disp = rng.randrange(0, _MEM_WINDOW, 8)
        kind = rng.randrange(6)
        width = rng.choice(["qword", "dword"])
        reg = _reg64(rng) if width == "qword" else _reg32(rng)
        if kind == 0:
            emit(f"mov {width} [rbx+{disp:#x}], {reg}")
        elif kind == 1:
            emit(f"mov {reg}, {width} [rbx+{disp:#x}]")
        elif kind == 2:
            op = rng.choice(["add", "sub", "and", "or", "xor", "cmp"])
            emit(f"{op} {width} [rbx+{disp:#x}], {reg}")
        elif kind == 3:
            op = rng.choice(["add", "sub", "xor", "cmp"])
            emit(f"{op} {reg}, {width} [rbx+{disp:#x}]")
        elif kind == 4:
            op = rng.choice(["inc", "dec"])
            emit(f"{op} {width} [rbx+{disp:#x}]")
        else:
            index = _reg64(rng)
            scale = rng.choice([1, 2, 4, 8])
            emit(f"and {index}, 0xff")  # clamp the index into the window
            emit(f"mov {_reg64(rng)}, qword [rbx+{index}*{scale}+{disp:#x}]")

    def random_misc(block: int) -> None:
        kind = rng.randrange(8)
        if kind == 0:
            reg = _reg64(rng)
            emit(f"push {reg}")
            random_alu(rng.random() < 0.5)
            emit(f"pop {_reg64(rng)}")
        elif kind == 1:
            emit(f"{rng.choice(['inc', 'dec'])} {_reg64(rng) if rng.random() < 0.5 else _reg32(rng)}")
        elif kind == 2:
            emit(f"shl {_reg64(rng)}, {rng.randrange(0, 64)}")
        elif kind == 3:
            emit(f"lea {_reg64(rng)}, [{_reg64(rng)}+{_reg64(rng)}*{rng.choice([1, 2, 4, 8])}"
                 f"+{rng.randint(-128, 127)}]")
        elif kind == 4:
            emit(f"mov rdi, {_reg64(rng)}")
            emit(f"call {rng.choice(['__write_char', '__write_u64'])}")
        elif kind == 5 and n_funcs:
            emit(f"call fn_{rng.randrange(n_funcs)}")
        elif kind == 6 and gadget_calls:
            gadget = rng.choice(gadget_calls)
            emit(f"mov rdi, {_reg64(rng)}")
            emit(f"call {gadget}")
        else:
            emit(f"test {_reg64(rng)}, {_reg64(rng)}")

    for block in range(n_blocks):
        lines.append(f"block_{block}:")
        for _ in range(rng.randint(2, 6)):
            roll = rng.random()
            if feats.mem_ops and roll < 0.25:
                random_mem_op()
            elif roll < 0.75:
                random_alu(rng.random() < 0.6)
            else:
                random_misc(block)
            if emitted >= spec.budget:
                break
        # forward control flow between blocks
        if block + 1 < n_blocks:
            roll = rng.random()
            target = rng.randrange(block + 1, n_blocks)
            if roll < 0.35:
                emit(f"cmp {_reg64(rng)}, {_reg64(rng)}")
                emit(f"{rng.choice(['jz', 'jnz', 'jl', 'jge', 'jle', 'jg', 'jb', 'jae'])} "
                     f"block_{target}")
            elif roll < 0.45 and feats.indirect:
                reg = _reg64(rng)
                emit(f"mov {reg}, block_{target}")
                emit(f"jmp {reg}")
                continue
            elif roll < 0.55 and feats.overlap:
                junk = ", ".join(f"{rng.randrange(256):#04x}"
                                 for _ in range(rng.randint(1, 6)))
                lines.append(f"    jmp skip_{block}")
                lines.append(f"    .byte {junk}")
                lines.append(f"skip_{block}:")

    lines.append("    mov rdi, rax")
    lines.append("    call __exit")

    for k in range(n_funcs):
        lines.append(f"fn_{k}:")
        for _ in range(rng.randint(1, 4)):
            random_alu(rng.random() < 0.5)
        lines.append("    ret")

    if feats.indirect and n_funcs:
        lines += [
            "jump_table:",
            "    and rdi, 3",
            "    shl rdi, 1",
            "    xor eax, eax",
            "    call jump_table_dispatch",
            "jump_table_slots:",
            "    inc eax",
            "    inc eax",
            "    inc eax",
            "    inc eax",
            "    ret",
            "jump_table_dispatch:",
            "    pop rsi",
            "    add rsi, rdi",
            "    jmp rsi",
        ]
    if feats.overlap and n_funcs:
        lines += [
            "overlap_probe:",
            "    xor eax, eax",
            "    mov al, 0xC2",
            "    test rdi, rdi",
            "    jz overlap_c2",
            "    .byte 0xB0",
            "overlap_c2:",
            "    .byte 0xC3",
            "    ret",
        ]
    return "\n".join(lines) + "\n"
