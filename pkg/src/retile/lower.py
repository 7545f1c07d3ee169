"""Lowering the superset CFG to target code.

Each node lowers independently: bank tiles for plain instructions, hand-
crafted templates for control flow (calls push the source return address and
branch to the callee's landing pad; returns and register-indirect branches
pop or read the target, test it against the hostcall slots, and otherwise
resolve it through the lookup table, trapping on anything untranslated).
Branch targets stay symbolic source offsets until link time.

Layout greedily merges fall-through runs into chunks, seeded from offset
zero, the entry point and every direct branch target in ascending order;
reaching an already-placed offset emits a branch to its label.  The linker
assigns final instruction indices, patches every symbolic target and fills
the per-offset lookup table.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .cfg import Node, SupersetCFG, build_superset_cfg, flag_liveness, superset_disassemble
from .isa import COND_BRANCHES, Mnemonic, Reg
from .memory import (
    HOSTCALL_BASE,
    HOSTCALL_EXIT,
    HOSTCALL_WRITE_CHAR,
    HOSTCALL_WRITE_U64,
    IMAGE_BASE,
)
from .result import TrapKind
from .t64 import (
    HOST_EXIT,
    HOST_WRITE_CHAR,
    HOST_WRITE_U64,
    Opcode,
    TargetInstruction,
    TRAP_IMMS,
)
from .tiles import S_ADDR, S_TMP, TileBank, get_bank, instantiate, lookup_tiles

__all__ = ["LoweredNode", "TranslatedImage", "lower_node", "layout", "link",
           "translate_image"]

_M64 = (1 << 64) - 1

# fixup kinds: symbolic targets resolved at link time
_SRC = "src"      # value = source offset (image_len means "fell off the end")
_LOCAL = "local"  # value = instruction index within this unit


@dataclass
class LoweredNode:
    """One node's code with symbolic branch targets."""

    offset: int
    code: list[TargetInstruction] = field(default_factory=list)
    fixups: list[tuple[int, str, int]] = field(default_factory=list)
    label_required: bool = False


@dataclass(eq=True)
class TranslatedImage:
    """Self-contained translation artifact (serializable bit-exactly)."""

    target_code: list[TargetInstruction]
    table: list[int]  # source offset -> target index (sentinel -1 unused here)
    source_image: bytes
    image_base: int
    entry: int
    hostcall_base: int
    attribution: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not (0 <= self.entry < len(self.source_image)):
            raise ValueError("entry outside the source image")


class _Asm:
    """Lowering helper accumulating code plus symbolic fixups."""

    def __init__(self, rmap) -> None:
        self.code: list[TargetInstruction] = []
        self.fixups: list[tuple[int, str, int]] = []
        self.rsp = rmap.gpr_map[Reg.RSP]

    def raw(self, opcode: Opcode, rd: int = 0, rn: int = 0, rm: int = 0,
            imm: int = 0) -> int:
        self.code.append(TargetInstruction(opcode, rd, rn, rm, imm & _M64))
        return len(self.code) - 1

    def branch(self, opcode: Opcode, rn: int, kind: str, value: int) -> None:
        self.fixups.append((len(self.code), kind, value))
        self.code.append(TargetInstruction(opcode, 0, rn, 0, 0))

    def here(self) -> int:
        return len(self.code)

    def push_const(self, value: int) -> None:
        self.raw(Opcode.LDI, S_TMP, imm=value)
        self.raw(Opcode.STORE8, S_TMP, self.rsp, imm=-8)
        self.raw(Opcode.ADDI, self.rsp, self.rsp, imm=-8)

    def pop_into(self, reg: int) -> None:
        self.raw(Opcode.LOAD8, reg, self.rsp)
        self.raw(Opcode.ADDI, self.rsp, self.rsp, imm=8)

    def dispatch(self, target_reg: int) -> None:
        """Route a runtime address: hostcall slots, table translate, or trap.

        Entered with the address in ``target_reg``; write hostcalls loop back
        here after popping their continuation address.
        """
        head = self.here()
        checks = []  # (slot address, host selector)
        for slot, selector in ((HOSTCALL_EXIT, HOST_EXIT),
                               (HOSTCALL_WRITE_CHAR, HOST_WRITE_CHAR),
                               (HOSTCALL_WRITE_U64, HOST_WRITE_U64)):
            self.raw(Opcode.ADDI, S_TMP, target_reg, imm=-slot)
            checks.append((self.here(), selector))
            self.code.append(TargetInstruction(Opcode.BEQZ, 0, S_TMP, 0, 0))
        self.raw(Opcode.XLATE, S_TMP, target_reg)
        self.raw(Opcode.BR, rn=S_TMP)
        for patch_index, selector in checks:
            stub = self.here()
            self.code[patch_index] = replace(self.code[patch_index], imm=0)
            self.fixups.append((patch_index, _LOCAL, stub))
            self.raw(Opcode.HOST, imm=selector)
            if selector != HOST_EXIT:
                self.pop_into(target_reg)
                self.branch(Opcode.B, 0, _LOCAL, head)

    def constant_exit(self, target: int, push_ret: int | None = None) -> None:
        """Lower a branch to a statically known out-of-image address."""
        if push_ret is not None:
            self.push_const(push_ret)
        if target == HOSTCALL_EXIT:
            self.raw(Opcode.HOST, imm=HOST_EXIT)
        elif target in (HOSTCALL_WRITE_CHAR, HOSTCALL_WRITE_U64):
            selector = HOST_WRITE_CHAR if target == HOSTCALL_WRITE_CHAR else HOST_WRITE_U64
            self.raw(Opcode.HOST, imm=selector)
            self.pop_into(S_ADDR)
            self.dispatch(S_ADDR)
        else:
            self.raw(Opcode.TRAP, imm=TRAP_IMMS[TrapKind.UNTRANSLATED_TARGET])


def _emit_condition(asm: _Asm, mnemonic: Mnemonic, flags_reg: int) -> tuple[Opcode, int]:
    """Materialize the branch condition; returns (branch opcode, tested reg)."""
    f = flags_reg
    if mnemonic in (Mnemonic.JZ, Mnemonic.JNZ):
        asm.raw(Opcode.AND, S_TMP, f, imm=0x40)
        return (Opcode.BNEZ if mnemonic is Mnemonic.JZ else Opcode.BEQZ), S_TMP
    if mnemonic in (Mnemonic.JB, Mnemonic.JAE):
        asm.raw(Opcode.AND, S_TMP, f, imm=0x1)
        return (Opcode.BNEZ if mnemonic is Mnemonic.JB else Opcode.BEQZ), S_TMP
    # signed comparisons need SF xor OF (and ZF for jle/jg)
    asm.raw(Opcode.SHR, S_TMP, f, imm=7)
    asm.raw(Opcode.SHR, S_ADDR, f, imm=11)
    asm.raw(Opcode.XOR, S_TMP, S_TMP, rm=S_ADDR)
    if mnemonic in (Mnemonic.JLE, Mnemonic.JG):
        asm.raw(Opcode.SHR, S_ADDR, f, imm=6)
        asm.raw(Opcode.OR, S_TMP, S_TMP, rm=S_ADDR)
    asm.raw(Opcode.AND, S_TMP, S_TMP, imm=1)
    if mnemonic in (Mnemonic.JL, Mnemonic.JLE):
        return Opcode.BNEZ, S_TMP
    return Opcode.BEQZ, S_TMP


def lower_node(node: Node, bank: TileBank, live: int, image_len: int) -> LoweredNode:
    """Lower one CFG node; total (invalid decodes become trap tiles)."""
    rmap = bank.rmap
    asm = _Asm(rmap)
    out = LoweredNode(offset=node.offset)

    if not node.valid:
        asm.raw(Opcode.TRAP, imm=TRAP_IMMS[TrapKind.INVALID_DECODE])
        out.code, out.fixups = asm.code, asm.fixups
        return out

    instr = node.instr
    m = instr.mnemonic
    end_abs = IMAGE_BASE + node.offset + instr.length

    if m is Mnemonic.CALL:
        if node.direct_targets:
            asm.push_const(end_abs)
            asm.branch(Opcode.B, 0, _SRC, node.direct_targets[0])
        else:
            asm.constant_exit(node.external_target, push_ret=end_abs)
    elif m is Mnemonic.JMP:
        if node.direct_targets:
            asm.branch(Opcode.B, 0, _SRC, node.direct_targets[0])
        else:
            asm.constant_exit(node.external_target)
    elif m in COND_BRANCHES:
        opcode, reg = _emit_condition(asm, m, rmap.flags_reg)
        if node.direct_targets:
            asm.branch(opcode, reg, _SRC, node.direct_targets[0])
            asm.branch(Opcode.B, 0, _SRC, node.fallthrough)
        else:
            taken_patch = asm.here()
            asm.branch(opcode, reg, _LOCAL, 0)  # patched to the stub below
            asm.branch(Opcode.B, 0, _SRC, node.fallthrough)
            asm.fixups[-2] = (taken_patch, _LOCAL, asm.here())
            asm.constant_exit(node.external_target)
    elif m is Mnemonic.RET:
        asm.pop_into(S_ADDR)
        asm.dispatch(S_ADDR)
    elif m is Mnemonic.JMP_REG:
        asm.raw(Opcode.MOVR, S_ADDR, rmap.gpr_map[instr.operands[0].reg])
        asm.dispatch(S_ADDR)
    elif m is Mnemonic.CALL_REG:
        # target captured before the push (call rsp reads the old value)
        asm.raw(Opcode.MOVR, S_ADDR, rmap.gpr_map[instr.operands[0].reg])
        asm.push_const(end_abs)
        asm.dispatch(S_ADDR)
    elif m is Mnemonic.INT3:
        asm.raw(Opcode.TRAP, imm=TRAP_IMMS[TrapKind.INT3])
    else:
        for tile in lookup_tiles(bank, instr, live):
            asm.code.extend(instantiate(tile, instr))
    out.code, out.fixups = asm.code, asm.fixups
    return out


@dataclass
class _Unit:
    offset: int
    code: list[TargetInstruction]
    fixups: list[tuple[int, str, int]]
    is_tail: bool = False
    base: int = 0


def layout(cfg: SupersetCFG, lowered: dict[int, LoweredNode]) -> list[list[_Unit]]:
    """Greedy fall-through merging into chunks; every offset placed once."""
    image_len = cfg.image_len
    visited = bytearray(image_len)
    chunks: list[list[_Unit]] = []

    seeds = sorted({0, cfg.entry, *cfg.branch_targets})

    def place_from(seed: int) -> None:
        if visited[seed]:
            return
        chunk: list[_Unit] = []
        offset = seed
        while True:
            node = cfg.nodes[offset]
            low = lowered[offset]
            visited[offset] = 1
            chunk.append(_Unit(offset, low.code, low.fixups))
            if node.is_control or not node.valid or node.fallthrough is None:
                break
            nxt = node.fallthrough
            if nxt >= image_len or visited[nxt]:
                # fall-through leaves the chunk: branch to its label
                tail = _Unit(offset, [TargetInstruction(Opcode.B)],
                             [(0, _SRC, nxt)], is_tail=True)
                chunk.append(tail)
                break
            offset = nxt
        chunks.append(chunk)

    for seed in seeds:
        place_from(seed)
    for offset in range(image_len):
        place_from(offset)
    return chunks


def link(chunks: list[list[_Unit]], image_len: int) -> tuple[list[TargetInstruction], list[int]]:
    """Concatenate chunks, patch symbolic targets, fill the lookup table."""
    labels: dict[int, int] = {}
    index = 0
    for chunk in chunks:
        for unit in chunk:
            unit.base = index
            if not unit.is_tail:
                assert unit.offset not in labels, "offset placed twice"
                labels[unit.offset] = index
            index += len(unit.code)
    labels[image_len] = index  # shared landing for falling off the image

    code: list[TargetInstruction] = []
    for chunk in chunks:
        for unit in chunk:
            patched = unit.code
            if unit.fixups:
                patched = list(unit.code)
                for at, kind, value in unit.fixups:
                    if kind == _SRC:
                        target = labels[value]
                    else:
                        target = unit.base + value
                    patched[at] = replace(patched[at], imm=target)
            code.extend(patched)
    code.append(TargetInstruction(Opcode.TRAP,
                                  imm=TRAP_IMMS[TrapKind.UNTRANSLATED_TARGET]))

    table = [labels[offset] for offset in range(image_len)]
    return code, table


def translate_image(image: bytes, entry: int, prune: bool = True,
                    bank: TileBank | None = None) -> TranslatedImage:
    """The full static pipeline; bit-deterministic in its inputs."""
    if not image:
        raise ValueError("empty image")
    if not 0 <= entry < len(image):
        raise ValueError("entry outside image")
    bank = bank or get_bank()
    cfg = build_superset_cfg(superset_disassemble(image), len(image), entry)
    if prune:
        flag_liveness(cfg)
    lowered = {}
    for node in cfg.nodes:
        low = lower_node(node, bank, node.live_flags, cfg.image_len)
        low.label_required = (node.offset in cfg.branch_targets
                              or node.offset in (0, entry))
        lowered[node.offset] = low
    chunks = layout(cfg, lowered)
    code, table = link(chunks, cfg.image_len)

    counts = [0] * len(image)
    for chunk in chunks:
        for unit in chunk:
            counts[unit.offset] += len(unit.code)
    counts[-1] += 1  # trailing off-image trap

    return TranslatedImage(
        target_code=code,
        table=table,
        source_image=bytes(image),
        image_base=IMAGE_BASE,
        entry=entry,
        hostcall_base=HOSTCALL_BASE,
        attribution=tuple(counts),
    )
