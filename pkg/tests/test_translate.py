"""Translator structure tests: lowering templates, layout, link, determinism."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from retile.asm import assemble
from retile.cfg import build_superset_cfg, flag_liveness, superset_disassemble
from retile.container import serialize
from retile.decoder import decode
from retile.gen import GenSpec, gen_program
from retile.interp import run_source
from retile.isa import Reg
from retile.lower import layout, link, lower_node, translate_image
from retile.memory import IMAGE_BASE
from retile.result import StatusKind, TrapKind
from retile.t64 import Opcode, run_translated
from retile.tiles import get_bank

PROGRAMS = Path(__file__).parent / "programs"


@pytest.fixture(scope="module")
def bank():
    return get_bank()


def _lowered_for(text: str, prune: bool = True):
    art = assemble(text)
    cfg = build_superset_cfg(superset_disassemble(art.image), len(art.image), art.entry)
    if prune:
        flag_liveness(cfg)
    bank = get_bank()
    lowered = {n.offset: lower_node(n, bank, n.live_flags, cfg.image_len)
               for n in cfg.nodes}
    return art, cfg, lowered


def test_call_pushes_site_plus_five(bank):
    art, cfg, lowered = _lowered_for("Main: call F\nF: ret")
    node = lowered[0]
    ldi = node.code[0]
    assert ldi.opcode == Opcode.LDI and ldi.imm == IMAGE_BASE + 5
    assert node.code[1].opcode == Opcode.STORE8
    assert node.code[-1].opcode == Opcode.B
    assert node.fixups[-1] == (len(node.code) - 1, "src", 5)


def test_ret_template_dispatches(bank):
    art, cfg, lowered = _lowered_for("ret")
    ops = [ins.opcode for ins in lowered[0].code]
    assert ops[0] == Opcode.LOAD8  # pop the return address
    assert Opcode.XLATE in ops and Opcode.BR in ops
    assert ops.count(Opcode.BEQZ) == 3  # three hostcall slot checks
    assert ops.count(Opcode.HOST) == 3


def test_jz_tests_flag_bit_six(bank):
    art, cfg, lowered = _lowered_for("jz T\nT: ret")
    code = lowered[0].code
    assert code[0].opcode == Opcode.AND and code[0].imm == 0x40
    assert code[1].opcode == Opcode.BNEZ
    assert lowered[0].fixups[0][1:] == ("src", 2)


def test_invalid_offset_lowers_to_trap(bank):
    image = bytes([0x0F, 0x05])
    timg = translate_image(image, 0)
    trap = timg.target_code[timg.table[0]]
    assert trap.opcode == Opcode.TRAP


def test_straight_line_single_chunk():
    art, cfg, lowered = _lowered_for("mov rax, rbx\nmov rcx, rax\nret")
    chunks = layout(cfg, lowered)
    # first chunk covers the real instruction chain without branch tails
    first = chunks[0]
    assert [u.offset for u in first if not u.is_tail][:3] == [0, 3, 6]
    assert not any(u.is_tail for u in first[:3])


def test_fall_through_into_placed_tail():
    # two entries fall through into a shared tail; the second placement
    # reaches an already-placed offset and must branch to its label
    text = "jz B\nA: inc eax\nB: inc ecx\nret"
    art, cfg, lowered = _lowered_for(text)
    chunks = layout(cfg, lowered)
    tails = [u for chunk in chunks for u in chunk if u.is_tail]
    assert tails, "expected at least one branch-to-label tail"
    code, table = link(chunks, cfg.image_len)
    for unit in tails:
        branch = code[unit.base]
        assert branch.opcode == Opcode.B
        assert 0 <= branch.imm <= len(code)


def test_overlap_offsets_both_reachable(bank):
    art = assemble((PROGRAMS / "overlap.s").read_text())
    timg = translate_image(art.image, art.entry)
    mov_off = art.symbols["ReturnC3"]
    ret_off = art.symbols["ReturnC2"]
    assert timg.table[mov_off] != timg.table[ret_off]
    assert timg.target_code[timg.table[mov_off]].opcode in (Opcode.AND, Opcode.OR)
    assert timg.target_code[timg.table[ret_off]].opcode == Opcode.LOAD8


def test_table_total_and_entry():
    rng = random.Random(5)
    image = bytes(rng.randrange(256) for _ in range(200))
    timg = translate_image(image, 7)
    assert len(timg.table) == len(image)
    assert all(0 <= idx < len(timg.target_code) for idx in timg.table)
    assert timg.table[7] >= 0
    assert timg.source_image == image


def test_determinism_byte_identical():
    for seed in range(6):
        art = assemble(gen_program(GenSpec(seed=seed, budget=80)))
        a = serialize(translate_image(art.image, art.entry))
        b = serialize(translate_image(art.image, art.entry))
        assert a == b


def test_attribution_covers_all_code():
    art = assemble(gen_program(GenSpec(seed=11, budget=120)))
    timg = translate_image(art.image, art.entry)
    assert sum(timg.attribution) == len(timg.target_code)


def test_pruning_strictly_smaller_and_equivalent():
    text = "\n".join(["mov rax, 1"] + [f"add rax, {k}" for k in range(2, 14)]
                     + ["cmp rax, 90", "jz Eq", "mov rdi, 1", "call __exit",
                        "Eq: mov rdi, 0", "call __exit"])
    art = assemble(text)
    pruned = translate_image(art.image, art.entry, prune=True)
    unpruned = translate_image(art.image, art.entry, prune=False)
    assert len(pruned.target_code) < len(unpruned.target_code)
    oracle = run_source(art.image, art.entry, fuel=10_000)
    assert oracle.status.kind is StatusKind.HALTED
    for timg in (pruned, unpruned):
        vm = run_translated(timg, regs={})
        assert oracle.describe_difference(vm) is None


def test_jcc_to_external_target():
    # conditional branch straight at a hostcall slot address
    disp = 0x3FF000 - (IMAGE_BASE + 6)
    image = bytes([0x0F, 0x84]) + disp.to_bytes(4, "little", signed=True) + bytes([0xC3])
    oracle = run_source(image, 0, fuel=10, regs={Reg.RDI: 5})
    timg = translate_image(image, 0)
    vm = run_translated(timg, regs={Reg.RDI: 5})
    assert oracle.describe_difference(vm) is None
    # ZF clear: falls through to ret, which pops zeros and traps on both sides
    assert oracle.status.trap is TrapKind.UNTRANSLATED_TARGET
    # with ZF set the branch exits through the hostcall
    disp2 = 0x3FF000 - (IMAGE_BASE + 2 + 6)
    image2 = (bytes([0x31, 0xC0, 0x0F, 0x84])  # xor eax, eax sets ZF
              + disp2.to_bytes(4, "little", signed=True) + bytes([0xC3]))
    oracle = run_source(image2, 0, fuel=10, regs={Reg.RDI: 5})
    vm = run_translated(translate_image(image2, 0), regs={Reg.RDI: 5})
    assert oracle.status.kind is StatusKind.HALTED and oracle.status.exit_code == 5
    assert oracle.describe_difference(vm) is None


def test_fall_off_end_traps_both_sides():
    image = bytes([0x90])  # a single nop falls off the image
    oracle = run_source(image, 0, fuel=10)
    vm = run_translated(translate_image(image, 0))
    assert oracle.status.trap is TrapKind.UNTRANSLATED_TARGET
    assert oracle.describe_difference(vm) is None
