"""Target VM semantics and container round-trip/fuzz tests."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retile.asm import assemble
from retile.container import (
    BadMagic,
    ChecksumMismatch,
    ContainerError,
    TruncatedContainer,
    VersionMismatch,
    deserialize,
    serialize,
)
from retile.interp import run_source
from retile.isa import Reg
from retile.lower import TranslatedImage, translate_image
from retile.memory import IMAGE_BASE
from retile.result import StatusKind, TrapKind
from retile.t64 import (
    Opcode,
    TargetInstruction,
    TargetState,
    exec_step,
    run_translated,
)
from retile.memory import Memory


def _image_with(code, source=b"\x90\xc3", table=None):
    return TranslatedImage(
        target_code=list(code),
        table=table if table is not None else [0] * len(source),
        source_image=source,
        image_base=IMAGE_BASE,
        entry=0,
        hostcall_base=IMAGE_BASE - 0x1000,
    )


def _run(code, regs=None, steps=50, source=b"\x90\xc3", table=None):
    timg = _image_with(code, source, table)
    state = TargetState(memory=Memory(timg.source_image))
    for idx, value in (regs or {}).items():
        state.regs[idx] = value
    status = None
    for _ in range(steps):
        status = exec_step(state, timg)
        if status is not None:
            break
    return state, status


def test_alu_operand2_forms():
    code = [
        TargetInstruction(Opcode.LDI, rd=1, imm=40),
        TargetInstruction(Opcode.ADD, rd=2, rn=1, rm=1),        # reg + reg
        TargetInstruction(Opcode.ADD, rd=3, rn=1, rm=0, imm=2),  # reg + imm via T0
        TargetInstruction(Opcode.SUB, rd=4, rn=0, rm=1),         # 0 - reg
        TargetInstruction(Opcode.SHL, rd=5, rn=1, imm=1),
        TargetInstruction(Opcode.SHR, rd=6, rn=1, imm=3),
        TargetInstruction(Opcode.NOT, rd=7, rn=1),
        TargetInstruction(Opcode.HALT),
    ]
    state, status = _run(code)
    assert state.regs[2] == 80 and state.regs[3] == 42
    assert state.regs[4] == (1 << 64) - 40
    assert state.regs[5] == 80 and state.regs[6] == 5
    assert state.regs[7] == ~40 & ((1 << 64) - 1)
    assert status.kind is StatusKind.HALTED


def test_loads_zero_extend_and_stores_truncate():
    code = [
        TargetInstruction(Opcode.LDI, rd=1, imm=0x7F8000),
        TargetInstruction(Opcode.LDI, rd=2, imm=0x1122334455667788),
        TargetInstruction(Opcode.STORE8, rd=2, rn=1),
        TargetInstruction(Opcode.LOAD4, rd=3, rn=1),
        TargetInstruction(Opcode.LOAD1, rd=4, rn=1, imm=7),
        TargetInstruction(Opcode.STORE1, rd=2, rn=1, imm=9),
        TargetInstruction(Opcode.LOAD8, rd=5, rn=1, imm=8),
        TargetInstruction(Opcode.HALT),
    ]
    state, status = _run(code)
    assert state.regs[3] == 0x55667788
    assert state.regs[4] == 0x11
    # byte 0x88 stored at +9; the 8-byte load at +8 sees it zero-extended
    assert state.regs[5] == 0x8800
    assert status.kind is StatusKind.HALTED


def test_xlate_rules():
    table = [3, -1]
    code = [
        TargetInstruction(Opcode.XLATE, rd=2, rn=1),
        TargetInstruction(Opcode.HALT),
    ]
    # entry resolves through the table
    state, status = _run(code, regs={1: IMAGE_BASE}, table=table)
    assert state.regs[2] == 3 and status.kind is StatusKind.HALTED
    # below the image (and not a hostcall slot): untranslated
    _, status = _run(code, regs={1: IMAGE_BASE - 8}, table=table)
    assert status.trap is TrapKind.UNTRANSLATED_TARGET
    # sentinel entries trap
    _, status = _run(code, regs={1: IMAGE_BASE + 1}, table=table)
    assert status.trap is TrapKind.UNTRANSLATED_TARGET


def test_branches_and_host():
    code = [
        TargetInstruction(Opcode.LDI, rd=11, imm=0x41),
        TargetInstruction(Opcode.HOST, imm=1),  # write_char reads mapped RDI
        TargetInstruction(Opcode.B, imm=4),
        TargetInstruction(Opcode.TRAP, imm=0),
        TargetInstruction(Opcode.BEQZ, rn=0, imm=6),
        TargetInstruction(Opcode.TRAP, imm=0),
        TargetInstruction(Opcode.LDI, rd=1, imm=8),
        TargetInstruction(Opcode.BR, rn=1),
        TargetInstruction(Opcode.HOST, imm=0),
    ]
    state, status = _run(code)
    assert bytes(state.output) == b"A"
    assert status.kind is StatusKind.HALTED and status.exit_code == 0x41


def test_run_translated_equals_oracle_on_listing_programs():
    from pathlib import Path

    for name, rdi, expect in (("overlap.s", 0, 0xC2), ("computed_jump.s", 2, 2)):
        art = assemble((Path(__file__).parent / "programs" / name).read_text())
        timg = translate_image(art.image, art.entry)
        oracle = run_source(art.image, art.entry, regs={Reg.RDI: rdi})
        vm = run_translated(timg, regs={Reg.RDI: rdi})
        assert vm.status.kind is StatusKind.HALTED
        assert vm.gprs[Reg.RAX] == expect
        assert oracle.describe_difference(vm) is None
        assert vm.output == oracle.output


def test_register_map_transparency():
    art = assemble("mov rax, rdi\nadd rax, rsi\nmov rdi, rax\ncall __exit")
    timg = translate_image(art.image, art.entry)
    regs = {Reg.RDI: 30, Reg.RSI: 12}
    vm = run_translated(timg, regs=regs)
    oracle = run_source(art.image, art.entry, regs=regs)
    for reg in Reg:
        assert vm.gprs[reg] == oracle.gprs[reg]
    assert vm.flags == oracle.flags
    assert vm.stack == oracle.stack


def test_bad_pc_traps():
    code = [TargetInstruction(Opcode.B, imm=99)]
    _, status = _run(code)
    assert status.trap is TrapKind.BAD_PC


# --- container ---------------------------------------------------------------


def _round_trip_image() -> TranslatedImage:
    art = assemble("mov rax, 5\nmov rdi, rax\ncall __exit")
    return translate_image(art.image, art.entry)


def test_overlap_program_container_round_trip():
    from pathlib import Path

    art = assemble((Path(__file__).parent / "programs" / "overlap.s").read_text())
    timg = translate_image(art.image, art.entry)
    back = deserialize(serialize(timg))
    assert back == timg
    vm = run_translated(back, regs={Reg.RDI: 0})
    assert vm.status.exit_code == 0xC2


def test_serialize_deterministic_and_round_trip():
    timg = _round_trip_image()
    data = serialize(timg)
    assert data == serialize(timg)
    back = deserialize(data)
    assert back == timg  # attribution is excluded from equality
    assert serialize(back) == data


def test_container_errors():
    import zlib

    def with_crc(body: bytes) -> bytes:
        return body + zlib.crc32(body).to_bytes(4, "little")

    data = serialize(_round_trip_image())
    body = bytearray(data[:-4])
    # the checksum is validated first, so corruptions must recompute it to
    # reach the field checks
    bad_magic = bytearray(body)
    bad_magic[:4] = b"NOPE"
    with pytest.raises(BadMagic):
        deserialize(with_crc(bytes(bad_magic)))
    bad_version = bytearray(body)
    bad_version[4] = 0xFF
    with pytest.raises(VersionMismatch):
        deserialize(with_crc(bytes(bad_version)))
    with pytest.raises(ChecksumMismatch):
        flipped = bytearray(data)
        flipped[10] ^= 1
        deserialize(bytes(flipped))
    with pytest.raises(TruncatedContainer):
        deserialize(b"EL")
    with pytest.raises(TruncatedContainer):
        deserialize(with_crc(bytes(body[:20])))


@settings(max_examples=120, deadline=None)
@given(st.data())
def test_container_bit_flip_fuzz(data):
    payload = bytearray(serialize(_round_trip_image()))
    pos = data.draw(st.integers(0, len(payload) - 1))
    bit = data.draw(st.integers(0, 7))
    payload[pos] ^= 1 << bit
    try:
        back = deserialize(bytes(payload))
    except ContainerError:
        return  # detected corruption is the expected outcome
    # a flip that still parses must differ from the original in some field
    assert back != _round_trip_image()


def test_container_random_garbage():
    rng = random.Random(99)
    for size in (0, 1, 3, 17, 100):
        blob = rng.randbytes(size)
        with pytest.raises(ContainerError):
            deserialize(blob)
