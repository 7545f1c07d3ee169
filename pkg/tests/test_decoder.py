"""Decoder unit tests plus the objdump differential cross-check."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retile.decoder import decode
from retile.isa import (
    ImmOp,
    InvalidDecode,
    InvalidReason,
    MemOp,
    Mnemonic,
    Reg,
    RegOp,
)

from objdump_oracle import BLOCK, compare, have_objdump, run_objdump

needs_objdump = pytest.mark.skipif(not have_objdump(), reason="objdump not available")


def test_overlap_bytes_decode_both_ways():
    image = bytes([0xB0, 0xC3])
    at0 = decode(image, 0)
    assert at0.mnemonic is Mnemonic.MOV and at0.width == 8 and at0.length == 2
    assert at0.operands == (RegOp(Reg.RAX), ImmOp(0xC3))
    at1 = decode(image, 1)
    assert at1.mnemonic is Mnemonic.RET and at1.length == 1


def test_add_rcx_rdx():
    instr = decode(bytes([0x48, 0x01, 0xD1]), 0)
    assert instr.mnemonic is Mnemonic.ADD and instr.width == 64 and instr.length == 3
    assert instr.operands == (RegOp(Reg.RCX), RegOp(Reg.RDX))


def test_truncated_modrm():
    result = decode(bytes([0xFF]), 0)
    assert isinstance(result, InvalidDecode)
    assert result.reason is InvalidReason.TRUNCATED


def test_determinism_and_purity():
    rng = random.Random(7)
    image = bytes(rng.randrange(256) for _ in range(256))
    first = [decode(image, off) for off in range(len(image))]
    second = [decode(image, off) for off in range(len(image))]
    assert first == second


@settings(max_examples=300, deadline=None)
@given(st.binary(min_size=1, max_size=32), st.data())
def test_decode_is_pure_and_local(image, data):
    """Decoding depends only on the bytes from the offset onward."""
    offset = data.draw(st.integers(0, len(image) - 1))
    result = decode(image, offset)
    assert result == decode(image, offset)
    # appending unrelated bytes cannot change a successful decode
    if not isinstance(result, InvalidDecode):
        assert offset + result.length <= len(image)
        extended = decode(image + b"\xcc" * 4, offset)
        assert extended == result


def test_rejections():
    # high-byte register without REX
    assert isinstance(decode(bytes([0xB4, 0x01]), 0), InvalidDecode)
    # same encoding with a REX prefix selects SPL and is in the subset
    ok = decode(bytes([0x40, 0xB4, 0x01]), 0)
    assert ok.operands[0] == RegOp(Reg.RSP) and ok.width == 8
    # mov r64, imm64 is outside the subset
    assert isinstance(decode(bytes([0x48, 0xB8] + [0] * 8), 0), InvalidDecode)
    # lea with a register source is malformed
    bad = decode(bytes([0x48, 0x8D, 0xC1]), 0)
    assert isinstance(bad, InvalidDecode) and bad.reason is InvalidReason.MALFORMED
    # REX in front of an opcode it cannot modify
    assert isinstance(decode(bytes([0x41, 0x90]), 0), InvalidDecode)
    assert isinstance(decode(bytes([0x48, 0xC3]), 0), InvalidDecode)
    # ADC / memory-indirect branches / two-byte opcodes outside the subset
    assert isinstance(decode(bytes([0x83, 0xD0, 0x01]), 0), InvalidDecode)
    assert isinstance(decode(bytes([0xFF, 0x26]), 0), InvalidDecode)
    assert isinstance(decode(bytes([0x0F, 0x05]), 0), InvalidDecode)


def test_rip_relative_and_sib():
    instr = decode(bytes([0x48, 0x8B, 0x05, 0x10, 0x00, 0x00, 0x00]), 0)
    assert instr.operands[1] == MemOp(disp=0x10, rip_relative=True)
    instr = decode(bytes([0x48, 0x03, 0x44, 0x8B, 0xF0]), 0)
    assert instr.operands[1] == MemOp(base=Reg.RBX, index=Reg.RCX, scale=4, disp=-16)
    # no-base SIB (absolute disp32)
    instr = decode(bytes([0x48, 0x03, 0x04, 0x25, 0x00, 0x00, 0x7F, 0x00]), 0)
    assert instr.operands[1] == MemOp(disp=0x7F0000)
    # r12 as base requires SIB; r13 as base forces a displacement
    instr = decode(bytes([0x49, 0x8B, 0x04, 0x24]), 0)
    assert instr.operands[1] == MemOp(base=Reg.R12)
    instr = decode(bytes([0x49, 0x8B, 0x45, 0x00]), 0)
    assert instr.operands[1] == MemOp(base=Reg.R13, disp=0)


def _structured_candidates(rng: random.Random) -> list[bytes]:
    """Sample the subset encoding space independently of the assembler."""
    cands: list[bytes] = []
    modrm_opcodes = [0x01, 0x03, 0x29, 0x2B, 0x21, 0x23, 0x09, 0x0B,
                     0x31, 0x33, 0x39, 0x3B, 0x85, 0x89, 0x8B, 0x8D]
    for op in modrm_opcodes:
        for _ in range(40):
            rex = rng.choice([None, 0x48, 0x4C, 0x49, 0x4D, 0x4A, 0x4F, 0x40])
            modrm = rng.randrange(256)
            body = bytes([op, modrm])
            if (modrm >> 6) != 3 and (modrm & 7) == 4:
                body += bytes([rng.randrange(256)])  # SIB
            mod = modrm >> 6
            if mod == 1:
                body += bytes([rng.randrange(256)])
            elif mod == 2 or (mod == 0 and (modrm & 7) == 5):
                body += rng.randbytes(4)
            elif mod == 0 and (modrm & 7) == 4:
                pass  # possible no-base SIB disp32 handled below
            if rex is not None:
                body = bytes([rex]) + body
            cands.append(body + rng.randbytes(6))
    for base in (0x50, 0x58, 0xB0, 0xB8):
        for r in range(8):
            for rex in (None, 0x40, 0x41, 0x44):
                body = bytes([base + r, *rng.randbytes(5)])
                if rex is not None:
                    body = bytes([rex]) + body
                cands.append(body)
    for op in (0x74, 0x75, 0x7C, 0x7D, 0x7E, 0x7F, 0x72, 0x73, 0xEB):
        cands.append(bytes([op, rng.randrange(256)]))
        cands.append(bytes([0x0F, op + 0x10]) + rng.randbytes(4))
    for op in (0xE8, 0xE9):
        cands.append(bytes([op]) + rng.randbytes(4))
    for ext_op in (0x83, 0x81, 0xC7, 0xC1, 0xD1, 0xFF):
        for _ in range(60):
            rex = rng.choice([None, 0x48, 0x49])
            modrm = rng.randrange(256)
            body = bytes([ext_op, modrm])
            if (modrm & 7) == 4 and modrm >> 6 != 3:
                body += bytes([rng.randrange(256)])
            mod = modrm >> 6
            if mod == 1:
                body += bytes([rng.randrange(256)])
            elif mod == 2 or (mod == 0 and (modrm & 7) == 5):
                body += rng.randbytes(4)
            body += rng.randbytes(4)
            if rex is not None:
                body = bytes([rex]) + body
            cands.append(body)
    cands += [bytes([0xC3]), bytes([0x90]), bytes([0xCC])]
    return cands


@needs_objdump
def test_structured_cross_check():
    rng = random.Random(0xDEC0DE)
    candidates = [c[:15] for c in _structured_candidates(rng)]
    decoded = [decode(c, 0) for c in candidates]
    oracle = run_objdump(candidates)
    valid = 0
    for i, (cand, mine, theirs) in enumerate(zip(candidates, decoded, oracle)):
        if isinstance(mine, InvalidDecode):
            continue
        valid += 1
        mismatch = compare(mine, theirs, base=i * BLOCK)
        assert mismatch is None, f"bytes {cand.hex()}: {mismatch}"
    assert valid > 500  # the sampler must actually exercise the subset


@needs_objdump
def test_random_fuzz_cross_check():
    rng = random.Random(0xF022)
    candidates = [rng.randbytes(15) for _ in range(4000)]
    decoded = [decode(c, 0) for c in candidates]
    oracle = run_objdump(candidates)
    checked = 0
    for i, (cand, mine, theirs) in enumerate(zip(candidates, decoded, oracle)):
        if isinstance(mine, InvalidDecode):
            continue
        checked += 1
        mismatch = compare(mine, theirs, base=i * BLOCK)
        assert mismatch is None, f"bytes {cand.hex()}: {mismatch}"
    assert checked > 100
