"""Reference-interpreter semantics: goldens, width discipline, traps, hostcalls."""

from __future__ import annotations

from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

from retile.asm import assemble
from retile.interp import MachineState, run_source, step
from retile.isa import CF, ZF, Reg
from retile.memory import IMAGE_BASE, INITIAL_RSP, STACK_HI, STACK_LO
from retile.result import StatusKind, TrapKind

PROGRAMS = Path(__file__).parent / "programs"


def run_program(name: str, rdi: int, fuel: int = 100_000):
    result = assemble((PROGRAMS / name).read_text())
    return run_source(result.image, result.entry, fuel=fuel, regs={Reg.RDI: rdi})


def test_overlap_golden():
    for rdi, expected in ((0, 0xC2), (1, 0xC3), (7, 0xC3), (1 << 63, 0xC3)):
        res = run_program("overlap.s", rdi)
        assert res.status.kind is StatusKind.HALTED
        assert res.status.exit_code & 0xFF == expected
        assert res.gprs[Reg.RAX] == expected  # xor eax,eax zeroed the rest


def test_computed_jump_golden():
    for i in range(8):
        res = run_program("computed_jump.s", i)
        assert res.status.kind is StatusKind.HALTED
        assert res.gprs[Reg.RAX] == 4 - (i & 3)
        assert res.status.exit_code == 4 - (i & 3)


def test_partial_register_write():
    src = assemble("mov al, 0xC3\nret")
    state = MachineState.boot(src.image, 0)
    state.gpr[Reg.RAX] = 0x1122334455667700
    step(state, src.image)
    assert state.gpr[Reg.RAX] == 0x11223344556677C3


def test_zero_extension_and_zf():
    src = assemble("xor eax, eax\nret")
    state = MachineState.boot(src.image, 0)
    state.gpr[Reg.RAX] = (1 << 64) - 1
    step(state, src.image)
    assert state.gpr[Reg.RAX] == 0
    assert state.flags & ZF


def test_call_pushes_site_plus_five():
    src = assemble("Main: call Target\nTarget: ret")
    state = MachineState.boot(src.image, 0)
    step(state, src.image)
    top = state.memory.read(state.gpr[Reg.RSP], 8)
    assert top == IMAGE_BASE + 5
    assert state.rip == IMAGE_BASE + src.symbols["Target"]


def test_push_pop_rsp_semantics():
    src = assemble("push rsp\npop rax\nret")
    res = run_source(src.image, 0, fuel=10)
    assert res.gprs[Reg.RAX] == INITIAL_RSP  # push rsp stores the old value
    src = assemble("push rax\npop rsp\nret")
    state = MachineState.boot(src.image, 0, regs={Reg.RAX: 0x7F8000})
    step(state, src.image)
    step(state, src.image)
    assert state.gpr[Reg.RSP] == 0x7F8000  # pop rsp keeps the loaded value


def test_memory_rmw_and_flags():
    src = assemble(
        "mov ebx, 0x7f8000\n"
        "mov qword [rbx], -1\n"
        "add qword [rbx], rcx\n"
        "ret\n"
    )
    res = run_source(src.image, 0, fuel=10, regs={Reg.RCX: 1})
    assert res.flags & CF and res.flags & ZF
    lo = 0x7F8000 - STACK_LO
    assert res.stack[lo:lo + 8] == bytes(8)


def test_traps():
    # write into the image
    src = assemble("mov ebx, 0x400000\nmov qword [rbx], rax\nret")
    res = run_source(src.image, 0, fuel=10)
    assert res.status.trap is TrapKind.WRITE_TO_IMAGE
    # load far outside both regions
    src = assemble("mov rbx, [rcx]\nret")
    res = run_source(src.image, 0, fuel=10, regs={Reg.RCX: 0x1234})
    assert res.status.trap is TrapKind.BAD_MEMORY
    # jump to an invalid decode
    src = assemble("jmp Bad\nBad: .byte 0x0f, 0x05")
    res = run_source(src.image, 0, fuel=10)
    assert res.status.trap is TrapKind.INVALID_DECODE
    # int3
    res = run_source(assemble("int3").image, 0, fuel=10)
    assert res.status.trap is TrapKind.INT3
    # computed jump outside image and hostcall slots
    src = assemble("jmp rax")
    res = run_source(src.image, 0, fuel=10, regs={Reg.RAX: 0x123456})
    assert res.status.trap is TrapKind.UNTRANSLATED_TARGET
    # falling off the end of the image
    res = run_source(assemble("nop").image, 0, fuel=10)
    assert res.status.trap is TrapKind.UNTRANSLATED_TARGET


def test_hostcall_output_stream():
    src = assemble(
        "mov edi, 0x48\n"
        "call __write_char\n"
        "mov edi, 0x69\n"
        "call __write_char\n"
        "mov rdi, -2\n"
        "call __write_u64\n"
        "mov edi, 7\n"
        "call __exit\n"
    )
    res = run_source(src.image, 0, fuel=100)
    assert res.status.kind is StatusKind.HALTED and res.status.exit_code == 7
    assert res.output == b"Hi" + ((1 << 64) - 2).to_bytes(8, "little")


def test_fuel_exhaustion_is_distinct():
    src = assemble("Spin: jmp Spin")
    res = run_source(src.image, 0, fuel=50)
    assert res.status.kind is StatusKind.FUEL_EXHAUSTED
    assert res.steps == 50


def test_oracle_self_consistency():
    text = (PROGRAMS / "computed_jump.s").read_text()
    src = assemble(text)
    a = run_source(src.image, src.entry, fuel=1000, regs={Reg.RDI: 3})
    b = run_source(src.image, src.entry, fuel=1000, regs={Reg.RDI: 3})
    assert a == b


def test_rip_relative_load_reads_image():
    src = assemble(
        "Main: mov rax, [Data]\nret\n"
        "Data: .byte 0xEF, 0xBE, 0xAD, 0xDE, 0x00, 0x00, 0x00, 0x00\n"
    )
    res = run_source(src.image, 0, fuel=10)
    assert res.gprs[Reg.RAX] == 0xDEADBEEF


@settings(max_examples=200, deadline=None)
@given(st.integers(0, (1 << 64) - 1), st.integers(0, (1 << 64) - 1),
       st.sampled_from(["add", "sub", "and", "xor"]),
       st.sampled_from([("eax", "ecx", 32), ("rax", "rcx", 64)]))
def test_width_discipline_property(a, b, op, pair):
    """32-bit writes zero-extend; 64-bit writes carry all bits."""
    dst, src, width = pair
    art = assemble(f"{op} {dst}, {src}\nret")
    state = MachineState.boot(art.image, 0, regs={Reg.RAX: a, Reg.RCX: b})
    step(state, art.image)
    if width == 32:
        assert state.gpr[Reg.RAX] >> 32 == 0
    assert state.gpr[Reg.RCX] == b  # the source operand is untouched


@settings(max_examples=100, deadline=None)
@given(st.integers(0, (1 << 64) - 1), st.integers(0, 255))
def test_8bit_write_preserves_upper_bits(rax, imm):
    art = assemble(f"mov al, {imm}\nret")
    state = MachineState.boot(art.image, 0, regs={Reg.RAX: rax})
    step(state, art.image)
    assert state.gpr[Reg.RAX] == (rax & ~0xFF) | imm


def test_stack_bounds():
    # pushing below the stack region traps
    src = assemble("mov esp, 0x7f0000\npush rax\nret")
    res = run_source(src.image, 0, fuel=10)
    assert res.status.trap is TrapKind.BAD_MEMORY
    # popping at the very top of the region is legal
    src = assemble(f"mov esp, {STACK_HI - 8:#x}\npop rax\nret")
    state = MachineState.boot(src.image, 0)
    step(state, src.image)
    assert step(state, src.image) is None
