"""A small two-pass assembler for the supported subset (test authoring).

Syntax, one statement per line:

    Label:                ; label definition (may share a line with code)
    mov rax, rcx          ; intel operand order, lowercase
    add qword [rbx+rcx*4+0x10], rdx
    jz Label              ; rel8/rel32 chosen automatically
    call __write_char     ; hostcall slots resolve to their absolute address
    .byte 0xB0, 0xC3      ; raw bytes, verbatim
    .entry Label          ; entry point (defaults to offset 0)

Labels used as immediates (`mov eax, Table`) resolve to absolute addresses
(image base + offset), matching how the interpreter and translated code see
them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import MemOp, Mnemonic, Reg, REG8_NAMES, REG32_NAMES, REG_NAMES
from .memory import HOSTCALL_EXIT, HOSTCALL_WRITE_CHAR, HOSTCALL_WRITE_U64, IMAGE_BASE

__all__ = ["assemble", "AsmResult", "AsmError"]

BUILTIN_SYMBOLS = {
    "__exit": HOSTCALL_EXIT,
    "__write_char": HOSTCALL_WRITE_CHAR,
    "__write_u64": HOSTCALL_WRITE_U64,
}

_REG64 = {name: reg for reg, name in REG_NAMES.items()}
_REG32 = {name: reg for reg, name in REG32_NAMES.items()}
_REG8 = {name: reg for reg, name in REG8_NAMES.items()}
# AH..BH exist in real assemblers but are outside the subset; name them so the
# error is precise.
_UNSUPPORTED_REG8 = {"ah", "ch", "dh", "bh"}

_LABEL_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")


class AsmError(ValueError):
    def __init__(self, message: str, line_no: int | None = None) -> None:
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class AsmResult:
    image: bytes
    symbols: dict[str, int]  # label -> byte offset
    instruction_offsets: tuple[int, ...]  # real instruction starts (ground truth)
    entry: int

    def symbols_text(self) -> str:
        """Sidecar ground-truth listing consumed by the metrics command."""
        lines = [f"entry {self.entry}"]
        lines += [f"insn {off}" for off in self.instruction_offsets]
        lines += [f"label {name} {off}" for name, off in sorted(self.symbols.items())]
        return "\n".join(lines) + "\n"


def parse_symbols_text(text: str) -> tuple[int, list[int], dict[str, int]]:
    entry = 0
    insns: list[int] = []
    labels: dict[str, int] = {}
    for raw in text.splitlines():
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "entry":
            entry = int(parts[1])
        elif parts[0] == "insn":
            insns.append(int(parts[1]))
        elif parts[0] == "label":
            labels[parts[1]] = int(parts[2])
    return entry, insns, labels


@dataclass
class _Operand:
    kind: str  # "reg" | "mem" | "imm" | "sym"
    reg: Reg | None = None
    width: int | None = None
    mem: MemOp | None = None
    mem_label: str | None = None  # rip-relative label reference
    value: int = 0
    symbol: str | None = None


def _parse_int(text: str) -> int | None:
    try:
        return int(text, 0)
    except ValueError:
        return None


def _parse_mem(body: str, width_hint: int | None, line_no: int) -> _Operand:
    base: Reg | None = None
    index: Reg | None = None
    scale = 1
    disp = 0
    rip = False
    label: str | None = None

    # split on +/- at top level; keep sign with each term
    terms: list[str] = []
    current = ""
    sign = "+"
    for ch in body:
        if ch in "+-":
            if current.strip():
                terms.append(sign + current.strip())
            current = ""
            sign = ch
        else:
            current += ch
    if current.strip():
        terms.append(sign + current.strip())
    if not terms:
        raise AsmError("empty memory operand", line_no)

    for term in terms:
        sign, text = term[0], term[1:].strip()
        if "*" in text:
            reg_text, _, scale_text = text.partition("*")
            reg = _REG64.get(reg_text.strip())
            sc = _parse_int(scale_text.strip())
            if reg is None or sc not in (1, 2, 4, 8) or sign == "-":
                raise AsmError(f"bad index term {term!r}", line_no)
            if index is not None:
                raise AsmError("two index registers", line_no)
            index, scale = reg, sc
        elif text == "rip":
            if sign == "-":
                raise AsmError("negative rip term", line_no)
            rip = True
        elif text in _REG64:
            if sign == "-":
                raise AsmError("negative register term", line_no)
            if base is None:
                base = _REG64[text]
            elif index is None:
                index, scale = _REG64[text], 1
            else:
                raise AsmError("too many registers in address", line_no)
        else:
            value = _parse_int(text)
            if value is not None:
                disp += value if sign == "+" else -value
            elif _LABEL_RE.match(text) and sign == "+":
                if label is not None:
                    raise AsmError("two labels in address", line_no)
                label = text
            else:
                raise AsmError(f"bad address term {term!r}", line_no)

    if label is not None:
        if base is not None or index is not None or rip:
            raise AsmError("label address cannot mix with registers", line_no)
        return _Operand(kind="mem", width=width_hint, mem_label=label, value=disp)
    if rip:
        if base is not None or index is not None:
            raise AsmError("rip-relative address cannot carry registers", line_no)
        mem = MemOp(disp=disp, rip_relative=True)
    else:
        if base is None and index is None:
            # absolute: SIB with no base, disp32
            mem = MemOp(disp=disp)
        else:
            mem = MemOp(base=base, index=index, scale=scale if index else 1, disp=disp)
    return _Operand(kind="mem", width=width_hint, mem=mem)


def _parse_operand(text: str, line_no: int) -> _Operand:
    text = text.strip()
    width_hint: int | None = None
    for kw, width in (("qword", 64), ("dword", 32), ("byte", 8)):
        if text.startswith(kw + " ") or text.startswith(kw + "["):
            text = text[len(kw):].strip()
            if text.startswith("ptr"):
                text = text[3:].strip()
            width_hint = width
            break
    if text.startswith("["):
        if not text.endswith("]"):
            raise AsmError(f"unterminated memory operand {text!r}", line_no)
        return _parse_mem(text[1:-1], width_hint, line_no)
    if text in _REG64:
        return _Operand(kind="reg", reg=_REG64[text], width=64)
    if text in _REG32:
        return _Operand(kind="reg", reg=_REG32[text], width=32)
    if text in _REG8:
        return _Operand(kind="reg", reg=_REG8[text], width=8)
    if text in _UNSUPPORTED_REG8:
        raise AsmError(f"register {text!r} is outside the subset", line_no)
    value = _parse_int(text)
    if value is not None:
        return _Operand(kind="imm", value=value)
    if _LABEL_RE.match(text):
        return _Operand(kind="sym", symbol=text)
    raise AsmError(f"cannot parse operand {text!r}", line_no)


# ---------------------------------------------------------------------------
# encoding


def _rex(w: int = 0, r: int = 0, x: int = 0, b: int = 0) -> int:
    return 0x40 | (w << 3) | (r << 2) | (x << 1) | b


def _encode_modrm(reg_field: int, rm: _Operand, width: int) -> tuple[int | None, bytes]:
    """(REX or None, ModRM+SIB+disp bytes) for a reg-field + r/m pair.

    The prefix is returned separately: ModRM bytes 0x40..0x4F are legal
    (mod=01 with reg field 0), so the caller cannot infer REX from the
    first body byte.
    """
    w = 1 if width == 64 else 0
    r = (reg_field >> 3) & 1
    x = 0
    b = 0
    body = bytearray()

    if rm.kind == "reg":
        b = (rm.reg >> 3) & 1
        body.append(0xC0 | ((reg_field & 7) << 3) | (rm.reg & 7))
    else:
        mem = rm.mem
        assert mem is not None
        if mem.rip_relative:
            body.append(((reg_field & 7) << 3) | 0x05)
            body += (mem.disp & 0xFFFFFFFF).to_bytes(4, "little")
        elif mem.base is None and mem.index is None:
            body.append(((reg_field & 7) << 3) | 0x04)
            body.append(0x25)  # SIB: no index, base=101 (disp32)
            body += (mem.disp & 0xFFFFFFFF).to_bytes(4, "little")
        else:
            need_sib = mem.index is not None or (mem.base is not None and (mem.base & 7) == 4)
            disp = mem.disp
            base = mem.base
            # RBP/R13 as base with mod=00 means rip/disp32; force disp8
            force_disp = base is not None and (base & 7) == 5
            if disp == 0 and not force_disp:
                mod, disp_bytes = 0, b""
            elif -128 <= disp <= 127:
                mod, disp_bytes = 1, (disp & 0xFF).to_bytes(1, "little")
            else:
                mod, disp_bytes = 2, (disp & 0xFFFFFFFF).to_bytes(4, "little")
            if need_sib:
                if mem.index is not None:
                    x = (mem.index >> 3) & 1
                    index_bits = mem.index & 7
                    if index_bits == 4 and x == 0:
                        raise AsmError("rsp cannot be an index register")
                else:
                    index_bits = 4
                if base is None:
                    # no-base SIB requires mod=00 + disp32
                    mod = 0
                    disp_bytes = (disp & 0xFFFFFFFF).to_bytes(4, "little")
                    base_bits = 5
                else:
                    b = (base >> 3) & 1
                    base_bits = base & 7
                scale_bits = {1: 0, 2: 1, 4: 2, 8: 3}[mem.scale]
                body.append((mod << 6) | ((reg_field & 7) << 3) | 0x04)
                body.append((scale_bits << 6) | (index_bits << 3) | base_bits)
                body += disp_bytes
            else:
                b = (base >> 3) & 1
                body.append((mod << 6) | ((reg_field & 7) << 3) | (base & 7))
                body += disp_bytes

    rex = _rex(w, r, x, b) if (w or r or x or b) else None
    return rex, bytes(body)


_ALU_MR = {Mnemonic.ADD: 0x01, Mnemonic.SUB: 0x29, Mnemonic.AND: 0x21,
           Mnemonic.OR: 0x09, Mnemonic.XOR: 0x31, Mnemonic.CMP: 0x39}
_ALU_RM = {Mnemonic.ADD: 0x03, Mnemonic.SUB: 0x2B, Mnemonic.AND: 0x23,
           Mnemonic.OR: 0x0B, Mnemonic.XOR: 0x33, Mnemonic.CMP: 0x3B}
_ALU_EXT = {Mnemonic.ADD: 0, Mnemonic.OR: 1, Mnemonic.AND: 4,
            Mnemonic.SUB: 5, Mnemonic.XOR: 6, Mnemonic.CMP: 7}
_JCC_OPC = {Mnemonic.JZ: 0x74, Mnemonic.JNZ: 0x75, Mnemonic.JL: 0x7C,
            Mnemonic.JGE: 0x7D, Mnemonic.JLE: 0x7E, Mnemonic.JG: 0x7F,
            Mnemonic.JB: 0x72, Mnemonic.JAE: 0x73}

_MNEMONICS = {m.value: m for m in (
    Mnemonic.MOV, Mnemonic.LEA, Mnemonic.ADD, Mnemonic.SUB, Mnemonic.AND,
    Mnemonic.OR, Mnemonic.XOR, Mnemonic.CMP, Mnemonic.TEST, Mnemonic.INC,
    Mnemonic.DEC, Mnemonic.SHL, Mnemonic.PUSH, Mnemonic.POP, Mnemonic.CALL,
    Mnemonic.RET, Mnemonic.JMP, Mnemonic.JZ, Mnemonic.JNZ, Mnemonic.JL,
    Mnemonic.JGE, Mnemonic.JLE, Mnemonic.JG, Mnemonic.JB, Mnemonic.JAE,
    Mnemonic.NOP, Mnemonic.INT3,
)}


@dataclass
class _Statement:
    line_no: int
    mnemonic: Mnemonic | None = None  # None for .byte
    operands: list[_Operand] = field(default_factory=list)
    raw_bytes: bytes = b""
    offset: int = 0
    size: int = 0
    wide_branch: bool = False  # rel32 chosen for a branch


class _Assembler:
    def __init__(self, text: str) -> None:
        self.text = text
        self.statements: list[_Statement] = []
        self.labels: dict[str, int] = {}  # label -> statement index
        self.entry_label: str | None = None

    # -- parsing ----------------------------------------------------------

    def parse(self) -> None:
        pending_labels: list[tuple[str, int]] = []
        for line_no, raw in enumerate(self.text.splitlines(), start=1):
            line = raw.split(";", 1)[0].strip()
            while line:
                head, colon, rest = line.partition(":")
                if colon and _LABEL_RE.match(head.strip()) and not head.strip().startswith("."):
                    label = head.strip()
                    if label in self.labels or any(l == label for l, _ in pending_labels):
                        raise AsmError(f"duplicate label {label!r}", line_no)
                    if label in BUILTIN_SYMBOLS:
                        raise AsmError(f"label {label!r} shadows a builtin", line_no)
                    pending_labels.append((label, line_no))
                    line = rest.strip()
                    continue
                break
            if not line:
                continue
            stmt = self._parse_statement(line, line_no)
            if stmt is None:  # directive consumed (e.g. .entry)
                continue
            for label, _ in pending_labels:
                self.labels[label] = len(self.statements)
            pending_labels.clear()
            self.statements.append(stmt)
        for label, line_no in pending_labels:
            # trailing labels point at end of image; attach a sentinel index
            self.labels[label] = len(self.statements)

    def _parse_statement(self, line: str, line_no: int) -> _Statement | None:
        if line.startswith(".byte"):
            parts = [p.strip() for p in line[len(".byte"):].split(",")]
            data = bytearray()
            for part in parts:
                value = _parse_int(part)
                if value is None or not 0 <= value <= 0xFF:
                    raise AsmError(f"bad .byte value {part!r}", line_no)
                data.append(value)
            return _Statement(line_no=line_no, raw_bytes=bytes(data))
        if line.startswith(".entry"):
            label = line[len(".entry"):].strip()
            if not _LABEL_RE.match(label):
                raise AsmError(f"bad .entry {label!r}", line_no)
            self.entry_label = label
            return None
        if line.startswith("."):
            raise AsmError(f"unknown directive {line.split()[0]!r}", line_no)

        mnemonic_text, _, rest = line.partition(" ")
        mnemonic = _MNEMONICS.get(mnemonic_text)
        if mnemonic is None:
            raise AsmError(f"unknown mnemonic {mnemonic_text!r}", line_no)
        operands = []
        if rest.strip():
            depth = 0
            parts = []
            current = ""
            for ch in rest:
                if ch == "[":
                    depth += 1
                elif ch == "]":
                    depth -= 1
                if ch == "," and depth == 0:
                    parts.append(current)
                    current = ""
                else:
                    current += ch
            parts.append(current)
            operands = [_parse_operand(p, line_no) for p in parts]
        return _Statement(line_no=line_no, mnemonic=mnemonic, operands=operands)

    # -- encoding ---------------------------------------------------------

    def _symbol_abs(self, stmt: _Statement, op: _Operand) -> int:
        """Absolute address of a symbol operand."""
        if op.symbol in BUILTIN_SYMBOLS:
            return BUILTIN_SYMBOLS[op.symbol]
        idx = self.labels.get(op.symbol)
        if idx is None:
            raise AsmError(f"unresolved label {op.symbol!r}", stmt.line_no)
        offset = (self.statements[idx].offset if idx < len(self.statements)
                  else self._image_size())
        return IMAGE_BASE + offset

    def _image_size(self) -> int:
        if not self.statements:
            return 0
        last = self.statements[-1]
        return last.offset + last.size

    def _encode(self, stmt: _Statement) -> bytes:
        if stmt.mnemonic is None:
            return stmt.raw_bytes
        try:
            return self._encode_instruction(stmt)
        except AsmError:
            raise
        except Exception as exc:  # encoding bug surfaces with line context
            raise AsmError(f"cannot encode: {exc}", stmt.line_no)

    def _operand_width(self, stmt: _Statement) -> int:
        widths = {op.width for op in stmt.operands if op.width is not None}
        if len(widths) > 1:
            raise AsmError(f"operand width mismatch {sorted(widths)}", stmt.line_no)
        if not widths:
            raise AsmError("operand width unknown; add qword/dword", stmt.line_no)
        return widths.pop()

    def _resolve_mem(self, stmt: _Statement, op: _Operand) -> _Operand:
        if op.kind == "mem" and op.mem_label is not None:
            target = self._symbol_abs(stmt, _Operand(kind="sym", symbol=op.mem_label))
            # rip-relative: disp filled per-encoding-size below, offset known
            end = stmt.offset + stmt.size
            disp = target - (IMAGE_BASE + end) + op.value
            return _Operand(kind="mem", width=op.width,
                            mem=MemOp(disp=disp, rip_relative=True))
        return op

    def _encode_instruction(self, stmt: _Statement) -> bytes:
        m = stmt.mnemonic
        ops = [self._resolve_mem(stmt, op) for op in stmt.operands]

        if m in (Mnemonic.RET, Mnemonic.NOP, Mnemonic.INT3):
            if ops:
                raise AsmError(f"{m.value} takes no operands", stmt.line_no)
            return bytes([{Mnemonic.RET: 0xC3, Mnemonic.NOP: 0x90,
                           Mnemonic.INT3: 0xCC}[m]])

        if m in (Mnemonic.PUSH, Mnemonic.POP):
            (op,) = ops
            if op.kind != "reg" or op.width != 64:
                raise AsmError(f"{m.value} needs a 64-bit register", stmt.line_no)
            base = 0x50 if m is Mnemonic.PUSH else 0x58
            prefix = b"\x41" if op.reg >= 8 else b""
            return prefix + bytes([base + (op.reg & 7)])

        if m in (Mnemonic.INC, Mnemonic.DEC):
            (op,) = ops
            width = self._operand_width(stmt)
            if width == 8:
                raise AsmError("8-bit inc/dec is outside the subset", stmt.line_no)
            ext = 0 if m is Mnemonic.INC else 1
            return self._with_opcode(0xFF, ext, op, width)

        if m is Mnemonic.SHL:
            dst, count = ops
            width = self._operand_width(stmt)
            if width == 8:
                raise AsmError("8-bit shl is outside the subset", stmt.line_no)
            if count.kind != "imm" or not 0 <= count.value <= 255:
                raise AsmError("shl needs an imm8 count", stmt.line_no)
            if count.value == 1:
                return self._with_opcode(0xD1, 4, dst, width)
            return self._with_opcode(0xC1, 4, dst, width) + bytes([count.value])

        if m is Mnemonic.LEA:
            dst, src = ops
            if dst.kind != "reg" or src.kind != "mem":
                raise AsmError("lea needs reg, mem", stmt.line_no)
            width = dst.width
            if width == 8:
                raise AsmError("8-bit lea is invalid", stmt.line_no)
            return self._with_reg_rm(0x8D, dst.reg, src, width)

        if m in (Mnemonic.CALL, Mnemonic.JMP) and len(ops) == 1 and ops[0].kind == "reg":
            op = ops[0]
            if op.width != 64:
                raise AsmError("indirect branch needs a 64-bit register", stmt.line_no)
            ext = 2 if m is Mnemonic.CALL else 4
            prefix = b"\x41" if op.reg >= 8 else b""
            return prefix + bytes([0xFF, 0xC0 | (ext << 3) | (op.reg & 7)])

        if m is Mnemonic.CALL:
            (op,) = ops
            target = self._branch_target(stmt, op)
            rel = target - (IMAGE_BASE + stmt.offset + 5)
            self._check_rel32(rel, stmt)
            return b"\xe8" + (rel & 0xFFFFFFFF).to_bytes(4, "little")

        if m is Mnemonic.JMP:
            (op,) = ops
            target = self._branch_target(stmt, op)
            if not stmt.wide_branch:
                rel = target - (IMAGE_BASE + stmt.offset + 2)
                if -128 <= rel <= 127:
                    return b"\xeb" + (rel & 0xFF).to_bytes(1, "little")
                stmt.wide_branch = True
            rel = target - (IMAGE_BASE + stmt.offset + 5)
            self._check_rel32(rel, stmt)
            return b"\xe9" + (rel & 0xFFFFFFFF).to_bytes(4, "little")

        if m in _JCC_OPC:
            (op,) = ops
            target = self._branch_target(stmt, op)
            if not stmt.wide_branch:
                rel = target - (IMAGE_BASE + stmt.offset + 2)
                if -128 <= rel <= 127:
                    return bytes([_JCC_OPC[m]]) + (rel & 0xFF).to_bytes(1, "little")
                stmt.wide_branch = True
            rel = target - (IMAGE_BASE + stmt.offset + 6)
            self._check_rel32(rel, stmt)
            return bytes([0x0F, _JCC_OPC[m] + 0x10]) + (rel & 0xFFFFFFFF).to_bytes(4, "little")

        if m is Mnemonic.MOV:
            return self._encode_mov(stmt, ops)

        if m is Mnemonic.TEST:
            a, b2 = ops
            width = self._operand_width(stmt)
            if width == 8:
                raise AsmError("8-bit test is outside the subset", stmt.line_no)
            if b2.kind != "reg":
                raise AsmError("test needs its source in a register", stmt.line_no)
            return self._with_reg_rm(0x85, b2.reg, a, width)

        if m in _ALU_MR:
            dst, src = ops
            width = self._operand_width(stmt)
            if width == 8:
                raise AsmError(f"8-bit {m.value} is outside the subset", stmt.line_no)
            if src.kind == "imm" or src.kind == "sym":
                imm = src.value if src.kind == "imm" else self._symbol_abs(stmt, src)
                ext = _ALU_EXT[m]
                if -128 <= imm <= 127:
                    return self._with_opcode(0x83, ext, dst, width) + (imm & 0xFF).to_bytes(1, "little")
                self._check_imm32(imm, width, stmt)
                return self._with_opcode(0x81, ext, dst, width) + (imm & 0xFFFFFFFF).to_bytes(4, "little")
            if dst.kind == "reg" and src.kind == "reg":
                return self._with_reg_rm(_ALU_MR[m], src.reg, dst, width)
            if dst.kind == "mem" and src.kind == "reg":
                return self._with_reg_rm(_ALU_MR[m], src.reg, dst, width)
            if dst.kind == "reg" and src.kind == "mem":
                return self._with_reg_rm(_ALU_RM[m], dst.reg, src, width)
            raise AsmError(f"unsupported {m.value} operand combination", stmt.line_no)

        raise AsmError(f"cannot encode {m.value}", stmt.line_no)

    def _encode_mov(self, stmt: _Statement, ops: list[_Operand]) -> bytes:
        dst, src = ops
        if src.kind == "sym":
            src = _Operand(kind="imm", value=self._symbol_abs(stmt, src))
        width = self._operand_width(stmt)
        if src.kind == "imm":
            imm = src.value
            if dst.kind == "reg":
                if width == 8:
                    if not -128 <= imm <= 255:
                        raise AsmError("imm8 out of range", stmt.line_no)
                    prefix = b""
                    if dst.reg >= 8:
                        prefix = b"\x41"
                    elif dst.reg >= 4:
                        prefix = b"\x40"  # SPL/BPL/SIL/DIL need a REX
                    return prefix + bytes([0xB0 + (dst.reg & 7)]) + bytes([imm & 0xFF])
                if width == 32:
                    if not -(1 << 31) <= imm < (1 << 32):
                        raise AsmError("imm32 out of range", stmt.line_no)
                    prefix = b"\x41" if dst.reg >= 8 else b""
                    return prefix + bytes([0xB8 + (dst.reg & 7)]) + (imm & 0xFFFFFFFF).to_bytes(4, "little")
            if width == 8:
                raise AsmError("8-bit mov to memory is outside the subset", stmt.line_no)
            self._check_imm32(imm, width, stmt)
            return self._with_opcode(0xC7, 0, dst, width) + (imm & 0xFFFFFFFF).to_bytes(4, "little")
        if width == 8:
            raise AsmError("8-bit mov supports only reg, imm8", stmt.line_no)
        if dst.kind == "reg" and src.kind == "reg":
            return self._with_reg_rm(0x89, src.reg, dst, width)
        if dst.kind == "mem" and src.kind == "reg":
            return self._with_reg_rm(0x89, src.reg, dst, width)
        if dst.kind == "reg" and src.kind == "mem":
            return self._with_reg_rm(0x8B, dst.reg, src, width)
        raise AsmError("unsupported mov operand combination", stmt.line_no)

    def _with_reg_rm(self, opcode: int, reg: Reg, rm: _Operand, width: int) -> bytes:
        rex, body = _encode_modrm(int(reg), rm, width)
        prefix = bytes([rex]) if rex is not None else b""
        return prefix + bytes([opcode]) + body

    def _with_opcode(self, opcode: int, ext: int, rm: _Operand, width: int) -> bytes:
        rex, body = _encode_modrm(ext, rm, width)
        prefix = bytes([rex]) if rex is not None else b""
        return prefix + bytes([opcode]) + body

    def _branch_target(self, stmt: _Statement, op: _Operand) -> int:
        if op.kind == "sym":
            return self._symbol_abs(stmt, op)
        if op.kind == "imm":
            return IMAGE_BASE + op.value  # numeric branch target = image offset
        raise AsmError("branch target must be a label or offset", stmt.line_no)

    def _check_rel32(self, rel: int, stmt: _Statement) -> None:
        if not -(1 << 31) <= rel < (1 << 31):
            raise AsmError("branch displacement overflows rel32", stmt.line_no)

    def _check_imm32(self, imm: int, width: int, stmt: _Statement) -> None:
        if width == 64:
            if not -(1 << 31) <= imm < (1 << 31):
                raise AsmError("imm32 (sign-extended) out of range", stmt.line_no)
        else:
            if not -(1 << 31) <= imm < (1 << 32):
                raise AsmError("imm32 out of range", stmt.line_no)

    # -- driver -----------------------------------------------------------

    def assemble(self) -> AsmResult:
        self.parse()
        # fixpoint over branch widths and offsets
        for stmt in self.statements:
            stmt.size = len(stmt.raw_bytes) if stmt.mnemonic is None else 2
        for _ in range(len(self.statements) + 2):
            offset = 0
            for stmt in self.statements:
                stmt.offset = offset
                offset += stmt.size
            changed = False
            for stmt in self.statements:
                encoded = self._encode(stmt)
                if len(encoded) != stmt.size:
                    stmt.size = len(encoded)
                    changed = True
            if not changed:
                break
        else:
            raise AsmError("assembly did not converge")

        image = bytearray()
        insn_offsets: list[int] = []
        for stmt in self.statements:
            assert stmt.offset == len(image)
            encoded = self._encode(stmt)
            if stmt.mnemonic is not None:
                insn_offsets.append(stmt.offset)
            image += encoded

        symbols = {}
        for label, idx in self.labels.items():
            symbols[label] = (self.statements[idx].offset if idx < len(self.statements)
                              else len(image))
        entry = 0
        if self.entry_label is not None:
            if self.entry_label not in symbols:
                raise AsmError(f"unresolved .entry label {self.entry_label!r}")
            entry = symbols[self.entry_label]
        return AsmResult(image=bytes(image), symbols=symbols,
                         instruction_offsets=tuple(insn_offsets), entry=entry)


def assemble(text: str) -> AsmResult:
    """Assemble a program listing into an image plus its symbol table."""
    return _Assembler(text).assemble()
