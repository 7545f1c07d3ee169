"""Execution outcomes shared by the source interpreter and the target VM."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .isa import FLAG_NAMES, Reg

__all__ = [
    "TrapKind", "TrapError", "StatusKind", "RunStatus", "ExecutionResult",
    "halted", "trapped", "fuel_exhausted",
]


class TrapKind(enum.Enum):
    INVALID_DECODE = "invalid-decode"
    WRITE_TO_IMAGE = "write-to-image"
    BAD_MEMORY = "bad-memory"
    UNTRANSLATED_TARGET = "untranslated-target"
    INT3 = "int3"
    BAD_PC = "bad-pc"


class TrapError(Exception):
    """Internal signal carrying a trap out of memory/step helpers."""

    def __init__(self, kind: TrapKind, detail: str = "") -> None:
        super().__init__(detail or kind.value)
        self.kind = kind
        self.detail = detail


class StatusKind(enum.Enum):
    HALTED = "halted"
    TRAPPED = "trapped"
    FUEL_EXHAUSTED = "fuel-exhausted"


@dataclass(frozen=True, slots=True)
class RunStatus:
    kind: StatusKind
    exit_code: int | None = None
    trap: TrapKind | None = None

    def __str__(self) -> str:
        if self.kind is StatusKind.HALTED:
            return f"halted({self.exit_code})"
        if self.kind is StatusKind.TRAPPED:
            return f"trapped({self.trap.value})"
        return "fuel-exhausted"


def halted(code: int) -> RunStatus:
    return RunStatus(StatusKind.HALTED, exit_code=code)


def trapped(kind: TrapKind) -> RunStatus:
    return RunStatus(StatusKind.TRAPPED, trap=kind)


def fuel_exhausted() -> RunStatus:
    return RunStatus(StatusKind.FUEL_EXHAUSTED)


@dataclass(frozen=True, slots=True)
class ExecutionResult:
    """Observable final state of one run, comparable across execution routes.

    ``steps`` counts route-local steps (source instructions vs target
    instructions) and is excluded from equality.
    """

    status: RunStatus
    gprs: tuple[int, ...]  # 16 values, indexed by Reg
    flags: int  # packed at RFLAGS bit positions
    stack: bytes
    output: bytes
    steps: int = field(compare=False, default=0)

    def flag_values(self) -> dict[str, bool]:
        return {name: bool(self.flags & bit) for bit, name in FLAG_NAMES}

    def describe_difference(self, other: "ExecutionResult") -> str | None:
        """First observable divergence against another result, or None."""
        if self.status != other.status:
            return f"status: {self.status} != {other.status}"
        for r in Reg:
            if self.gprs[r] != other.gprs[r]:
                return f"{r.name}: {self.gprs[r]:#x} != {other.gprs[r]:#x}"
        if self.flags != other.flags:
            return f"flags: {self.flags:#x} != {other.flags:#x}"
        if self.output != other.output:
            return f"output: {self.output!r} != {other.output!r}"
        if self.stack != other.stack:
            for i, (x, y) in enumerate(zip(self.stack, other.stack)):
                if x != y:
                    return f"stack[{i:#x}]: {x:#04x} != {y:#04x}"
        return None
