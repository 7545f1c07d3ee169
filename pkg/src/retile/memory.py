"""Flat guest memory: read-only image region plus a read-write stack region.

Both execution routes (source interpreter and target VM) use the same layout
so final writable memory is directly comparable.  Fixed constants keep traces
reproducible.
"""

from __future__ import annotations

from .result import TrapError, TrapKind

__all__ = [
    "IMAGE_BASE", "STACK_LO", "STACK_HI", "INITIAL_RSP",
    "HOSTCALL_BASE", "HOSTCALL_EXIT", "HOSTCALL_WRITE_CHAR", "HOSTCALL_WRITE_U64",
    "HOSTCALL_SLOTS", "Memory",
]

IMAGE_BASE = 0x400000
STACK_LO = 0x7F0000
STACK_HI = 0x800000
INITIAL_RSP = 0x7FFFF8

# Hostcall slots sit below the image; they are branch targets, not memory.
HOSTCALL_BASE = IMAGE_BASE - 0x1000
HOSTCALL_EXIT = HOSTCALL_BASE
HOSTCALL_WRITE_CHAR = HOSTCALL_BASE + 8
HOSTCALL_WRITE_U64 = HOSTCALL_BASE + 16
HOSTCALL_SLOTS = (HOSTCALL_EXIT, HOSTCALL_WRITE_CHAR, HOSTCALL_WRITE_U64)


class Memory:
    """Byte-addressable guest memory with the fixed two-region layout."""

    __slots__ = ("image", "stack")

    def __init__(self, image: bytes) -> None:
        self.image = bytes(image)
        self.stack = bytearray(STACK_HI - STACK_LO)

    def read(self, addr: int, size: int) -> int:
        end = addr + size
        if IMAGE_BASE <= addr and end <= IMAGE_BASE + len(self.image):
            lo = addr - IMAGE_BASE
            return int.from_bytes(self.image[lo:lo + size], "little")
        if STACK_LO <= addr and end <= STACK_HI:
            lo = addr - STACK_LO
            return int.from_bytes(self.stack[lo:lo + size], "little")
        raise TrapError(TrapKind.BAD_MEMORY, f"read {size}B at {addr:#x}")

    def write(self, addr: int, size: int, value: int) -> None:
        end = addr + size
        if STACK_LO <= addr and end <= STACK_HI:
            lo = addr - STACK_LO
            self.stack[lo:lo + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")
            return
        if IMAGE_BASE <= addr < IMAGE_BASE + len(self.image):
            raise TrapError(TrapKind.WRITE_TO_IMAGE, f"write {size}B at {addr:#x}")
        raise TrapError(TrapKind.BAD_MEMORY, f"write {size}B at {addr:#x}")

    def stack_snapshot(self) -> bytes:
        return bytes(self.stack)
