"""ELVT container: bit-exact serialization of translated images.

Layout (all little-endian): magic "ELVT", version u16, image_base u64,
entry u64, hostcall_base u64, source image (u32 length + bytes), lookup
table (u32 count + signed 64-bit entries), target code (u32 count + 12-byte
records: opcode u8, rd u8, rn u8, rm u8, imm u64), then CRC32 over all
preceding bytes.  Serialization is injective on canonical images, so byte
equality of containers is the determinism check.
"""

from __future__ import annotations

import struct
import zlib

from .lower import TranslatedImage
from .t64 import Opcode, TargetInstruction

__all__ = ["serialize", "deserialize", "ContainerError", "BadMagic",
           "VersionMismatch", "TruncatedContainer", "ChecksumMismatch"]

MAGIC = b"ELVT"
VERSION = 1

_HEADER = struct.Struct("<4sH")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_INSN = struct.Struct("<BBBBQ")


class ContainerError(ValueError):
    pass


class BadMagic(ContainerError):
    pass


class VersionMismatch(ContainerError):
    pass


class TruncatedContainer(ContainerError):
    pass


class ChecksumMismatch(ContainerError):
    pass


def serialize(image: TranslatedImage) -> bytes:
    out = bytearray()
    out += _HEADER.pack(MAGIC, VERSION)
    out += _U64.pack(image.image_base)
    out += _U64.pack(image.entry)
    out += _U64.pack(image.hostcall_base)
    out += _U32.pack(len(image.source_image))
    out += image.source_image
    out += _U32.pack(len(image.table))
    for entry in image.table:
        out += _I64.pack(entry)
    out += _U32.pack(len(image.target_code))
    for ins in image.target_code:
        out += _INSN.pack(int(ins.opcode), ins.rd, ins.rn, ins.rm, ins.imm)
    out += _U32.pack(zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedContainer(f"need {n} bytes at {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))


def deserialize(data: bytes) -> TranslatedImage:
    if len(data) < _U32.size:
        raise TruncatedContainer("shorter than a checksum")
    body, crc_bytes = data[:-_U32.size], data[-_U32.size:]
    (crc,) = _U32.unpack(crc_bytes)
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("payload checksum mismatch")

    r = _Reader(body)
    magic, version = r.unpack(_HEADER)
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"version {version}")
    (image_base,) = r.unpack(_U64)
    (entry,) = r.unpack(_U64)
    (hostcall_base,) = r.unpack(_U64)
    (src_len,) = r.unpack(_U32)
    source_image = r.take(src_len)
    (table_len,) = r.unpack(_U32)
    table = [r.unpack(_I64)[0] for _ in range(table_len)]
    (code_len,) = r.unpack(_U32)
    code = []
    for _ in range(code_len):
        opcode, rd, rn, rm, imm = r.unpack(_INSN)
        try:
            code.append(TargetInstruction(Opcode(opcode), rd, rn, rm, imm))
        except ValueError as exc:
            raise ContainerError(f"bad opcode byte {opcode}") from exc
    if r.pos != len(body):
        raise ContainerError(f"{len(body) - r.pos} trailing bytes")
    return TranslatedImage(
        target_code=code, table=table, source_image=source_image,
        image_base=image_base, entry=entry, hostcall_base=hostcall_base,
    )
