"""Superset control-flow graph: one node per byte offset, no code/data guesses.

Every offset is decoded independently; control-flow edges follow from each
decode alone.  Backward flag liveness runs only along fall-through chains and
assumes all six flags live at any control transfer, trap or image exit, which
keeps pruning sound no matter where runtime control lands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .decoder import decode
from .isa import (
    ALL_FLAGS,
    COND_BRANCHES,
    DecodedInstruction,
    InvalidDecode,
    MemOp,
    Mnemonic,
    flag_names,
)
from .memory import IMAGE_BASE

__all__ = ["Node", "SupersetCFG", "superset_disassemble", "build_superset_cfg",
           "flag_liveness", "export_dot"]

_DIRECT_BRANCHES = COND_BRANCHES | {Mnemonic.JMP, Mnemonic.CALL}
_TERMINAL = {Mnemonic.RET, Mnemonic.INT3}
_INDIRECT = {Mnemonic.JMP_REG, Mnemonic.CALL_REG}


@dataclass
class Node:
    """Per-offset CFG node covering one candidate decode."""

    offset: int
    instr: DecodedInstruction | None  # None for invalid decodes
    invalid: InvalidDecode | None = None
    fallthrough: int | None = None  # next offset on the fall-through edge
    direct_targets: tuple[int, ...] = ()
    external_target: int | None = None  # absolute address outside the image
    indirect: bool = False
    terminal: bool = False
    live_flags: int = ALL_FLAGS

    @property
    def valid(self) -> bool:
        return self.instr is not None

    @property
    def is_control(self) -> bool:
        return (self.direct_targets != () or self.external_target is not None
                or self.indirect or self.terminal)


@dataclass
class SupersetCFG:
    image_len: int
    nodes: list[Node]
    entry: int = 0
    # offsets that some direct branch/call targets (label seeds for layout)
    branch_targets: frozenset[int] = field(default_factory=frozenset)

    def node(self, offset: int) -> Node:
        return self.nodes[offset]


def superset_disassemble(image: bytes) -> list[DecodedInstruction | InvalidDecode]:
    """Decode at every byte offset; entries are mutually independent."""
    if not image:
        raise ValueError("empty image")
    return [decode(image, off) for off in range(len(image))]


def build_superset_cfg(
    decodes: list[DecodedInstruction | InvalidDecode],
    image_len: int,
    entry: int = 0,
) -> SupersetCFG:
    if len(decodes) != image_len:
        raise ValueError("decodes must cover every offset")
    nodes: list[Node] = []
    targets: set[int] = set()
    for offset, item in enumerate(decodes):
        if isinstance(item, InvalidDecode):
            nodes.append(Node(offset=offset, instr=None, invalid=item, terminal=True))
            continue
        node = Node(offset=offset, instr=item)
        end = offset + item.length
        m = item.mnemonic
        if m in _DIRECT_BRANCHES:
            # displacement is relative to the end of the instruction
            target = end + item.operands[-1].value
            if 0 <= target < image_len:
                node.direct_targets = (target,)
                targets.add(target)
            else:
                node.external_target = IMAGE_BASE + target
            if m is not Mnemonic.JMP:
                node.fallthrough = end  # Jcc not-taken path / call return site
        elif m in _TERMINAL:
            node.terminal = True
        elif m in _INDIRECT:
            node.indirect = True
        else:
            node.fallthrough = end
        nodes.append(node)
    return SupersetCFG(image_len=image_len, nodes=nodes, entry=entry,
                       branch_targets=frozenset(targets))


def flag_liveness(cfg: SupersetCFG) -> SupersetCFG:
    """Fill ``live_flags``: the flag demand immediately after each node.

    ``demand_in[o]`` is the set of flags some later node in o's fall-through
    chain may read before overwriting.  Any control transfer, invalid decode
    or fall-through past the image end demands all six flags; joins need no
    special case because demand only ever flows along fall-through edges.

    Trapping is an observable exit, so a node that may fault at runtime
    (memory access, stack push/pop) also demands all six flags on entry; and
    a flag-writing read-modify-write keeps its own flag tile because its
    store may trap after the architectural flag update.
    """
    demand_in = [ALL_FLAGS] * (cfg.image_len + 1)
    for offset in range(cfg.image_len - 1, -1, -1):
        node = cfg.nodes[offset]
        if not node.valid or node.is_control:
            node.live_flags = ALL_FLAGS
            continue
        instr = node.instr
        nxt = node.fallthrough
        live_after = ALL_FLAGS if nxt is None else demand_in[nxt]
        writes_memory = (instr.flags_written
                         and instr.mnemonic not in (Mnemonic.CMP, Mnemonic.TEST)
                         and isinstance(instr.operands[0], MemOp))
        if writes_memory:
            live_after = ALL_FLAGS
        node.live_flags = live_after
        may_trap = (instr.memory_operand() is not None
                    or instr.mnemonic in (Mnemonic.PUSH, Mnemonic.POP))
        if may_trap:
            demand_in[offset] = ALL_FLAGS
        else:
            demand_in[offset] = instr.flags_read | (live_after & ~instr.flags_written)
    return cfg


def export_dot(cfg: SupersetCFG) -> str:
    """Graphviz rendering of the superset CFG for inspection."""
    lines = ["digraph superset {", "  node [shape=box, fontname=monospace];"]
    for node in cfg.nodes:
        if node.valid:
            instr = node.instr
            ops = " ".join(type(op).__name__ for op in instr.operands)
            label = (f"{node.offset:#x}: {instr.mnemonic.value}"
                     f" w{instr.width} len{instr.length}\\nlive={flag_names(node.live_flags)}")
        else:
            label = f"{node.offset:#x}: invalid ({node.invalid.reason.value})"
        lines.append(f'  n{node.offset} [label="{label}"];')
        if node.fallthrough is not None and node.fallthrough < cfg.image_len:
            lines.append(f"  n{node.offset} -> n{node.fallthrough} [label=fall];")
        for target in node.direct_targets:
            lines.append(f"  n{node.offset} -> n{target} [label=branch];")
        if node.external_target is not None:
            lines.append(
                f'  n{node.offset} -> ext{node.offset} [label="ext {node.external_target:#x}"];')
            lines.append(f'  ext{node.offset} [shape=ellipse, label="external"];')
        if node.indirect:
            lines.append(f'  n{node.offset} -> table [label=indirect];')
    lines.append('  table [shape=ellipse, label="lookup table"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
