"""retile: heuristic-free static binary translation for an x86-64 subset.

The pipeline decodes every byte offset (superset disassembly), builds the
per-offset CFG, prunes dead flag computation along fall-through chains,
lowers each candidate decode through the tile bank, lays out and links
deterministically, and executes on the T64 VM.  The reference interpreter
doubles as the correctness oracle for the differential harness.
"""

from .asm import AsmError, AsmResult, assemble
from .cfg import SupersetCFG, build_superset_cfg, flag_liveness, superset_disassemble
from .container import ContainerError, deserialize, serialize
from .decoder import decode
from .difftest import DiffReport, bisimulate, difftest
from .flags import FlagKind, compute_flags
from .gen import GenFeatures, GenSpec, gen_program
from .interp import MachineState, run_source, step
from .isa import DecodedInstruction, InvalidDecode, Mnemonic, Reg
from .lower import TranslatedImage, translate_image
from .metrics import MetricsReport, compute_metrics
from .result import ExecutionResult, RunStatus, StatusKind, TrapKind
from .t64 import Opcode, TargetInstruction, TargetState, exec_step, run_translated
from .tiles import (
    RegisterMap,
    Tile,
    TileBank,
    TileTemplate,
    build_tile_bank,
    default_register_map,
    lookup_tiles,
    specialize,
)

__version__ = "0.1.0"

__all__ = [
    "AsmError", "AsmResult", "assemble",
    "SupersetCFG", "build_superset_cfg", "flag_liveness", "superset_disassemble",
    "ContainerError", "deserialize", "serialize",
    "decode",
    "DiffReport", "bisimulate", "difftest",
    "FlagKind", "compute_flags",
    "GenFeatures", "GenSpec", "gen_program",
    "MachineState", "run_source", "step",
    "DecodedInstruction", "InvalidDecode", "Mnemonic", "Reg",
    "TranslatedImage", "translate_image",
    "MetricsReport", "compute_metrics",
    "ExecutionResult", "RunStatus", "StatusKind", "TrapKind",
    "Opcode", "TargetInstruction", "TargetState", "exec_step", "run_translated",
    "RegisterMap", "Tile", "TileBank", "TileTemplate", "build_tile_bank",
    "default_register_map", "lookup_tiles", "specialize",
    "__version__",
]
