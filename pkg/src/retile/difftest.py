"""Differential test driver: oracle vs translated execution over seed ranges.

Each seed is self-contained: generate, assemble, run the oracle, translate
with pruning on and off, run the VM, and compare full ExecutionResults, plus
a mid-program entry variant exercising landing pads.  Failures carry the seed
and the first observed divergence, so any report line reproduces alone.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .asm import assemble
from .cfg import superset_disassemble
from .decoder import decode
from .gen import GenFeatures, GenSpec, gen_program
from .interp import MachineState, run_source, step
from .isa import InvalidDecode, Reg
from .lower import TranslatedImage, translate_image
from .memory import HOSTCALL_SLOTS, IMAGE_BASE
from .result import StatusKind
from .t64 import boot_state, exec_step, run_translated
from .tiles import default_register_map, get_bank

__all__ = ["DiffFailure", "DiffReport", "difftest", "run_seed", "bisimulate"]

_SOURCE_FUEL = 1_000_000
_TARGET_FUEL = 20_000_000


@dataclass(frozen=True)
class DiffFailure:
    seed: int
    phase: str  # pruned | unpruned | mid-entry | bisim | harness
    detail: str


@dataclass
class DiffReport:
    passed: int = 0
    failures: list[DiffFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def merge(self, other: "DiffReport") -> None:
        self.passed += other.passed
        self.failures.extend(other.failures)

    def summary(self) -> str:
        lines = [f"difftest: {self.passed} passed, {len(self.failures)} failed"]
        for f in sorted(self.failures, key=lambda f: (f.seed, f.phase)):
            lines.append(f"  seed {f.seed} [{f.phase}]: {f.detail}")
        return "\n".join(lines)


def _input_sets(seed: int) -> list[dict[Reg, int]]:
    rng = random.Random(seed ^ 0x1AB5)
    randomized = {
        reg: rng.getrandbits(64)
        for reg in (Reg.RDI, Reg.RSI, Reg.RDX, Reg.RCX, Reg.R8, Reg.R9)
    }
    small = {Reg.RDI: rng.randrange(8), Reg.RSI: rng.randrange(256)}
    return [small, randomized]


def run_seed(seed: int, budget: int = 200, features: GenFeatures | None = None,
             bank=None, bisim_steps: int = 0) -> DiffReport:
    """Run every check for one seed."""
    report = DiffReport()
    bank = bank or get_bank()
    features = features if features is not None else GenFeatures()

    def fail(phase: str, detail: str) -> None:
        report.failures.append(DiffFailure(seed, phase, detail))

    text = gen_program(GenSpec(seed=seed, budget=budget, features=features))
    art = assemble(text)
    images: dict[str, TranslatedImage] = {
        "pruned": translate_image(art.image, art.entry, prune=True, bank=bank),
        "unpruned": translate_image(art.image, art.entry, prune=False, bank=bank),
    }

    for regs in _input_sets(seed):
        oracle = run_source(art.image, art.entry, fuel=_SOURCE_FUEL, regs=regs)
        if oracle.status.kind is StatusKind.FUEL_EXHAUSTED:
            fail("harness", "generated program did not terminate")
            return report
        for phase, timg in images.items():
            vm = run_translated(timg, fuel=_TARGET_FUEL, regs=regs)
            diff = oracle.describe_difference(vm)
            if diff:
                fail(phase, diff)
                return report

    # mid-program entry: land on an arbitrary valid decode via the table
    rng = random.Random(seed ^ 0x317D)
    decodes = superset_disassemble(art.image)
    valid = [o for o, d in enumerate(decodes) if not isinstance(d, InvalidDecode)]
    offset = valid[rng.randrange(len(valid))]
    regs = _input_sets(seed)[0]
    oracle = run_source(art.image, offset, fuel=_SOURCE_FUEL, regs=regs)
    if oracle.status.kind is not StatusKind.FUEL_EXHAUSTED:
        for phase, timg in images.items():
            vm = run_translated(timg, fuel=_TARGET_FUEL, regs=regs,
                                entry_offset=offset)
            diff = oracle.describe_difference(vm)
            if diff:
                fail(f"mid-entry-{phase}", f"offset {offset}: {diff}")
                return report

    if bisim_steps:
        note = bisimulate(art.image, images["unpruned"], offset, regs, bisim_steps)
        if note:
            fail("bisim", f"offset {offset}: {note}")

    if report.ok:
        report.passed = 1
    return report


def difftest(seeds, budget: int = 200, features: GenFeatures | None = None,
             bisim_steps: int = 0, jobs: int = 1) -> DiffReport:
    """Drive run_seed over a seed range; aggregation is order-independent."""
    seeds = list(seeds)
    report = DiffReport()
    if jobs > 1:
        import multiprocessing as mp

        with mp.Pool(jobs) as pool:
            parts = pool.starmap(
                run_seed,
                [(seed, budget, features, None, bisim_steps) for seed in seeds],
                chunksize=max(1, len(seeds) // (jobs * 8) or 1),
            )
        for part in parts:
            report.merge(part)
    else:
        bank = get_bank()
        for seed in seeds:
            report.merge(run_seed(seed, budget, features, bank, bisim_steps))
    report.failures.sort(key=lambda f: (f.seed, f.phase))
    return report


def bisimulate(image: bytes, timg: TranslatedImage, offset: int,
               regs: dict[Reg, int], max_source_steps: int = 100,
               step_cap: int = 4000) -> str | None:
    """Lockstep the oracle and the translated VM from a landing pad.

    Alignment points are source-instruction boundaries; at each one the
    mapped registers and packed flags must agree (the caller passes an
    unpruned image so flags are exact at every boundary).  Returns the first
    divergence, or None after ``max_source_steps`` or when both sides stop
    with equal observable state.
    """
    rmap = default_register_map()
    state_o = MachineState.boot(image, offset, regs)
    state_t = boot_state(timg, regs)
    state_t.pc = timg.table[offset]
    cache: dict = {}

    def compare_here(where: str) -> str | None:
        for reg in Reg:
            mine = state_t.regs[rmap.gpr_map[reg]]
            theirs = state_o.gpr[reg]
            if mine != theirs:
                return f"{where}: {reg.name} {mine:#x} != oracle {theirs:#x}"
        if state_t.regs[rmap.flags_reg] != state_o.flags:
            return (f"{where}: flags {state_t.regs[rmap.flags_reg]:#x}"
                    f" != oracle {state_o.flags:#x}")
        if bytes(state_t.output) != bytes(state_o.output):
            return f"{where}: output diverged"
        return None

    def run_target_to_stop() -> object:
        for _ in range(step_cap):
            status = exec_step(state_t, timg)
            if status is not None:
                return status
        return None

    for step_no in range(max_source_steps):
        note = compare_here(f"step {step_no}")
        if note:
            return note
        prev_offset = state_o.rip - IMAGE_BASE
        status_o = step(state_o, image, cache)
        while status_o is None and state_o.rip in HOSTCALL_SLOTS:
            status_o = step(state_o, image, cache)
        if status_o is not None:
            status_t = run_target_to_stop()
            if status_t != status_o:
                return f"step {step_no}: status {status_t} != oracle {status_o}"
            if status_o.kind is StatusKind.HALTED:
                note = compare_here("final")
                if note:
                    return note
            if state_t.memory.stack != state_o.memory.stack:
                return f"step {step_no}: final memory diverged"
            return None
        next_offset = state_o.rip - IMAGE_BASE
        if not 0 <= next_offset < len(image):
            status_o = step(state_o, image, cache)  # traps out of the image
            status_t = run_target_to_stop()
            if status_t != status_o:
                return f"step {step_no}: exit status {status_t} != oracle {status_o}"
            return None
        landing = timg.table[next_offset]
        taken = 0
        while state_t.pc != landing or (taken == 0 and next_offset == prev_offset):
            status_t = exec_step(state_t, timg)
            taken += 1
            if status_t is not None:
                return (f"step {step_no}: target stopped early ({status_t}) "
                        f"before offset {next_offset}")
            if taken > step_cap:
                return f"step {step_no}: no alignment at offset {next_offset}"
    if state_t.memory.stack != state_o.memory.stack:
        return "bounded run: memory diverged"
    return None
