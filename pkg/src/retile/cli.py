"""Command-line interface: assemble, translate, run, difftest, metrics.

Exit codes: 0 on success, 1 when a difference or guest trap is found, 2 on
usage errors.  The run commands mirror the guest's exit-hostcall argument
(mod 256).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .asm import AsmError, assemble, parse_symbols_text
from .cfg import build_superset_cfg, export_dot, flag_liveness, superset_disassemble
from .container import ContainerError, deserialize, serialize
from .difftest import difftest
from .gen import GenFeatures, GenSpec, gen_program
from .interp import run_source
from .isa import Reg
from .lower import translate_image
from .metrics import compute_metrics
from .result import StatusKind
from .t64 import run_translated
from .tiles import dump_bank, get_bank

__all__ = ["main"]


def _parse_regs(pairs: list[str]) -> dict[Reg, int]:
    regs: dict[Reg, int] = {}
    for pair in pairs or []:
        name, _, value = pair.partition("=")
        try:
            reg = Reg[name.strip().upper()]
        except KeyError:
            raise SystemExit(f"error: unknown register {name!r}") from None
        try:
            regs[reg] = int(value, 0)
        except ValueError:
            raise SystemExit(f"error: bad register value {value!r}") from None
    return regs


def _load_image(path: Path, entry_arg: int | None) -> tuple[bytes, int]:
    image = path.read_bytes()
    entry = entry_arg
    if entry is None:
        sidecar = path.with_suffix(path.suffix + ".entry")
        entry = int(sidecar.read_text().strip()) if sidecar.exists() else 0
    return image, entry


def _print_result(result, as_json: bool) -> int:
    if as_json:
        print(json.dumps({
            "status": str(result.status),
            "gprs": {r.name: result.gprs[r] for r in Reg},
            "flags": result.flag_values(),
            "output": result.output.hex(),
            "steps": result.steps,
        }, indent=2))
    else:
        print(f"status: {result.status}")
        print(f"steps:  {result.steps}")
        for chunk_start in range(0, 16, 4):
            cells = [f"{Reg(i).name.lower():>4s}={result.gprs[i]:#018x}"
                     for i in range(chunk_start, chunk_start + 4)]
            print("  " + "  ".join(cells))
        flags = " ".join(f"{name}={int(value)}"
                         for name, value in result.flag_values().items())
        print(f"  flags: {flags}")
        if result.output:
            print(f"  output: {result.output.hex()} ({result.output!r})")
    if result.status.kind is StatusKind.HALTED:
        return result.status.exit_code & 0xFF
    return 1


def _cmd_asm(args) -> int:
    try:
        result = assemble(Path(args.source).read_text())
    except AsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.output)
    out.write_bytes(result.image)
    out.with_suffix(out.suffix + ".entry").write_text(f"{result.entry}\n")
    out.with_suffix(out.suffix + ".syms").write_text(result.symbols_text())
    print(f"{out}: {len(result.image)} bytes, "
          f"{len(result.instruction_offsets)} instructions, entry {result.entry}")
    return 0


def _cmd_translate(args) -> int:
    image, entry = _load_image(Path(args.image), args.entry)
    if args.dump_bank is not None:
        text = dump_bank(get_bank())
        if args.dump_bank == "-":
            sys.stdout.write(text)
        else:
            Path(args.dump_bank).write_text(text)
    timg = translate_image(image, entry, prune=not args.no_prune)
    if args.dump_cfg is not None:
        cfg = build_superset_cfg(superset_disassemble(image), len(image), entry)
        flag_liveness(cfg)
        dot = export_dot(cfg)
        if args.dump_cfg == "-":
            sys.stdout.write(dot)
        else:
            Path(args.dump_cfg).write_text(dot)
    payload = serialize(timg)
    Path(args.output).write_bytes(payload)
    print(f"{args.output}: {len(timg.target_code)} target instructions, "
          f"{len(payload)} container bytes, pruning {'off' if args.no_prune else 'on'}")
    return 0


def _cmd_run_source(args) -> int:
    image, entry = _load_image(Path(args.image), args.entry)
    result = run_source(image, entry, fuel=args.fuel, regs=_parse_regs(args.reg))
    return _print_result(result, args.json)


def _cmd_run(args) -> int:
    try:
        timg = deserialize(Path(args.container).read_bytes())
    except ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_translated(timg, fuel=args.fuel, regs=_parse_regs(args.reg))
    return _print_result(result, args.json)


def _cmd_difftest(args) -> int:
    try:
        lo, _, hi = args.seeds.partition("..")
        seeds = range(int(lo), int(hi))
    except ValueError:
        print(f"error: bad seed range {args.seeds!r} (want A..B)", file=sys.stderr)
        return 2
    try:
        features = GenFeatures.parse(args.features)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = difftest(seeds, budget=args.budget, features=features,
                      bisim_steps=args.bisim_steps, jobs=args.jobs)
    if args.json:
        print(json.dumps({
            "passed": report.passed,
            "failures": [{"seed": f.seed, "phase": f.phase, "detail": f.detail}
                         for f in report.failures],
        }, indent=2))
    else:
        print(report.summary())
    if args.report_dir:
        from .metrics import compute_metrics as _metrics
        from .report import write_corpus_report

        rows = []
        for seed in seeds:
            art = assemble(gen_program(GenSpec(seed=seed, budget=args.budget,
                                               features=features)))
            rows.append(_metrics(art.image, art.entry,
                                 list(art.instruction_offsets)))
        for path in write_corpus_report(rows, Path(args.report_dir)):
            print(f"wrote {path}")
    return 0 if report.ok else 1


def _cmd_metrics(args) -> int:
    try:
        timg = deserialize(Path(args.container).read_bytes())
    except ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    entry, insns, _labels = parse_symbols_text(Path(args.symbols).read_text())
    if not insns:
        print("error: symbols file carries no instruction offsets", file=sys.stderr)
        return 2
    # recover the pruning mode by re-translating deterministically
    report = None
    for prune in (True, False):
        candidate = translate_image(timg.source_image, timg.entry, prune=prune)
        if candidate.target_code == timg.target_code:
            report = compute_metrics(timg.source_image, timg.entry, insns,
                                     prune=prune, translated=candidate)
            break
    if report is None:
        print("error: container does not match a deterministic retranslation",
              file=sys.stderr)
        return 1
    print(report.as_json() if args.json else report.as_text())
    return 0


def _cmd_gen(args) -> int:
    try:
        features = GenFeatures.parse(args.features)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(gen_program(GenSpec(seed=args.seed, budget=args.budget,
                                         features=features)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retile",
        description="static binary translator from an x86-64 subset to T64",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble a program listing")
    p.add_argument("source")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_asm)

    p = sub.add_parser("translate", help="translate a flat image to a container")
    p.add_argument("image")
    p.add_argument("--entry", type=lambda v: int(v, 0), default=None)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-prune", action="store_true",
                   help="keep every flag tile (disable liveness pruning)")
    p.add_argument("--dump-cfg", nargs="?", const="-", metavar="FILE",
                   help="write the superset CFG as Graphviz (default stdout)")
    p.add_argument("--dump-bank", nargs="?", const="-", metavar="FILE",
                   help="write the full tile-bank listing (default stdout)")
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("run-source", help="run the source-ISA reference interpreter")
    p.add_argument("image")
    p.add_argument("--entry", type=lambda v: int(v, 0), default=None)
    p.add_argument("--reg", action="append", metavar="NAME=VALUE")
    p.add_argument("--fuel", type=int, default=1_000_000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_run_source)

    p = sub.add_parser("run", help="run a translated container")
    p.add_argument("container")
    p.add_argument("--reg", action="append", metavar="NAME=VALUE")
    p.add_argument("--fuel", type=int, default=20_000_000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("difftest", help="differential-test generated programs")
    p.add_argument("--seeds", default="0..100", metavar="A..B")
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--features", default="all",
                   help="all | none | comma list of mem,indirect,overlap")
    p.add_argument("--bisim-steps", type=int, default=0,
                   help="also lockstep-compare this many source steps per seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--json", action="store_true")
    p.add_argument("--report-dir", metavar="DIR",
                   help="write metrics.csv and summary figures for the corpus")
    p.set_defaults(func=_cmd_difftest)

    p = sub.add_parser("metrics", help="code-size decomposition for a container")
    p.add_argument("container")
    p.add_argument("--symbols", required=True,
                   help="assembler sidecar with ground-truth instruction offsets")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("gen", help="print a generated test program")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--features", default="all")
    p.set_defaults(func=_cmd_gen)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
