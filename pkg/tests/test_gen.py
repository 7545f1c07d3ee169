"""Generator contract tests: determinism, termination, feature toggles."""

from __future__ import annotations

import pytest

from retile.asm import assemble
from retile.cfg import superset_disassemble
from retile.decoder import decode
from retile.gen import GenFeatures, GenSpec, gen_program
from retile.interp import run_source
from retile.isa import InvalidDecode, Mnemonic
from retile.result import StatusKind


def test_deterministic_per_spec():
    spec = GenSpec(seed=1234, budget=150)
    assert gen_program(spec) == gen_program(spec)
    assert gen_program(spec) != gen_program(GenSpec(seed=1235, budget=150))


def test_budget_one_is_a_single_exit_call():
    text = gen_program(GenSpec(seed=0, budget=1))
    art = assemble(text)
    assert len(art.instruction_offsets) == 1
    result = run_source(art.image, art.entry, fuel=10)
    assert result.status.kind is StatusKind.HALTED


def test_indirect_toggle_contract():
    text = gen_program(GenSpec(seed=7, budget=200,
                               features=GenFeatures(indirect=True)))
    art = assemble(text)
    indirect = [off for off in art.instruction_offsets
                if decode(art.image, off).mnemonic is Mnemonic.JMP_REG]
    assert indirect, "indirect toggle must produce a register jump"
    none = gen_program(GenSpec(seed=7, budget=200,
                               features=GenFeatures.parse("none")))
    art2 = assemble(none)
    assert all(decode(art2.image, off).mnemonic
               not in (Mnemonic.JMP_REG, Mnemonic.CALL_REG)
               for off in art2.instruction_offsets)


def test_overlap_toggle_injects_nonreal_decodes():
    text = gen_program(GenSpec(seed=3, budget=200,
                               features=GenFeatures(overlap=True)))
    assert ".byte" in text


@pytest.mark.parametrize("features", ["all", "none", "mem", "indirect,overlap"])
def test_corpus_terminates(features):
    feats = GenFeatures.parse(features)
    for seed in range(40):
        art = assemble(gen_program(GenSpec(seed=seed, budget=120, features=feats)))
        result = run_source(art.image, art.entry, fuel=1_000_000)
        assert result.status.kind is not StatusKind.FUEL_EXHAUSTED, f"seed {seed}"


def test_programs_assemble_and_decode():
    for seed in range(20):
        art = assemble(gen_program(GenSpec(seed=seed, budget=200)))
        for off in art.instruction_offsets:
            assert not isinstance(decode(art.image, off), InvalidDecode)
        rate = sum(1 for d in superset_disassemble(art.image)
                   if not isinstance(d, InvalidDecode)) / len(art.image)
        assert 0.0 < rate < 1.0
