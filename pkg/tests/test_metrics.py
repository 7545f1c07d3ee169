"""Metrics and corpus-report tests."""

from __future__ import annotations

from pathlib import Path

import pytest

from retile.asm import assemble
from retile.gen import GenSpec, gen_program
from retile.metrics import compute_metrics
from retile.report import write_corpus_report


def _metrics_for(text: str, **kwargs):
    art = assemble(text)
    return compute_metrics(art.image, art.entry, list(art.instruction_offsets),
                           **kwargs)


def test_decomposition_identity_exact():
    for seed in range(8):
        art = assemble(gen_program(GenSpec(seed=seed, budget=150)))
        report = compute_metrics(art.image, art.entry,
                                 list(art.instruction_offsets))
        assert report.identity_error() < 0.01
        assert report.expansion == pytest.approx(report.decomposition_product)


def test_one_byte_program_density_equals_valid_rate():
    # every instruction is one byte, so real count == image length and the
    # density factor collapses to the valid-decode rate
    report = _metrics_for("nop\nnop\nnop\npush rax\npop rcx\nret")
    assert report.density_factor == pytest.approx(report.valid_decode_rate)
    assert report.avg_source_instr_len == 1.0


def test_rates_are_reported_and_bounded():
    report = _metrics_for(gen_program(GenSpec(seed=5, budget=200)))
    assert 0.0 < report.valid_decode_rate < 1.0
    assert report.avg_source_instr_len > 1.0
    assert report.lowering_factor > 1.0
    assert report.density_factor > 1.0


def test_pruned_vs_unpruned_counts():
    text = "\n".join(
        ["mov rax, 1"] + [f"add rax, {k}" for k in range(2, 12)]
        + ["cmp rax, 5", "jz E", "E: mov rdi, rax", "call __exit"])
    pruned = _metrics_for(text, prune=True)
    unpruned = _metrics_for(text, prune=False)
    assert pruned.target_instruction_count < unpruned.target_instruction_count


def test_ground_truth_validation():
    art = assemble("nop\nret")
    with pytest.raises(ValueError):
        compute_metrics(art.image, 0, [])


def test_corpus_report_files(tmp_path: Path):
    rows = []
    for seed in range(6):
        art = assemble(gen_program(GenSpec(seed=seed, budget=100)))
        rows.append(compute_metrics(art.image, art.entry,
                                    list(art.instruction_offsets)))
    created = write_corpus_report(rows, tmp_path / "report")
    names = {p.name for p in created}
    assert "metrics.csv" in names
    assert {"decomposition_factors.png", "decode_characteristics.png",
            "expansion_vs_size.png"} <= names
    for path in created:
        assert path.exists() and path.stat().st_size > 0
    header = (tmp_path / "report" / "metrics.csv").read_text().splitlines()[0]
    assert "lowering_factor" in header and "expansion" in header
