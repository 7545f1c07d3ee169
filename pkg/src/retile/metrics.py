"""Code-size metrics: the three-factor expansion decomposition.

Superset translation emits a tile group at every valid byte offset, so the
instruction-count expansion over the real program factors exactly into
per-instruction lowering, per-valid-byte candidate density, and the size
amplification of mid-instruction decodes:

    expansion = (tile instructions at real offsets / real instructions)
              x (valid offsets / real instructions)
              x (mean group size over valid offsets / mean over real offsets)

``target_instruction_count`` counts instructions in tile groups at valid
offsets; trap tiles for invalid decodes and the shared off-image trap are
reported separately so the identity holds exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .cfg import superset_disassemble
from .decoder import decode
from .isa import InvalidDecode
from .lower import TranslatedImage, translate_image

__all__ = ["MetricsReport", "compute_metrics", "metrics"]


@dataclass(frozen=True)
class MetricsReport:
    image_len: int
    real_instruction_count: int
    valid_offset_count: int
    valid_decode_rate: float
    avg_source_instr_len: float
    target_instruction_count: int  # tile instructions at valid offsets
    trap_instruction_count: int    # invalid-decode traps + off-image trap
    lowering_factor: float         # target instructions at real offsets / real count
    density_factor: float          # valid offsets / real count
    amplification_factor: float    # mean group size, all valid vs real offsets
    expansion: float               # target_instruction_count / real count
    pruned: bool

    @property
    def decomposition_product(self) -> float:
        return self.lowering_factor * self.density_factor * self.amplification_factor

    def identity_error(self) -> float:
        """Relative gap between expansion and the three-factor product."""
        if self.expansion == 0:
            return 0.0
        return abs(self.expansion - self.decomposition_product) / self.expansion

    def as_json(self) -> str:
        payload = asdict(self)
        payload["decomposition_product"] = self.decomposition_product
        return json.dumps(payload, indent=2, sort_keys=True)

    def as_text(self) -> str:
        return "\n".join([
            f"image length:            {self.image_len} bytes",
            f"real instructions:       {self.real_instruction_count}",
            f"valid offsets:           {self.valid_offset_count}",
            f"valid-decode rate:       {self.valid_decode_rate:.4f}",
            f"avg source instr length: {self.avg_source_instr_len:.2f} bytes",
            f"target instructions:     {self.target_instruction_count}"
            f" (+{self.trap_instruction_count} trap)",
            f"lowering factor:         {self.lowering_factor:.3f}",
            f"density factor:          {self.density_factor:.3f}",
            f"amplification factor:    {self.amplification_factor:.3f}",
            f"expansion:               {self.expansion:.3f}",
            f"decomposition product:   {self.decomposition_product:.3f}"
            f" (identity error {self.identity_error() * 100:.3f}%)",
            f"flag pruning:            {'on' if self.pruned else 'off'}",
        ])


def compute_metrics(source_image: bytes, entry: int, real_offsets: list[int],
                    prune: bool = True,
                    translated: TranslatedImage | None = None) -> MetricsReport:
    """Metrics for one image, using assembler ground truth for real offsets."""
    if not real_offsets:
        raise ValueError("ground-truth instruction offsets required")
    timg = translated
    if timg is None or timg.attribution is None:
        timg = translate_image(source_image, entry, prune=prune)
    attribution = timg.attribution
    decodes = superset_disassemble(source_image)

    valid = [off for off, d in enumerate(decodes) if not isinstance(d, InvalidDecode)]
    real = sorted(real_offsets)
    for off in real:
        if isinstance(decodes[off], InvalidDecode):
            raise ValueError(f"ground-truth offset {off} does not decode")

    n_real = len(real)
    n_valid = len(valid)
    t_valid = sum(attribution[off] for off in valid)
    t_real = sum(attribution[off] for off in real)
    total_len = sum(decodes[off].length for off in real)

    lowering = t_real / n_real
    density = n_valid / n_real
    mean_all = t_valid / n_valid
    mean_real = t_real / n_real
    amplification = mean_all / mean_real

    return MetricsReport(
        image_len=len(source_image),
        real_instruction_count=n_real,
        valid_offset_count=n_valid,
        valid_decode_rate=n_valid / len(source_image),
        avg_source_instr_len=total_len / n_real,
        target_instruction_count=t_valid,
        trap_instruction_count=len(timg.target_code) - t_valid,
        lowering_factor=lowering,
        density_factor=density,
        amplification_factor=amplification,
        expansion=t_valid / n_real,
        pruned=prune,
    )


metrics = compute_metrics
