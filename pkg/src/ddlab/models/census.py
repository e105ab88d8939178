from __future__ import annotations

from dataclasses import dataclass, field

from .layers import CATEGORIES

TRAINABLE_ALIASES = {
    "norm": "Norm",
    "conv": "Conv",
    "qkv": "QKV",
    "skip": "Skip",
    "io": "IO",
}


@dataclass
class ParamCensus:
    counts: dict = field(default_factory=dict)
    total: int = 0

    @property
    def fractions(self) -> dict:
        return {k: (v / self.total if self.total else 0.0) for k, v in self.counts.items()}

    def rows(self) -> list[tuple[str, int, float]]:
        fr = self.fractions
        return [(k, self.counts[k], fr[k]) for k in CATEGORIES]


def param_census(model) -> ParamCensus:
    counts = {c: 0 for c in CATEGORIES}
    for p in model.named_parameters().values():
        counts[p.category] += int(p.size)
    return ParamCensus(counts, sum(counts.values()))


class FreezeError(ValueError):
    pass


def apply_freeze_mask(model, trainable_categories) -> None:
    """Freeze every parameter whose category is not listed as trainable.

    Input and output layers must stay trainable.
    """
    trainable = set(trainable_categories)
    unknown = trainable - set(CATEGORIES)
    if unknown:
        raise FreezeError(f"unknown categories {sorted(unknown)}")
    if "IO" not in trainable:
        raise FreezeError("input/output layers are always tuned during distillation; IO cannot be frozen")
    for p in model.named_parameters().values():
        p.frozen = p.category not in trainable


def parse_freeze(spec: str) -> set:
    """'none' | comma list of frozen categories, e.g. 'conv' or 'conv,qkv' -> trainable set."""
    spec = (spec or "none").strip().lower()
    if spec in ("", "none"):
        return set(CATEGORIES)
    frozen = set()
    for tok in spec.split(","):
        tok = tok.strip()
        if tok not in TRAINABLE_ALIASES:
            raise FreezeError(f"unknown category {tok!r} in freeze spec")
        frozen.add(TRAINABLE_ALIASES[tok])
    if "IO" in frozen:
        raise FreezeError("input/output layers are always tuned during distillation; IO cannot be frozen")
    return set(CATEGORIES) - frozen
