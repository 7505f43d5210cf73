"""Arithmetic cost accounting for convolutional layers.

The cost of one conv layer is the exact multiply-accumulate count

    in_channels * filter_size^2 * width * out_map^2 / groups

and the model total is the sum over conv layers only: pooling, fc, and
pyramid-pool tails contribute nothing to the budget (their runtime overhead
is measured by the bench module, never modeled). All terms are exact
integers; ratios are exact rationals, rounded to two decimals only for
display.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from . import shapes
from .model import Architecture, LayerKind, LayerSpec, SPP_BINS, stages


@dataclass(frozen=True)
class ComplexityTerm:
    layer_index: int
    stage_index: int
    in_channels: int
    filter_size: int
    width: int
    map_size: int
    groups: int
    value: int


@dataclass(frozen=True)
class ComplexityReport:
    architecture_name: str
    terms: tuple[ComplexityTerm, ...]
    total: int
    per_stage: dict[int, int]
    baseline_name: str | None = None
    relative: Fraction | None = None

    @property
    def depth(self) -> int:
        return len(self.terms)


def layer_complexity(n_prev: int, layer: LayerSpec, m_out: int,
                     layer_index: int = 0, stage_index: int = 0) -> ComplexityTerm:
    """Exact cost term for one conv layer with ``m_out`` from shape
    inference. Grouped convolutions divide the dense product by ``groups``."""
    if not layer.is_conv:
        raise ValueError("only conv layers carry a cost term")
    if n_prev % layer.groups:
        raise ValueError(f"groups {layer.groups} must divide input channels {n_prev}")
    value = (n_prev // layer.groups) * layer.filter_size ** 2 * layer.width * m_out ** 2
    return ComplexityTerm(layer_index, stage_index, n_prev, layer.filter_size,
                          layer.width, m_out, layer.groups, value)


@lru_cache(maxsize=65536)
def _conv_terms(arch: Architecture) -> tuple[tuple[ComplexityTerm, ...], int]:
    """Cached conv-term core; architectures are immutable so memoizing on
    the value is safe (the rewrite search leans on this)."""
    trace = shapes.infer_shapes(arch)
    stage_by_layer: dict[int, int] = {}
    for view in stages(arch):
        for i in range(view.start, view.stop):
            stage_by_layer[i] = view.index
    terms: list[ComplexityTerm] = []
    for rec in trace.conv_records():
        layer = arch.layers[rec.layer_index]
        terms.append(layer_complexity(rec.in_channels, layer, rec.out_size,
                                      rec.layer_index,
                                      stage_by_layer.get(rec.layer_index, 0)))
    return tuple(terms), sum(t.value for t in terms)


def total_complexity(arch: Architecture, baseline: Architecture | None = None) -> ComplexityReport:
    """Sum the conv-layer terms of ``arch``. With a baseline, also record
    the exact total ratio against it."""
    terms, total = _conv_terms(arch)
    per_stage: dict[int, int] = {}
    for term in terms:
        per_stage[term.stage_index] = per_stage.get(term.stage_index, 0) + term.value
    baseline_name = relative = None
    if baseline is not None:
        base_total = _conv_terms(baseline)[1]
        baseline_name = baseline.name
        relative = Fraction(total, base_total)
    return ComplexityReport(arch.name, terms, total, per_stage,
                            baseline_name, relative)


def train_time_estimate(report: ComplexityReport) -> int:
    """Per-image training cost estimate: three times the testing cost (one
    forward plus two backward passes). An estimate, not a measurement."""
    return 3 * report.total


def display_ratio(ratio: Fraction, places: int = 2) -> str:
    """Two-decimal presentation of an exact ratio (round half to even)."""
    return f"{float(round(ratio, places)):.{places}f}"


@dataclass(frozen=True)
class StageDelta:
    stage_index: int
    before: int | None
    after: int | None

    @property
    def ratio(self) -> Fraction | None:
        if self.before and self.after is not None:
            return Fraction(self.after, self.before)
        return None


@dataclass(frozen=True)
class ComplexityDiff:
    before: ComplexityReport
    after: ComplexityReport
    ratio: Fraction
    stage_deltas: tuple[StageDelta, ...]


def diff_complexity(before: Architecture, after: Architecture) -> ComplexityDiff:
    """Whole-model exact ratio after/before plus per-stage subtotals aligned
    by stage index (stages present on only one side pair with None)."""
    rb = total_complexity(before)
    ra = total_complexity(after)
    indices = sorted(set(rb.per_stage) | set(ra.per_stage))
    deltas = tuple(StageDelta(i, rb.per_stage.get(i), ra.per_stage.get(i))
                   for i in indices)
    return ComplexityDiff(rb, ra, Fraction(ra.total, rb.total), deltas)


@dataclass(frozen=True)
class ParameterCount:
    layer_index: int
    kind: LayerKind
    value: int


def parameter_counts(arch: Architecture) -> tuple[ParameterCount, ...]:
    """Weight counts per layer: in_channels * s^2 * width / groups for conv,
    in_features * units for fc (pyramid-pool tails feed 50 bins per channel).
    Informational only; never part of the arithmetic budget."""
    trace = shapes.infer_shapes(arch)
    out: list[ParameterCount] = []
    prev_spp = False
    for rec in trace.records:
        layer = arch.layers[rec.layer_index]
        if layer.is_conv:
            value = (rec.in_channels // layer.groups) * layer.filter_size ** 2 * layer.width
            out.append(ParameterCount(rec.layer_index, layer.kind, value))
        elif layer.kind is LayerKind.FULLY_CONNECTED:
            features = rec.in_channels * (SPP_BINS if prev_spp else rec.in_size ** 2)
            out.append(ParameterCount(rec.layer_index, layer.kind,
                                      features * (layer.width or 1)))
        prev_spp = layer.kind is LayerKind.SPATIAL_PYRAMID_POOL
    return tuple(out)
