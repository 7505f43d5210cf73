"""Budget-constrained enumeration of rewrite sequences.

Candidates are single preserving-rule applications whose whole-model cost
ratio against the search baseline stays under the budget envelope. Because
published cost columns are conventionally printed at two decimals, the
envelope compares the display-rounded ratio: a candidate is legal when
round(ratio, 2) <= budget * (1 + tolerance). Cheaper-than-budget is always
legal; a budget is a ceiling, not a band.

Results are ranked by a declared heuristic, not an accuracy prediction:
deeper first, then smaller maximum filter size, then cost ratio closest
to 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from . import rewrite
from .complexity import total_complexity
from .model import Architecture, stages
from .notation import render_architecture
from .rewrite import RewriteError, RewriteStep, step
from .shapes import ShapeError

POOL_CONFIGS = ((2, 2), (3, 3))


@dataclass(frozen=True)
class SearchConfig:
    budget_ratio: Fraction = Fraction(1)
    tolerance: Fraction = Fraction(1, 50)
    max_steps: int = 4
    beam_width: int = 8
    depth_cap: int = 14
    allowed_rules: frozenset[str] = frozenset(rewrite.PRESERVING_RULES)
    width_cap: int = 4096

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        bad = set(self.allowed_rules) - set(rewrite.PRESERVING_RULES)
        if bad:
            raise ValueError(f"only preserving rules are searchable; got {sorted(bad)}")


def budget_ceiling(config: SearchConfig) -> Fraction:
    return config.budget_ratio * (1 + config.tolerance)


def within_budget(ratio: Fraction, config: SearchConfig) -> bool:
    return round(ratio, 2) <= budget_ceiling(config)


@dataclass(frozen=True)
class Candidate:
    step: RewriteStep
    architecture: Architecture
    ratio: Fraction


@dataclass(frozen=True)
class SearchResult:
    architecture: Architecture
    trace: tuple[RewriteStep, ...]
    ratio: Fraction

    @property
    def depth(self) -> int:
        return self.architecture.depth

    def sort_key(self) -> tuple:
        max_filter = max(l.filter_size for l in self.architecture.layers if l.is_conv)
        return (-self.depth, max_filter, abs(self.ratio - 1))


def _try(applications: list[Candidate], arch: Architecture, step_: RewriteStep,
         baseline_total: int, config: SearchConfig) -> None:
    try:
        out, _cert = rewrite.apply_step(arch, step_)
    except (RewriteError, ShapeError):
        return
    if out.depth > config.depth_cap:
        return
    try:
        ratio = Fraction(total_complexity(out).total, baseline_total)
    except ShapeError:
        return
    if not within_budget(ratio, config):
        return
    applications.append(Candidate(step_, out, ratio))


def enumerate_candidates(arch: Architecture, config: SearchConfig,
                         baseline_total: int | None = None) -> list[Candidate]:
    """All legal single-rule applications, deterministically ordered by
    (stage, rule, parameters). ``baseline_total`` anchors the budget ratio;
    it defaults to the architecture's own cost."""
    if baseline_total is None:
        baseline_total = total_complexity(arch).total
    out: list[Candidate] = []
    views = stages(arch)
    allowed = config.allowed_rules
    for view in views:
        if "factorize-filter" in allowed:
            for li, layer in enumerate(view.conv_layers):
                for scheme, (src, _targets) in sorted(rewrite.FACTORIZATION_SCHEMES.items()):
                    if layer.filter_size == src:
                        _try(out, arch, step("factorize-filter", stage=view.index,
                                             layer=li, scheme=scheme),
                             baseline_total, config)
        if "trade-depth-width" in allowed and len(set(view.filter_sizes())) == 1:
            headroom = config.depth_cap - (arch.depth - view.depth)
            for k_total in range(2, headroom + 1):
                try:
                    solved = rewrite.solve_interior_width(
                        view.in_channels, view.out_channels, k_total - 2,
                        view.conv_layers[0].filter_size,
                        rewrite._chain_units(view.in_channels, view.conv_layers))
                except RewriteError:
                    continue
                if solved.exact is None or solved.exact > config.width_cap:
                    continue
                _try(out, arch, step("trade-depth-width", stage=view.index,
                                     layers=k_total), baseline_total, config)
        if "trade-width-filter" in allowed and len(set(view.filter_sizes())) == 1:
            if view.depth >= 2:
                for new_s in (2, 3, 5):
                    if new_s != view.conv_layers[0].filter_size:
                        _try(out, arch, step("trade-width-filter", stage=view.index,
                                             filter=new_s), baseline_total, config)
        if "insert-pooling" in allowed and view.depth >= 2:
            for pool_size, pool_stride in POOL_CONFIGS:
                for moved in range(1, view.depth):
                    _try(out, arch, step("insert-pooling", after_stage=view.index,
                                         pool=pool_size, stride=pool_stride,
                                         move=moved), baseline_total, config)
    if "delay-subsampling" in allowed:
        pool_positions = [i for i, l in enumerate(arch.layers) if l.is_pool]
        for ordinal, pos in enumerate(pool_positions, 1):
            if arch.layers[pos].stride > 1:
                _try(out, arch, step("delay-subsampling", pool=ordinal),
                     baseline_total, config)
    return out


def _explore(baseline: Architecture, config: SearchConfig,
             beam: int | None) -> list[SearchResult]:
    if baseline.depth > config.depth_cap:
        raise ValueError(f"depth cap {config.depth_cap} is below the baseline "
                         f"depth {baseline.depth}")
    baseline_total = total_complexity(baseline).total
    root = SearchResult(baseline, (), Fraction(1))
    results = [root]
    seen = {render_architecture(baseline)}
    frontier = [root]
    for _ in range(config.max_steps):
        next_frontier: list[SearchResult] = []
        for node in frontier:
            for cand in enumerate_candidates(node.architecture, config, baseline_total):
                key = render_architecture(cand.architecture)
                if key in seen:
                    continue
                seen.add(key)
                result = SearchResult(cand.architecture, node.trace + (cand.step,),
                                      cand.ratio)
                results.append(result)
                next_frontier.append(result)
        if beam is not None and len(next_frontier) > beam:
            next_frontier = sorted(next_frontier, key=SearchResult.sort_key)[:beam]
        frontier = next_frontier
        if not frontier:
            break
    return sorted(results, key=SearchResult.sort_key)


def budget_search(baseline: Architecture, config: SearchConfig) -> list[SearchResult]:
    """Beam search over rewrite sequences; deterministic for a given config
    and baseline. The baseline itself is always among the results."""
    return _explore(baseline, config, config.beam_width)


def exhaustive_search(baseline: Architecture, config: SearchConfig) -> list[SearchResult]:
    """Complete enumeration up to ``config.max_steps`` (beam ignored). The
    reference oracle for reachability questions; exponential, keep
    max_steps small."""
    return _explore(baseline, config, None)


def replay_trace(baseline: Architecture, trace: Iterable[RewriteStep]) -> Architecture:
    """Re-apply a recorded trace. Traces are reproductions of sequences that
    were already sanctioned when recorded, so budget-increasing steps replay
    without the allow flag."""
    current = baseline
    for i, step_ in enumerate(trace):
        try:
            current, _ = rewrite.apply_step(current, step_, allow_budget_increase=True)
        except (RewriteError, ShapeError) as exc:
            raise RewriteError(f"trace step {i + 1} ({step_.to_line()}): {exc}") from exc
    return current


def trace_to_script(trace: Iterable[RewriteStep]) -> str:
    return "\n".join(s.to_line() for s in trace) + "\n"
