"""Cost-preserving layer replacements with exact before/after certificates.

Every rule is a pure function returning a fresh architecture, leaving its
input untouched. Preserving rules attach a certificate recording the exact
cost of the affected layers before and after, the whole-model totals, and a
bound classification:

  exact          affected cost is unchanged, integer-for-integer
  known-ratio    the replacement has a closed-form cost ratio under uniform
                 map sizes (e.g. 8/9 for a 3x3 -> 2x2+2x2 split); actual
                 map oscillation may move the realized ratio slightly
  tolerance-only no algebraic prediction; judged only against a tolerance

Two rules deliberately grow the budget (appending depth, 1x1 insertion) and
are quarantined behind an explicit allow flag in script execution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from . import shapes
from .complexity import _conv_terms
from .model import Architecture, LayerSpec, conv, max_pool, stages
from .shapes import ShapeError


class RewriteError(Exception):
    pass


BOUND_EXACT = "exact"
BOUND_KNOWN_RATIO = "known-ratio"
BOUND_TOLERANCE_ONLY = "tolerance-only"

PRESERVING_RULES = ("factorize-filter", "trade-depth-width", "trade-width-filter",
                    "insert-pooling", "delay-subsampling")
NON_PRESERVING_RULES = ("append-depth", "insert-one-by-one")


def preserves_complexity(rule: str) -> bool:
    if rule in PRESERVING_RULES:
        return True
    if rule in NON_PRESERVING_RULES:
        return False
    raise RewriteError(f"unknown rule {rule!r}")


@dataclass(frozen=True)
class RewriteCertificate:
    before_affected: int
    after_affected: int
    before_total: int
    after_total: int
    bound_kind: str
    known_ratio: Fraction | None = None

    @property
    def affected_ratio(self) -> Fraction:
        return Fraction(self.after_affected, self.before_affected)

    @property
    def total_ratio(self) -> Fraction:
        return Fraction(self.after_total, self.before_total)

    def within(self, tolerance: Fraction) -> bool:
        return abs(self.total_ratio - 1) <= tolerance


@dataclass(frozen=True)
class RewriteStep:
    """One replayable rule invocation; parameters are kept as strings so a
    step round-trips through script text unchanged."""

    rule: str
    params: tuple[tuple[str, str], ...]

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.params:
            if k == key:
                return v
        return default

    def to_line(self) -> str:
        return " ".join([self.rule] + [f"{k}={v}" for k, v in self.params])


def step(rule: str, **params) -> RewriteStep:
    return RewriteStep(rule, tuple((k.replace("_", "-"), str(v)) for k, v in params.items()))


def _conv_totals(arch: Architecture) -> tuple[int, list[tuple[int, int]]]:
    terms, total = _conv_terms(arch)
    return total, [(t.layer_index, t.value) for t in terms]


def _in_channels_at(arch: Architecture, layer_index: int) -> int:
    for term in _conv_terms(arch)[0]:
        if term.layer_index == layer_index:
            return term.in_channels
    raise RewriteError(f"layer {layer_index} is not a conv layer")


def _affected_sum(terms: list[tuple[int, int]], start: int, stop: int) -> int:
    return sum(v for i, v in terms if start <= i < stop)


def _certify(before: Architecture, after: Architecture,
             before_slice: tuple[int, int], after_slice: tuple[int, int],
             known_ratio: Fraction | None) -> RewriteCertificate:
    before_total, before_terms = _conv_totals(before)
    try:
        after_total, after_terms = _conv_totals(after)
    except ShapeError as exc:
        raise RewriteError(f"rewrite produced an invalid shape trace: {exc}") from exc
    ba = _affected_sum(before_terms, *before_slice)
    aa = _affected_sum(after_terms, *after_slice)
    if aa == ba:
        bound = BOUND_EXACT
    elif known_ratio is not None:
        bound = BOUND_KNOWN_RATIO
    else:
        bound = BOUND_TOLERANCE_ONLY
    return RewriteCertificate(ba, aa, before_total, after_total, bound, known_ratio)


def _chain_units(in_channels: int, layers: Sequence[LayerSpec],
                 map_scale_sq: Fraction | int = 1) -> Fraction:
    """Map-free cost of a layer chain: sum of prev * s^2 * width, channels
    threading through, optionally scaled for a uniform map-size change."""
    total = Fraction(0)
    prev = in_channels
    for layer in layers:
        total += Fraction(prev * layer.filter_size ** 2 * layer.width, layer.groups)
        prev = layer.width
    return total * map_scale_sq


def _stage(arch: Architecture, stage_index: int):
    views = stages(arch)
    if not 1 <= stage_index <= len(views):
        raise RewriteError(f"no stage {stage_index}; architecture has {len(views)} stages")
    return views[stage_index - 1]


# ---------------------------------------------------------------------------
# Filter factorization
# ---------------------------------------------------------------------------

FACTORIZATION_SCHEMES = {
    "3to2x2": (3, (2, 2)),
    "5to3x3": (5, (3, 3)),
    "5to2x2x2x2": (5, (2, 2, 2, 2)),
}


def factorize_filter(arch: Architecture, stage_index: int, layer_index: int,
                     scheme: str) -> tuple[Architecture, RewriteCertificate]:
    """Replace one conv layer with a cascade of smaller filters, all at the
    original layer's output width. The original stride moves to the first
    new layer; paddings fall back to convention defaults."""
    if scheme not in FACTORIZATION_SCHEMES:
        raise RewriteError(f"unknown factorization scheme {scheme!r}; expected one of "
                           f"{sorted(FACTORIZATION_SCHEMES)}")
    source_size, targets = FACTORIZATION_SCHEMES[scheme]
    view = _stage(arch, stage_index)
    if not 0 <= layer_index < view.depth:
        raise RewriteError(f"stage {stage_index} has {view.depth} conv layers; "
                           f"no layer {layer_index}")
    abs_index = view.start + layer_index
    old = arch.layers[abs_index]
    if old.filter_size != source_size:
        raise RewriteError(f"scheme {scheme} needs a {source_size}x{source_size} layer; "
                           f"layer {layer_index} of stage {stage_index} is "
                           f"{old.filter_size}x{old.filter_size}")
    new_layers = [conv(t, old.width, old.stride if i == 0 else 1, groups=old.groups)
                  for i, t in enumerate(targets)]
    out = arch.with_layers(arch.layers[:abs_index] + tuple(new_layers)
                           + arch.layers[abs_index + 1:])
    a = _in_channels_at(arch, abs_index)
    known = Fraction(int(_chain_units(a, new_layers)), int(_chain_units(a, [old])))
    cert = _certify(arch, out, (abs_index, abs_index + 1),
                    (abs_index, abs_index + len(new_layers)), known)
    return out, cert


# ---------------------------------------------------------------------------
# Width solving and depth/width, width/filter trades
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WidthCandidate:
    width: int
    achieved: Fraction
    target: Fraction

    @property
    def ratio(self) -> Fraction:
        return self.achieved / self.target


@dataclass(frozen=True)
class WidthSolution:
    exact: int | None
    candidates: tuple[WidthCandidate, ...]

    def best(self) -> int:
        """The exact root, or the rounding candidate closest to cost parity
        (ties toward the larger width)."""
        if self.exact is not None:
            return self.exact
        return min(self.candidates, key=lambda c: (abs(c.ratio - 1), -c.width)).width


def _achieved(a: int, b: int, interior: int, s: int, w: int) -> Fraction:
    return Fraction(s * s * (a * w + interior * w * w + w * b))


def solve_interior_width(a: int, b: int, interior: int, s: int,
                         target: int | Fraction) -> WidthSolution:
    """Width w such that a chain conv(a->w), interior x conv(w->w),
    conv(w->b) at filter size s costs ``target`` map-free units:

        a*s^2*w + interior*(w*s^2*w) + w*s^2*b = target

    Returns the exact integer root when it exists, otherwise the floor/ceil
    candidates with their exact achieved costs."""
    target = Fraction(target)
    if target <= 0:
        raise RewriteError("target complexity must be positive")
    if interior < 0:
        raise RewriteError("interior count must be >= 0")
    if interior == 0:
        w = target / (s * s * (a + b))
        if w < 1:
            raise RewriteError(f"target {target} too small for any positive width")
        if w.denominator == 1:
            return WidthSolution(int(w), ())
        root = float(w)
    else:
        disc = Fraction((a + b) ** 2) + 4 * interior * target / (s * s)
        if disc < 0:
            raise RewriteError("no positive width solves the stage equation")
        num, den = disc.numerator, disc.denominator
        rn, rd = math.isqrt(num), math.isqrt(den)
        if rn * rn == num and rd * rd == den:
            w = (Fraction(rn, rd) - (a + b)) / (2 * interior)
            if w >= 1 and w.denominator == 1:
                return WidthSolution(int(w), ())
            root = float(w)
        else:
            root = (math.sqrt(disc) - (a + b)) / (2 * interior)
    if root < 1:
        raise RewriteError(f"target {target} too small for any positive width")
    lo, hi = math.floor(root), math.ceil(root)
    cands = tuple(WidthCandidate(w, _achieved(a, b, interior, s, w), target)
                  for w in sorted({max(1, lo), max(1, hi)}))
    return WidthSolution(None, cands)


def _rebuild_stage(arch: Architecture, view, new_layers: Sequence[LayerSpec]) -> Architecture:
    return arch.with_layers(arch.layers[:view.start] + tuple(new_layers)
                            + arch.layers[view.stop:])


def _uniform_filter_size(view, stage_index: int) -> int:
    sizes = set(view.filter_sizes())
    if len(sizes) != 1:
        raise RewriteError(f"stage {stage_index} mixes filter sizes {sorted(sizes)}; "
                           "width solving needs a uniform stage")
    return sizes.pop()


def trade_depth_width(arch: Architecture, stage_index: int, k_total: int,
                      width: int | None = None) -> tuple[Architecture, RewriteCertificate]:
    """Re-depth a stage to ``k_total`` layers at its filter size, solving for
    the interior width that keeps the stage's map-free cost. The stage's
    input and output channel counts are fixed. An explicit ``width``
    overrides the solver (the certificate then records the realized ratio)."""
    if k_total < 2:
        raise RewriteError("k_total must be >= 2")
    view = _stage(arch, stage_index)
    s = _uniform_filter_size(view, stage_index)
    a, b = view.in_channels, view.out_channels
    target = _chain_units(a, view.conv_layers)
    if width is None:
        width = solve_interior_width(a, b, k_total - 2, s, target).best()
    if width < 1:
        raise RewriteError("width must be >= 1")
    first_stride = view.conv_layers[0].stride
    new_layers = ([conv(s, width, first_stride)]
                  + [conv(s, width)] * (k_total - 2) + [conv(s, b)])
    out = _rebuild_stage(arch, view, new_layers)
    known = _achieved(a, b, k_total - 2, s, width) / target
    cert = _certify(arch, out, (view.start, view.stop),
                    (view.start, view.start + k_total), known)
    return out, cert


def trade_width_filter(arch: Architecture, stage_index: int, new_filter_size: int,
                       widths: Sequence[int] | None = None
                       ) -> tuple[Architecture, RewriteCertificate]:
    """Change a stage's filter size at fixed depth, rescaling widths to keep
    the stage's map-free cost (or using explicit ``widths``, whose last entry
    must keep the stage's output channels)."""
    view = _stage(arch, stage_index)
    s = _uniform_filter_size(view, stage_index)
    if new_filter_size < 1:
        raise RewriteError("filter size must be >= 1")
    if new_filter_size == s and widths is None:
        total, terms = _conv_totals(arch)
        aff = _affected_sum(terms, view.start, view.stop)
        return arch, RewriteCertificate(aff, aff, total, total, BOUND_EXACT, Fraction(1))
    a, b = view.in_channels, view.out_channels
    k_total = view.depth
    target = _chain_units(a, view.conv_layers)
    if widths is None:
        if k_total < 2:
            raise RewriteError(f"stage {stage_index} has a single layer with pinned "
                               "output width; nothing to rescale")
        w = solve_interior_width(a, b, k_total - 2, new_filter_size, target).best()
        widths = [w] * (k_total - 1) + [b]
    else:
        widths = list(widths)
        if len(widths) != k_total:
            raise RewriteError(f"expected {k_total} widths, got {len(widths)}")
        if widths[-1] != b:
            raise RewriteError(f"last width must keep the stage output {b}")
        if any(w < 1 for w in widths):
            raise RewriteError("widths must be >= 1")
    strides = [l.stride for l in view.conv_layers]
    new_layers = [conv(new_filter_size, w, st) for w, st in zip(widths, strides)]
    out = _rebuild_stage(arch, view, new_layers)
    known = _chain_units(a, new_layers) / target
    cert = _certify(arch, out, (view.start, view.stop),
                    (view.start, view.start + k_total), known)
    return out, cert


# ---------------------------------------------------------------------------
# Pooling-stage insertion and delayed subsampling
# ---------------------------------------------------------------------------

def insert_pooling_stage(arch: Architecture, after_stage: int, pool_size: int,
                         pool_stride: int, moved_count: int, width_cap: int = 4096
                         ) -> tuple[Architecture, RewriteCertificate]:
    """Split a stage by inserting a pooling layer before its last
    ``moved_count`` conv layers. The first moved layer's width is inflated
    by the squared pool stride, cancelling the map shrink so the moved cost
    is preserved under uniform maps; the stage's final output width stays."""
    if pool_stride < 2:
        raise RewriteError("pool stride must be >= 2")
    view = _stage(arch, after_stage)
    if not 1 <= moved_count <= view.depth - 1:
        raise RewriteError(f"moved_count must leave a non-empty stage: need "
                           f"1..{view.depth - 1}, got {moved_count}")
    split = view.stop - moved_count
    moved = [l.with_(padding=None) for l in arch.layers[split:view.stop]]
    if moved_count >= 2:
        inflated = moved[0].width * pool_stride ** 2
        if inflated > width_cap:
            raise RewriteError(f"inflated width {inflated} exceeds cap {width_cap}")
        moved[0] = moved[0].with_(width=inflated)
    out = arch.with_layers(arch.layers[:split]
                           + (max_pool(pool_size, pool_stride),)
                           + tuple(moved) + arch.layers[view.stop:])
    in_ch = _in_channels_at(arch, split)
    before_alg = _chain_units(in_ch, arch.layers[split:view.stop])
    after_alg = _chain_units(in_ch, moved, Fraction(1, pool_stride ** 2))
    cert = _certify(arch, out, (split, view.stop),
                    (split, split + 1 + moved_count), after_alg / before_alg)
    return out, cert


def _pad_candidates(in_size: int, filter_size: int, stride: int, target: int,
                    max_pad: int = 4, window: int = 2) -> list[tuple[int, int]]:
    """(pad, out) choices for one layer: everything landing within ``window``
    of the target plus, if nothing does, the single closest-achievable."""
    opts = []
    for p in range(max_pad + 1):
        o = shapes.conv_out_size(in_size, filter_size, stride, p)
        if o >= 1:
            opts.append((p, o))
    if not opts:
        return []
    hits = [(p, o) for p, o in opts if abs(o - target) <= window]
    if hits:
        return hits
    return [min(opts, key=lambda po: (abs(po[1] - target), po[0]))]


def delay_subsampling(arch: Architecture, pool_ordinal: int) -> Architecture:
    """Separate a pooling layer's max-filtering from its subsampling: the
    pool's stride becomes 1 and the original stride multiplies onto the
    next conv layer. Downstream paddings are then re-chosen to keep every
    conv output size at its pre-rewrite value wherever the arithmetic
    allows; sizes that are unreachable (2x2 filters after a stride-1 pool
    cannot shrink far enough) deviate minimally, with the absolute conv-cost
    change and then smaller paddings as tie-breaks. Applying the rule to an
    already-delayed pool is the identity."""
    pool_indices = [i for i, l in enumerate(arch.layers) if l.is_pool]
    if not 1 <= pool_ordinal <= len(pool_indices):
        raise RewriteError(f"no pooling layer #{pool_ordinal}; "
                           f"architecture has {len(pool_indices)}")
    at = pool_indices[pool_ordinal - 1]
    pool = arch.layers[at]
    if pool.stride == 1:
        return arch
    if at + 1 >= len(arch.layers) or not arch.layers[at + 1].is_conv:
        raise RewriteError("the delayed pool must be followed by a conv layer "
                           "to carry its stride")
    before_trace = shapes.infer_shapes(arch)

    tail = [pool.with_(stride=1)]
    nxt = arch.layers[at + 1]
    tail.append(nxt.with_(stride=nxt.stride * pool.stride))
    tail.extend(arch.layers[at + 2:])
    targets = [before_trace[i].out_size for i in range(at, len(arch.layers))]
    term_coeff = []  # per tail layer: cost per m^2 for convs, 0 otherwise
    ch = before_trace[at].in_channels
    for layer in tail:
        if layer.is_conv:
            term_coeff.append((ch // layer.groups) * layer.filter_size ** 2 * layer.width)
            ch = layer.width
        else:
            term_coeff.append(0)

    # Choose tail paddings lexicographically: minimum total size deviation
    # first, then minimum absolute cost change, then smallest paddings.
    # Phase 1 is a min-miss DP over (layer, size); phase 2 enumerates only
    # the zero-slack paths of that DP, which stay few.
    in_size = before_trace[at].in_size
    n_tail = len(tail)

    def transitions(i: int, size: int) -> list[tuple[int, int, int]]:
        layer = tail[i]
        if not (layer.is_conv or layer.is_pool):
            return [(0, size, 0)]
        return [(p, o, abs(o - targets[i]))
                for p, o in _pad_candidates(size, layer.filter_size,
                                            layer.stride, targets[i])]

    reachable: list[set[int]] = [set() for _ in range(n_tail + 1)]
    reachable[0].add(in_size)
    for i in range(n_tail):
        for size in reachable[i]:
            for _, o, _ in transitions(i, size):
                reachable[i + 1].add(o)
        if not reachable[i + 1]:
            raise RewriteError("no valid padding assignment for the delayed tail")

    INF = float("inf")
    min_miss: list[dict[int, float]] = [dict() for _ in range(n_tail + 1)]
    for size in reachable[n_tail]:
        min_miss[n_tail][size] = 0
    for i in range(n_tail - 1, -1, -1):
        for size in reachable[i]:
            best = INF
            for _, o, m in transitions(i, size):
                tail_m = min_miss[i + 1].get(o, INF)
                if m + tail_m < best:
                    best = m + tail_m
            min_miss[i][size] = best

    assignments: list[tuple[int, tuple[int, ...]]] = []
    MAX_PATHS = 100_000

    def walk(i: int, size: int, delta: int, pads: tuple[int, ...]):
        if len(assignments) > MAX_PATHS:
            raise RewriteError("padding tie space exploded; delay this pool manually")
        if i == n_tail:
            assignments.append((abs(delta), pads))
            return
        budget = min_miss[i][size]
        for p, o, m in transitions(i, size):
            if m + min_miss[i + 1].get(o, INF) > budget:
                continue
            d = term_coeff[i] * (o * o - targets[i] * targets[i])
            walk(i + 1, o, delta + d, pads + (p,))

    if min_miss[0][in_size] == INF:
        raise RewriteError("no valid padding assignment for the delayed tail")
    walk(0, in_size, 0, ())
    _, pads = min(assignments)

    new_layers = list(arch.layers[:at])
    for layer, p in zip(tail, pads):
        if layer.is_conv or layer.is_pool:
            new_layers.append(layer.with_(padding=p))
        else:
            new_layers.append(layer)
    candidate = arch.with_layers(new_layers)
    return _drop_redundant_padding(candidate, from_index=at)


def _drop_redundant_padding(arch: Architecture, from_index: int = 0) -> Architecture:
    """Replace explicit paddings equal to the convention default with None
    so rendered notation stays minimal. Output sizes are unchanged."""
    contexts = shapes.pair_contexts(arch)
    new_layers = list(arch.layers)
    for i in range(from_index, len(new_layers)):
        layer = new_layers[i]
        if layer.padding is None:
            continue
        if layer.is_conv:
            default = shapes.default_padding(layer, contexts[i])
        elif layer.is_pool:
            default = 0
        else:
            continue
        if layer.padding == default:
            new_layers[i] = layer.with_(padding=None)
    return arch.with_layers(new_layers)


def delay_all_subsampling(arch: Architecture) -> Architecture:
    """Delay every pooling layer, front to back."""
    out = arch
    ordinal = 1
    while ordinal <= sum(1 for l in out.layers if l.is_pool):
        out = delay_subsampling(out, ordinal)
        ordinal += 1
    return out


# ---------------------------------------------------------------------------
# Budget-increasing rules (quarantined)
# ---------------------------------------------------------------------------

def append_depth(arch: Architecture, count: int, template: LayerSpec) -> Architecture:
    """Append ``count`` copies of a conv template at the tail of the last
    stage. Strictly increases the budget."""
    if count < 1:
        raise RewriteError("count must be >= 1")
    if not template.is_conv:
        raise RewriteError("template must be a conv layer")
    last_conv = max(i for i, l in enumerate(arch.layers) if l.is_conv)
    out = arch.with_layers(arch.layers[:last_conv + 1] + (template,) * count
                           + arch.layers[last_conv + 1:])
    try:
        shapes.infer_shapes(out)
    except ShapeError as exc:
        raise RewriteError(f"appended layers do not fit: {exc}") from exc
    return out


def insert_one_by_one(arch: Architecture, width_factor: Fraction | int = 1,
                      layer_indices: Sequence[int] | None = None,
                      filter_sizes: Sequence[int] = (2, 3)) -> Architecture:
    """Insert a 1x1 conv after selected conv layers (by absolute index, or
    by default after every conv whose filter size is in ``filter_sizes``).
    The 1x1 width is ``width_factor`` times the preceding layer's width;
    only factors 1 and 1/2 are meaningful here. Strictly increases the
    budget."""
    factor = Fraction(width_factor)
    if factor not in (Fraction(1), Fraction(1, 2)):
        raise RewriteError("width factor must be 1 or 1/2")
    if layer_indices is None:
        sites = [i for i, l in enumerate(arch.layers)
                 if l.is_conv and l.filter_size in set(filter_sizes)]
    else:
        sites = sorted(set(layer_indices))
        for i in sites:
            if not 0 <= i < len(arch.layers) or not arch.layers[i].is_conv:
                raise RewriteError(f"site {i} is not a conv layer")
    # Inserted 1x1 layers would interrupt 2x2 pairing runs and re-derive
    # different default paddings; pin the prevailing geometry first.
    contexts = shapes.pair_contexts(arch)
    pinned = [l.with_(padding=shapes.default_padding(l, contexts[i]))
              if l.is_conv and l.filter_size == 2 and l.padding is None else l
              for i, l in enumerate(arch.layers)]
    new_layers: list[LayerSpec] = []
    for i, layer in enumerate(pinned):
        new_layers.append(layer)
        if i in sites:
            width = factor * layer.width
            if width.denominator != 1:
                raise RewriteError(f"1x1 width {factor} * {layer.width} is not integral")
            new_layers.append(conv(1, int(width)))
    return arch.with_layers(new_layers)


# ---------------------------------------------------------------------------
# Standalone verification
# ---------------------------------------------------------------------------

def verify_replacement(before: Architecture, after: Architecture,
                       tolerance: Fraction = Fraction(8, 100)) -> RewriteCertificate:
    """Whole-model certificate for an arbitrary replacement: exact when the
    conv totals match, otherwise judged against the tolerance."""
    bt, _ = _conv_totals(before)
    at_, _ = _conv_totals(after)
    bound = BOUND_EXACT if at_ == bt else BOUND_TOLERANCE_ONLY
    return RewriteCertificate(bt, at_, bt, at_, bound, None)


# ---------------------------------------------------------------------------
# Rewrite scripts
# ---------------------------------------------------------------------------

def parse_script(text: str) -> list[RewriteStep]:
    """One rule invocation per line: ``rule-name key=value ...``. Blank
    lines and '#' comments are ignored."""
    steps = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        rule = parts[0]
        if rule not in PRESERVING_RULES and rule not in NON_PRESERVING_RULES:
            raise RewriteError(f"line {ln}: unknown rule {rule!r}")
        params = []
        for tok in parts[1:]:
            if "=" not in tok:
                raise RewriteError(f"line {ln}: expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            params.append((k, v))
        steps.append(RewriteStep(rule, tuple(params)))
    return steps


def _int_param(step_: RewriteStep, key: str, default: int | None = None) -> int:
    raw = step_.get(key)
    if raw is None:
        if default is None:
            raise RewriteError(f"{step_.rule}: missing parameter {key}=")
        return default
    try:
        return int(raw)
    except ValueError:
        raise RewriteError(f"{step_.rule}: {key}={raw!r} is not an integer") from None


def apply_step(arch: Architecture, step_: RewriteStep,
               allow_budget_increase: bool = False
               ) -> tuple[Architecture, RewriteCertificate | None]:
    """Apply one parsed step. Budget-increasing rules require the allow
    flag; preserving rules return their certificate."""
    rule = step_.rule
    if rule in NON_PRESERVING_RULES and not allow_budget_increase:
        raise RewriteError(f"rule {rule} increases the budget; "
                           "pass allow_budget_increase to apply it")
    if rule == "factorize-filter":
        scheme = step_.get("scheme")
        if scheme is None:
            raise RewriteError("factorize-filter: missing scheme=")
        return factorize_filter(arch, _int_param(step_, "stage"),
                                _int_param(step_, "layer"), scheme)
    if rule == "trade-depth-width":
        width = step_.get("width")
        return trade_depth_width(arch, _int_param(step_, "stage"),
                                 _int_param(step_, "layers"),
                                 int(width) if width is not None else None)
    if rule == "trade-width-filter":
        widths_raw = step_.get("widths")
        widths = [int(w) for w in widths_raw.split(",")] if widths_raw else None
        return trade_width_filter(arch, _int_param(step_, "stage"),
                                  _int_param(step_, "filter"), widths)
    if rule == "insert-pooling":
        return insert_pooling_stage(arch, _int_param(step_, "after-stage"),
                                    _int_param(step_, "pool"),
                                    _int_param(step_, "stride"),
                                    _int_param(step_, "move"),
                                    _int_param(step_, "width-cap", 4096))
    if rule == "delay-subsampling":
        which = step_.get("pool", "all")
        if which == "all":
            return delay_all_subsampling(arch), None
        return delay_subsampling(arch, int(which)), None
    if rule == "append-depth":
        template = conv(_int_param(step_, "filter"), _int_param(step_, "width"),
                        _int_param(step_, "stride", 1))
        return append_depth(arch, _int_param(step_, "count"), template), None
    if rule == "insert-one-by-one":
        factor = Fraction(step_.get("factor", "1"))
        layers_raw = step_.get("layers")
        sizes_raw = step_.get("sizes")
        indices = [int(x) for x in layers_raw.split(",")] if layers_raw else None
        sizes = tuple(int(x) for x in sizes_raw.split(",")) if sizes_raw else (2, 3)
        return insert_one_by_one(arch, factor, indices, sizes), None
    raise RewriteError(f"unknown rule {rule!r}")


@dataclass(frozen=True)
class ScriptResult:
    architecture: Architecture
    certificates: tuple[RewriteCertificate | None, ...]

    def all_within(self, tolerance: Fraction) -> bool:
        return all(c.within(tolerance) for c in self.certificates if c is not None)


def run_script(arch: Architecture, steps: Sequence[RewriteStep],
               allow_budget_increase: bool = False) -> ScriptResult:
    current = arch
    certs: list[RewriteCertificate | None] = []
    for i, step_ in enumerate(steps):
        try:
            current, cert = apply_step(current, step_, allow_budget_increase)
        except (RewriteError, ShapeError) as exc:
            raise RewriteError(f"step {i + 1} ({step_.to_line()}): {exc}") from exc
        certs.append(cert)
    return ScriptResult(current, tuple(certs))
