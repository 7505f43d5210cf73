"""Architecture data model: layers, stages, structural validation.

A network is an ordered list of layers over a square input. Convolutional
layers carry a square filter size, an output width (filter count), a stride,
an optional explicit per-side padding, and a group count. Pooling layers are
channel-preserving. Fully-connected and pyramid-pooling tail layers are
representable so whole models can be described, but they never participate
in the arithmetic budget.

A "stage" is a maximal run of convolutional layers between two pooling
layers; stage indices are 1-based to match the usual table conventions.
All types are immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping


class LayerKind(enum.Enum):
    CONV = "conv"
    MAX_POOL = "maxpool"
    FULLY_CONNECTED = "fc"
    SPATIAL_PYRAMID_POOL = "spp"


class Activation(enum.Enum):
    RELU = "relu"
    NONE = "none"


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``padding`` is an explicit per-side override; ``None``
    defers to the convention defaults resolved during shape inference."""

    kind: LayerKind
    filter_size: int = 1
    width: int | None = None
    stride: int = 1
    padding: int | None = None
    groups: int = 1
    activation: Activation = Activation.RELU

    @property
    def is_conv(self) -> bool:
        return self.kind is LayerKind.CONV

    @property
    def is_pool(self) -> bool:
        return self.kind is LayerKind.MAX_POOL

    def with_(self, **changes) -> "LayerSpec":
        return replace(self, **changes)


def conv(filter_size: int, width: int, stride: int = 1,
         padding: int | None = None, groups: int = 1) -> LayerSpec:
    return LayerSpec(LayerKind.CONV, filter_size, width, stride, padding, groups)


def max_pool(filter_size: int, stride: int, padding: int | None = None) -> LayerSpec:
    return LayerSpec(LayerKind.MAX_POOL, filter_size, None, stride, padding,
                     activation=Activation.NONE)


def fully_connected(units: int) -> LayerSpec:
    return LayerSpec(LayerKind.FULLY_CONNECTED, 1, units)


def spatial_pyramid_pool() -> LayerSpec:
    """Fixed-output pooling head: 4 levels (6x6, 3x3, 2x2, 1x1), 50 bins per
    channel regardless of input geometry. Modeled as a fixed-cost tail."""
    return LayerSpec(LayerKind.SPATIAL_PYRAMID_POOL, 1, None,
                     activation=Activation.NONE)


SPP_BINS = 50


@dataclass(frozen=True)
class Architecture:
    """An ordered layer list over a square ``input_size`` x ``input_size``
    input with ``input_channels`` channels. ``metadata`` holds descriptive
    key/value strings (reported accuracies and the like); it never affects
    structure or cost and is excluded from equality and hashing."""

    name: str
    input_size: int
    input_channels: int
    layers: tuple[LayerSpec, ...]
    metadata: Mapping[str, str] = field(default_factory=dict, compare=False)

    @property
    def depth(self) -> int:
        """Number of convolutional layers."""
        return sum(1 for l in self.layers if l.is_conv)

    def conv_layers(self) -> list[tuple[int, LayerSpec]]:
        return [(i, l) for i, l in enumerate(self.layers) if l.is_conv]

    def structurally_equals(self, other: "Architecture") -> bool:
        """Equality of everything that affects cost; names and metadata
        are ignored."""
        return (self.input_size == other.input_size
                and self.input_channels == other.input_channels
                and self.layers == other.layers)

    def with_layers(self, layers: Iterable[LayerSpec], name: str | None = None) -> "Architecture":
        return Architecture(name if name is not None else self.name,
                            self.input_size, self.input_channels,
                            tuple(layers), dict(self.metadata))


@dataclass(frozen=True)
class StageView:
    """A maximal run of conv layers between pooling layers.

    ``index`` is 1-based. ``start``/``stop`` delimit the run inside
    ``Architecture.layers``; ``conv_layers`` is the corresponding slice.
    """

    index: int
    start: int
    stop: int
    conv_layers: tuple[LayerSpec, ...]
    in_channels: int
    out_channels: int

    @property
    def depth(self) -> int:
        return len(self.conv_layers)

    def filter_sizes(self) -> tuple[int, ...]:
        return tuple(l.filter_size for l in self.conv_layers)


def stages(arch: Architecture) -> list[StageView]:
    """Partition the conv layers into stages.

    Every conv layer lands in exactly one stage; pooling layers separate
    stages and belong to none."""
    out: list[StageView] = []
    run_start: int | None = None
    channels = arch.input_channels
    run_in = channels
    for i, layer in enumerate(arch.layers):
        if layer.is_conv:
            if run_start is None:
                run_start = i
                run_in = channels
            channels = layer.width
        else:
            if run_start is not None:
                out.append(StageView(len(out) + 1, run_start, i,
                                     arch.layers[run_start:i], run_in, channels))
                run_start = None
    if run_start is not None:
        out.append(StageView(len(out) + 1, run_start, len(arch.layers),
                             arch.layers[run_start:len(arch.layers)], run_in, channels))
    return out


def stage_of_layer(arch: Architecture, layer_index: int) -> int | None:
    """1-based stage index of the layer at ``layer_index``, or ``None`` for
    layers outside any stage (pooling and tail layers)."""
    for view in stages(arch):
        if view.start <= layer_index < view.stop:
            return view.index
    return None


@dataclass(frozen=True)
class Violation:
    code: str
    layer_index: int | None
    message: str

    def __str__(self) -> str:
        where = "architecture" if self.layer_index is None else f"layer {self.layer_index}"
        return f"{self.code} at {where}: {self.message}"


def validate(arch: Architecture) -> list[Violation]:
    """Collect structural violations. Empty list means the architecture is
    well-formed and shape inference produces positive sizes everywhere.
    Violations are data, never exceptions."""
    out: list[Violation] = []
    channels = arch.input_channels
    for i, layer in enumerate(arch.layers):
        if layer.filter_size < 1:
            out.append(Violation("InvalidFilterSize", i,
                                 f"filter size {layer.filter_size} must be >= 1"))
        if layer.stride < 1:
            out.append(Violation("InvalidStride", i,
                                 f"stride {layer.stride} must be >= 1"))
        if layer.padding is not None and layer.padding < 0:
            out.append(Violation("InvalidPadding", i,
                                 f"padding {layer.padding} must be >= 0"))
        if layer.is_conv or layer.kind is LayerKind.FULLY_CONNECTED:
            if layer.width is None or layer.width < 1:
                out.append(Violation("InvalidWidth", i,
                                     f"width {layer.width} must be >= 1"))
        if layer.is_pool and layer.width is not None:
            out.append(Violation("PoolCarriesWidth", i,
                                 "pooling layers are channel-preserving"))
        if layer.groups < 1:
            out.append(Violation("InvalidGroups", i,
                                 f"groups {layer.groups} must be >= 1"))
        elif layer.is_conv and layer.width is not None and layer.width >= 1:
            if channels % layer.groups or layer.width % layer.groups:
                out.append(Violation("GroupsDoNotDivide", i,
                                     f"groups {layer.groups} must divide input "
                                     f"channels {channels} and width {layer.width}"))
        if layer.is_conv and layer.width is not None:
            channels = layer.width
    if arch.depth == 0:
        out.append(Violation("NoConvLayer", None, "at least one conv layer required"))
    if arch.input_size < 1 or arch.input_channels < 1:
        out.append(Violation("InvalidInput", None,
                             f"input {arch.input_size}x{arch.input_size}x"
                             f"{arch.input_channels} must be positive"))
    if not out:
        # Only attempt shape inference on otherwise well-formed layers.
        from . import shapes

        try:
            shapes.infer_shapes(arch)
        except shapes.ShapeError as exc:
            out.append(Violation("NonPositiveFeatureMap", exc.layer_index, str(exc)))
    return out


def iter_conv_runs(layers: tuple[LayerSpec, ...]) -> Iterator[tuple[int, list[LayerSpec]]]:
    """Yield (start_index, run) for each maximal run of consecutive conv
    layers in the raw layer list."""
    i = 0
    n = len(layers)
    while i < n:
        if layers[i].is_conv:
            j = i
            while j < n and layers[j].is_conv:
                j += 1
            yield i, list(layers[i:j])
            i = j
        else:
            i += 1
