"""Spatial shape inference.

Output sizes follow the floor convention

    out = floor((in + 2*pad - filter) / stride) + 1

for both convolution and pooling. Default paddings, used whenever a layer
carries no explicit override: 7x7 -> 0, 5x5 -> 2, 3x3 -> 1, 1x1 -> 0, any
other size -> 0, and pooling -> 0. Consecutive 2x2 conv layers are paired
greedily left to right: the first of a pair is unpadded (shrinking the map
by one pixel) and the second pads one pixel per side (restoring it); an
unpaired trailing 2x2 layer is unpadded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .model import Architecture, LayerKind, LayerSpec, iter_conv_runs


class PairContext(enum.Enum):
    FIRST_OF_PAIR = "first-of-pair"
    SECOND_OF_PAIR = "second-of-pair"
    STANDALONE = "standalone"


_DEFAULT_PAD = {7: 0, 5: 2, 3: 1, 1: 0}


class ShapeError(Exception):
    """A layer produced a non-positive feature map."""

    def __init__(self, layer_index: int, message: str):
        super().__init__(message)
        self.layer_index = layer_index


def default_padding(layer: LayerSpec, context: PairContext = PairContext.STANDALONE) -> int:
    """Per-side default padding for a conv layer in the given pairing
    context. 2x2 layers pad 0 as the first of a pair (or standalone) and 1
    as the second."""
    s = layer.filter_size
    if s == 2:
        return 1 if context is PairContext.SECOND_OF_PAIR else 0
    return _DEFAULT_PAD.get(s, 0)


def pair_contexts(arch: Architecture) -> dict[int, PairContext]:
    """Pairing context for every conv layer, by absolute layer index.

    2x2 layers pair up within each maximal run of consecutive 2x2 convs;
    anything else is standalone."""
    out: dict[int, PairContext] = {}
    for start, run in iter_conv_runs(arch.layers):
        pos2 = 0
        for off, layer in enumerate(run):
            idx = start + off
            if layer.filter_size != 2:
                out[idx] = PairContext.STANDALONE
                pos2 = 0
                continue
            # Position inside the current run of consecutive 2x2 layers.
            if off > 0 and run[off - 1].filter_size == 2:
                pos2 += 1
            else:
                pos2 = 0
            if pos2 % 2 == 1:
                out[idx] = PairContext.SECOND_OF_PAIR
            else:
                tail = off + 1 >= len(run) or run[off + 1].filter_size != 2
                out[idx] = PairContext.FIRST_OF_PAIR if not tail else PairContext.STANDALONE
    return out


def conv_out_size(in_size: int, filter_size: int, stride: int, padding: int) -> int:
    return (in_size + 2 * padding - filter_size) // stride + 1


def apply_stride_override(in_size: int, layer: LayerSpec, stride: int,
                          padding: int | None = None) -> int:
    """Output size of ``layer`` when its stride is replaced by ``stride``
    (used when a pooling layer's subsampling stride is carried by the
    following conv layer)."""
    pad = padding if padding is not None else (
        layer.padding if layer.padding is not None else default_padding(layer))
    return conv_out_size(in_size, layer.filter_size, stride, pad)


@dataclass(frozen=True)
class LayerShape:
    layer_index: int
    kind: LayerKind
    in_size: int
    out_size: int
    in_channels: int
    out_channels: int
    effective_padding: int
    effective_stride: int


@dataclass(frozen=True)
class ShapeTrace:
    records: tuple[LayerShape, ...]

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> LayerShape:
        return self.records[i]

    def conv_records(self) -> list[LayerShape]:
        return [r for r in self.records if r.kind is LayerKind.CONV]

    def conv_out_sizes(self) -> list[int]:
        return [r.out_size for r in self.conv_records()]

    def size_chain(self) -> list[int]:
        """Input size followed by every layer's output size."""
        if not self.records:
            return []
        return [self.records[0].in_size] + [r.out_size for r in self.records]


def effective_padding(arch: Architecture, layer_index: int,
                      contexts: dict[int, PairContext] | None = None) -> int:
    layer = arch.layers[layer_index]
    if layer.padding is not None:
        return layer.padding
    if layer.is_conv:
        ctx = (contexts or pair_contexts(arch)).get(layer_index, PairContext.STANDALONE)
        return default_padding(layer, ctx)
    return 0


def infer_shapes(arch: Architecture) -> ShapeTrace:
    """Propagate spatial sizes and channel counts through the layer list.

    Raises ShapeError as soon as any layer's output size drops below 1.
    Pooling preserves channels; fc and pyramid-pool tails collapse the
    spatial extent to 1 and never fail."""
    contexts = pair_contexts(arch)
    records: list[LayerShape] = []
    size, channels = arch.input_size, arch.input_channels
    for i, layer in enumerate(arch.layers):
        if layer.kind in (LayerKind.CONV, LayerKind.MAX_POOL):
            pad = layer.padding if layer.padding is not None else (
                default_padding(layer, contexts[i]) if layer.is_conv else 0)
            out = conv_out_size(size, layer.filter_size, layer.stride, pad)
            if out < 1:
                raise ShapeError(i, f"layer {i} ({layer.filter_size}x{layer.filter_size}"
                                    f"/{layer.stride} pad {pad}) maps {size} -> {out}")
            out_channels = layer.width if layer.is_conv else channels
            records.append(LayerShape(i, layer.kind, size, out, channels,
                                      out_channels, pad, layer.stride))
            size, channels = out, out_channels
        elif layer.kind is LayerKind.SPATIAL_PYRAMID_POOL:
            records.append(LayerShape(i, layer.kind, size, 1, channels, channels, 0, 1))
            size = 1
        else:  # fully connected
            records.append(LayerShape(i, layer.kind, size, 1, channels,
                                      layer.width or 1, 0, 1))
            size, channels = 1, layer.width or 1
    return ShapeTrace(tuple(records))
