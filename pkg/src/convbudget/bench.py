"""Direct-convolution execution and timing.

The kernel is a JIT-compiled direct convolution (cross-correlation), strictly
single-threaded so wall times reflect arithmetic volume rather than
scheduling. Correctness is pinned to a deliberately naive nested-loop oracle
in the test suite; the kernel here is the timed path.

Timing protocol: warm-up runs followed by >= 5 repeats, reporting the median.
The clock is injectable so the protocol itself is testable with a synthetic
counter.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numba import njit

from . import shapes
from .model import Architecture, LayerSpec


class BenchError(Exception):
    pass


WEIGHT_STD = 0.01  # zero-mean Gaussian init for synthetic weights


@dataclass
class Tensor:
    """A (channels, height, width) block of float32 values, C-contiguous."""

    channels: int
    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        expected = (self.channels, self.height, self.width)
        if self.data.shape != expected:
            raise BenchError(f"data shape {self.data.shape} != {expected}")
        if self.data.dtype != np.float32:
            raise BenchError(f"data must be float32, got {self.data.dtype}")
        if not self.data.flags["C_CONTIGUOUS"]:
            self.data = np.ascontiguousarray(self.data)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        array = np.ascontiguousarray(array, dtype=np.float32)
        if array.ndim != 3:
            raise BenchError(f"expected 3 dims (c, h, w), got {array.ndim}")
        return cls(array.shape[0], array.shape[1], array.shape[2], array)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Tensor":
        return cls(channels, height, width,
                   np.zeros((channels, height, width), dtype=np.float32))

    @classmethod
    def gaussian(cls, channels: int, height: int, width: int,
                 rng: np.random.Generator, std: float = 1.0) -> "Tensor":
        data = rng.normal(0.0, std, (channels, height, width)).astype(np.float32)
        return cls(channels, height, width, data)


# Two kernel shapes so the per-MAC cost stays flat across layer geometries
# (the whole point of the proportionality check): wide layers accumulate over
# the contiguous channel axis of an (H, W, C) view, narrow-channel layers
# (first layers on images) accumulate along the output row instead. Both use
# double accumulators; tensor data stays float32.

_CHANNELS_INNER_MIN = 8


@njit(cache=True)
def _conv_kernel_rows(inp, weights, stride, out):  # pragma: no cover - jitted
    n_out, per_group, s, _ = weights.shape
    channels = inp.shape[0]
    groups = channels // per_group
    out_per_group = n_out // groups
    oh = out.shape[1]
    ow = out.shape[2]
    acc = np.zeros(ow, dtype=np.float64)
    for co in range(n_out):
        base = (co // out_per_group) * per_group
        for y in range(oh):
            ys = y * stride
            acc[:] = 0.0
            for ci in range(per_group):
                c = base + ci
                for ky in range(s):
                    row = inp[c, ys + ky]
                    for kx in range(s):
                        wv = weights[co, ci, ky, kx]
                        for x in range(ow):
                            acc[x] += wv * row[x * stride + kx]
            for x in range(ow):
                out[co, y, x] = acc[x]


@njit(cache=True)
def _conv_kernel_channels(inp_hwc, weights, stride, out):  # pragma: no cover
    n_out, per_group, s, _ = weights.shape
    channels = inp_hwc.shape[2]
    groups = channels // per_group
    out_per_group = n_out // groups
    oh = out.shape[1]
    ow = out.shape[2]
    for co in range(n_out):
        base = (co // out_per_group) * per_group
        for y in range(oh):
            ys = y * stride
            for x in range(ow):
                xs = x * stride
                acc = 0.0
                for ky in range(s):
                    for kx in range(s):
                        tap = weights[co, :, ky, kx]
                        pixel = inp_hwc[ys + ky, xs + kx]
                        for ci in range(per_group):
                            acc += pixel[base + ci] * tap[ci]
                out[co, y, x] = acc


@njit(cache=True)
def _pool_kernel(inp, size, stride, out):  # pragma: no cover - jitted
    channels = inp.shape[0]
    oh = out.shape[1]
    ow = out.shape[2]
    for c in range(channels):
        for y in range(oh):
            ys = y * stride
            for x in range(ow):
                xs = x * stride
                best = inp[c, ys, xs]
                for ky in range(size):
                    for kx in range(size):
                        v = inp[c, ys + ky, xs + kx]
                        if v > best:
                            best = v
                out[c, y, x] = best


def _padded(t: Tensor, pad: int) -> np.ndarray:
    if pad == 0:
        return t.data
    buf = np.zeros((t.channels, t.height + 2 * pad, t.width + 2 * pad), dtype=np.float32)
    buf[:, pad:pad + t.height, pad:pad + t.width] = t.data
    return buf


def _resolve_pad(layer: LayerSpec, padding: int | None) -> int:
    if padding is not None:
        return padding
    if layer.padding is not None:
        return layer.padding
    return shapes.default_padding(layer) if layer.is_conv else 0


def conv_forward(input_: Tensor, layer: LayerSpec, weights: np.ndarray,
                 padding: int | None = None) -> Tensor:
    """Cross-correlate ``input_`` with ``weights`` of shape
    (width, in_channels/groups, s, s), using the layer's stride and the
    given effective padding (defaults resolve as standalone)."""
    if not layer.is_conv:
        raise BenchError("conv_forward needs a conv layer")
    s = layer.filter_size
    expected = (layer.width, input_.channels // layer.groups, s, s)
    if weights.shape != tuple(expected):
        raise BenchError(f"weight shape {weights.shape} != {expected}")
    if weights.dtype != np.float32:
        raise BenchError("weights must be float32")
    if input_.channels % layer.groups or layer.width % layer.groups:
        raise BenchError(f"groups {layer.groups} must divide channels "
                         f"{input_.channels} and width {layer.width}")
    pad = _resolve_pad(layer, padding)
    out_h = shapes.conv_out_size(input_.height, s, layer.stride, pad)
    out_w = shapes.conv_out_size(input_.width, s, layer.stride, pad)
    if out_h < 1 or out_w < 1:
        raise BenchError(f"output {out_h}x{out_w} is not positive")
    out = Tensor.zeros(layer.width, out_h, out_w)
    padded = _padded(input_, pad)
    weights = np.ascontiguousarray(weights)
    if input_.channels // layer.groups >= _CHANNELS_INNER_MIN:
        _conv_kernel_channels(np.ascontiguousarray(padded.transpose(1, 2, 0)),
                              weights, layer.stride, out.data)
    else:
        _conv_kernel_rows(padded, weights, layer.stride, out.data)
    return out


def max_pool_forward(input_: Tensor, layer: LayerSpec,
                     padding: int | None = None) -> Tensor:
    if not layer.is_pool:
        raise BenchError("max_pool_forward needs a pooling layer")
    pad = _resolve_pad(layer, padding)
    s = layer.filter_size
    out_h = shapes.conv_out_size(input_.height, s, layer.stride, pad)
    out_w = shapes.conv_out_size(input_.width, s, layer.stride, pad)
    if out_h < 1 or out_w < 1:
        raise BenchError(f"output {out_h}x{out_w} is not positive")
    buf = _padded(input_, pad)
    if pad:
        # Padded cells must not win the max.
        buf = buf.copy()
        buf[:, :pad, :] = -np.inf
        buf[:, -pad:, :] = -np.inf
        buf[:, :, :pad] = -np.inf
        buf[:, :, -pad:] = -np.inf
    out = Tensor.zeros(input_.channels, out_h, out_w)
    _pool_kernel(buf, s, layer.stride, out.data)
    return out


@dataclass(frozen=True)
class TimingRecord:
    label: str
    filter_size: int
    in_channels: int
    width: int
    stride: int
    padding: int
    in_size: int
    out_size: int
    theoretical: int
    wall_ns: int
    repeats: int
    warmup: int
    samples: tuple[int, ...]

    @property
    def ns_per_unit(self) -> float:
        return self.wall_ns / self.theoretical if self.theoretical else float("nan")


Clock = Callable[[], int]


def time_layer(layer: LayerSpec, in_size: int, in_channels: int,
               repeats: int = 9, warmup: int = 2, padding: int | None = None,
               clock: Clock = time.perf_counter_ns,
               rng: np.random.Generator | None = None,
               memory_cap_bytes: int = 1 << 30, label: str = "") -> TimingRecord:
    """Median-of-repeats wall time for one conv layer on synthetic data.
    Weights come from a zero-mean Gaussian with std 0.01."""
    if repeats < 5:
        raise BenchError("at least 5 repeats required")
    if warmup < 0:
        raise BenchError("warmup must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(12345)
    pad = _resolve_pad(layer, padding)
    out_size = shapes.conv_out_size(in_size, layer.filter_size, layer.stride, pad)
    if out_size < 1:
        raise BenchError(f"layer maps {in_size} -> {out_size}")
    per_group = in_channels // layer.groups
    floats = (in_channels * in_size ** 2
              + in_channels * (in_size + 2 * pad) ** 2
              + layer.width * out_size ** 2
              + layer.width * per_group * layer.filter_size ** 2)
    if floats * 4 > memory_cap_bytes:
        raise BenchError(f"layer needs {floats * 4} bytes, cap is {memory_cap_bytes}")
    input_ = Tensor.gaussian(in_channels, in_size, in_size, rng)
    weights = rng.normal(0.0, WEIGHT_STD,
                         (layer.width, per_group, layer.filter_size,
                          layer.filter_size)).astype(np.float32)
    for _ in range(warmup):
        conv_forward(input_, layer, weights, pad)
    samples = []
    for _ in range(repeats):
        t0 = clock()
        conv_forward(input_, layer, weights, pad)
        samples.append(clock() - t0)
    theoretical = per_group * layer.filter_size ** 2 * layer.width * out_size ** 2
    return TimingRecord(label or f"({layer.filter_size},{layer.width})",
                        layer.filter_size, in_channels, layer.width, layer.stride,
                        pad, in_size, out_size, theoretical,
                        int(statistics.median(samples)), repeats, warmup,
                        tuple(samples))


@dataclass(frozen=True)
class CorrelationReport:
    pearson: float
    ns_per_unit: tuple[float, ...]


def correlate(records: Sequence[TimingRecord]) -> CorrelationReport:
    """Pearson correlation between theoretical terms and median wall times.
    Needs >= 3 records spanning at least a 10x theoretical range."""
    if len(records) < 3:
        raise BenchError("need at least 3 records to correlate")
    theos = [r.theoretical for r in records]
    times = [r.wall_ns for r in records]
    if max(theos) < 10 * min(theos):
        raise BenchError("records must span a >= 10x theoretical range")
    if len(set(theos)) == 1 or len(set(times)) == 1:
        raise BenchError("degenerate variance; correlation undefined")
    r = statistics.correlation([float(t) for t in theos], [float(t) for t in times])
    return CorrelationReport(r, tuple(rec.ns_per_unit for rec in records))


@dataclass(frozen=True)
class ArchitectureTimings:
    conv_records: tuple[TimingRecord, ...]
    pool_records: tuple[TimingRecord, ...]
    conv_wall_ns: int
    pool_wall_ns: int
    theoretical_total: int


def time_architecture(arch: Architecture, input_scale: Fraction = Fraction(1, 4),
                      repeats: int = 9, warmup: int = 2,
                      clock: Clock = time.perf_counter_ns,
                      rng: np.random.Generator | None = None,
                      memory_cap_bytes: int = 1 << 30) -> ArchitectureTimings:
    """Time every conv layer of the architecture at a scaled input size.
    Pooling layers are timed and reported separately; they never join the
    theoretical column. Tail layers (fc, pyramid pool) are skipped."""
    scale = Fraction(input_scale)
    scaled = int(arch.input_size * scale)
    if scaled < 1:
        raise BenchError(f"scaled input {scaled} is not positive")
    small = Architecture(arch.name, scaled, arch.input_channels, arch.layers,
                         dict(arch.metadata))
    trace = shapes.infer_shapes(small)  # raises ShapeError if the scale is too small
    rng = rng if rng is not None else np.random.default_rng(12345)
    conv_records: list[TimingRecord] = []
    pool_records: list[TimingRecord] = []
    for rec in trace:
        layer = small.layers[rec.layer_index]
        if layer.is_conv:
            conv_records.append(time_layer(
                layer, rec.in_size, rec.in_channels, repeats, warmup,
                rec.effective_padding, clock, rng, memory_cap_bytes,
                label=f"conv{rec.layer_index}"))
        elif layer.is_pool:
            pool_records.append(_time_pool(layer, rec.in_size, rec.in_channels,
                                           repeats, warmup, rec.effective_padding,
                                           clock, rng, label=f"pool{rec.layer_index}"))
    return ArchitectureTimings(
        tuple(conv_records), tuple(pool_records),
        sum(r.wall_ns for r in conv_records),
        sum(r.wall_ns for r in pool_records),
        sum(r.theoretical for r in conv_records))


def _time_pool(layer: LayerSpec, in_size: int, in_channels: int, repeats: int,
               warmup: int, padding: int, clock: Clock,
               rng: np.random.Generator, label: str) -> TimingRecord:
    input_ = Tensor.gaussian(in_channels, in_size, in_size, rng)
    for _ in range(warmup):
        max_pool_forward(input_, layer, padding)
    samples = []
    for _ in range(repeats):
        t0 = clock()
        max_pool_forward(input_, layer, padding)
        samples.append(clock() - t0)
    out_size = shapes.conv_out_size(in_size, layer.filter_size, layer.stride, padding)
    return TimingRecord(label, layer.filter_size, in_channels, in_channels,
                        layer.stride, padding, in_size, out_size, 0,
                        int(statistics.median(samples)), repeats, warmup,
                        tuple(samples))
