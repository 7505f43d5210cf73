"""Single-line architecture notation: parser, renderer, file I/O.

Grammar (whitespace insignificant):

    arch   := entry ("|" entry)*
    entry  := conv | pool
    conv   := "(" int "," int ")" ["/" int] ["x" int] [attrs]
    pool   := "P" int "/" int [attrs]
    attrs  := ("pad=" int | "g=" int)*

``(s,n)`` is filter size and width, ``/k`` a stride (default 1), ``xk``
repeats the same conv configuration k times (k distinct layers, no weight
sharing implied). Pooling entries cannot repeat. ``pad=`` pins an explicit
per-side padding, overriding the convention defaults; ``g=`` sets a conv
group count.

Files are UTF-8 text, one architecture per file: optional leading
``# key: value`` metadata lines (name, input_size, input_channels, top1,
top5, and free-form keys), then the notation on the remaining lines.
"""

from __future__ import annotations

import re
from pathlib import Path

from .model import Architecture, LayerKind, LayerSpec, conv, max_pool


class NotationError(ValueError):
    """Syntax or value error, with the offending position in the text."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def eof(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            raise NotationError(f"expected {ch!r}", self.pos)
        self.pos += 1

    def accept(self, ch: str) -> bool:
        self.skip_ws()
        if self.pos < len(self.text) and self.text[self.pos] == ch:
            self.pos += 1
            return True
        return False

    def integer(self, what: str, minimum: int = 1) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            raise NotationError(f"expected integer {what}", start)
        value = int(self.text[start:self.pos])
        if value < minimum:
            raise NotationError(f"{what} {value} must be >= {minimum}", start)
        return value

    def word(self, w: str) -> bool:
        self.skip_ws()
        if self.text.startswith(w, self.pos):
            self.pos += len(w)
            return True
        return False


def _parse_attrs(cur: _Cursor) -> tuple[int | None, int | None]:
    pad = grp = None
    while True:
        if cur.word("pad="):
            pad = cur.integer("padding", minimum=0)
        elif cur.word("g="):
            grp = cur.integer("groups", minimum=1)
        else:
            return pad, grp


def parse_notation(text: str) -> tuple[LayerSpec, ...]:
    """Parse a notation string into a layer tuple."""
    cur = _Cursor(text)
    layers: list[LayerSpec] = []
    if cur.eof():
        raise NotationError("empty architecture", 0)
    while True:
        cur.skip_ws()
        at = cur.pos
        if cur.accept("("):
            s = cur.integer("filter size")
            cur.expect(",")
            n = cur.integer("width")
            cur.expect(")")
            stride = cur.integer("stride") if cur.accept("/") else 1
            repeat = 1
            if cur.accept("x"):
                repeat = cur.integer("repetition count")
            pad, grp = _parse_attrs(cur)
            spec = conv(s, n, stride, pad, grp or 1)
            layers.extend([spec] * repeat)
        elif cur.word("P"):
            s = cur.integer("pool filter size")
            cur.expect("/")
            stride = cur.integer("pool stride")
            if cur.peek() == "x":
                raise NotationError("pooling entries cannot repeat", cur.pos)
            pad, grp = _parse_attrs(cur)
            if grp is not None:
                raise NotationError("pooling entries take no groups", at)
            layers.append(max_pool(s, stride, pad))
        else:
            raise NotationError("expected '(' or 'P'", at)
        if cur.eof():
            return tuple(layers)
        cur.expect("|")


def parse_architecture(text: str, input_size: int, input_channels: int,
                       name: str = "", metadata: dict[str, str] | None = None) -> Architecture:
    if input_size < 1 or input_channels < 1:
        raise NotationError("input geometry must be positive", 0)
    return Architecture(name, input_size, input_channels, parse_notation(text),
                        metadata or {})


def _render_entry(layer: LayerSpec, repeat: int) -> str:
    if layer.is_pool:
        s = f"P{layer.filter_size}/{layer.stride}"
    else:
        s = f"({layer.filter_size},{layer.width})"
        if layer.stride != 1:
            s += f"/{layer.stride}"
        if repeat > 1:
            s += f"x{repeat}"
    if layer.padding is not None:
        s += f" pad={layer.padding}"
    if layer.groups != 1:
        s += f" g={layer.groups}"
    return s


def render_architecture(arch: Architecture) -> str:
    """Canonical notation: adjacent identical conv layers compress to xk.

    Only conv/pool architectures have a notation; fc or pyramid-pool tails
    are described in manifests, not in notation strings."""
    entries: list[str] = []
    i = 0
    layers = arch.layers
    while i < len(layers):
        layer = layers[i]
        if layer.kind not in (LayerKind.CONV, LayerKind.MAX_POOL):
            raise ValueError(f"layer {i} ({layer.kind.value}) has no notation; "
                             "only conv/pool architectures render")
        j = i
        if layer.is_conv:
            while j + 1 < len(layers) and layers[j + 1] == layer:
                j += 1
        entries.append(_render_entry(layer, j - i + 1))
        i = j + 1
    return " | ".join(entries)


_META_RE = re.compile(r"^#\s*([A-Za-z0-9_.-]+)\s*:\s*(.*?)\s*$")

DEFAULT_INPUT_SIZE = 224
DEFAULT_INPUT_CHANNELS = 3


def loads_architecture(text: str, name: str = "") -> Architecture:
    """Parse full file content: leading '# key: value' metadata lines, then
    notation (possibly wrapped over several lines)."""
    metadata: dict[str, str] = {}
    body: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            m = _META_RE.match(stripped)
            if m:
                metadata[m.group(1)] = m.group(2)
            continue
        body.append(stripped)
    notation = " ".join(body)
    try:
        input_size = int(metadata.pop("input_size", DEFAULT_INPUT_SIZE))
        input_channels = int(metadata.pop("input_channels", DEFAULT_INPUT_CHANNELS))
    except ValueError as exc:
        raise NotationError(f"bad input geometry metadata: {exc}", 0) from None
    arch_name = metadata.pop("name", name)
    return parse_architecture(notation, input_size, input_channels, arch_name, metadata)


def load_architecture(path: str | Path) -> Architecture:
    path = Path(path)
    return loads_architecture(path.read_text(encoding="utf-8"), name=path.stem)


def dumps_architecture(arch: Architecture) -> str:
    lines = []
    if arch.name:
        lines.append(f"# name: {arch.name}")
    lines.append(f"# input_size: {arch.input_size}")
    lines.append(f"# input_channels: {arch.input_channels}")
    for key in sorted(arch.metadata):
        lines.append(f"# {key}: {arch.metadata[key]}")
    lines.append(render_architecture(arch))
    return "\n".join(lines) + "\n"


def save_architecture(arch: Architecture, path: str | Path) -> None:
    Path(path).write_text(dumps_architecture(arch), encoding="utf-8")
