"""Versioned model fixtures with their published relative budgets.

The fixture directory ships with the package (override with the
CONVBUDGET_ZOO_DIR environment variable). Architecture files carry the
conv-side structure; the shared fc/pyramid-pool tail is described once in
the manifest since it is identical, and budget-irrelevant, for the whole
budget family. Reported accuracies ride along as metadata only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from ..complexity import ComplexityReport, total_complexity
from ..model import Architecture, fully_connected, spatial_pyramid_pool
from ..notation import load_architecture
from ..rewrite import RewriteStep, parse_script

ZOO_DIR_ENV = "CONVBUDGET_ZOO_DIR"


class ZooError(KeyError):
    pass


@dataclass(frozen=True)
class ZooEntry:
    name: str
    file: str | None
    baseline: str
    published_relative: Fraction
    tolerance: Fraction | None
    band: tuple[Fraction, Fraction] | None
    source: str
    kind: str
    unprimed: str | None = None
    notes: str | None = None

    @property
    def is_structural(self) -> bool:
        return self.file is not None

    def bounds(self) -> tuple[Fraction, Fraction]:
        if self.band is not None:
            return self.band
        if self.tolerance is not None:
            return (self.published_relative - self.tolerance,
                    self.published_relative + self.tolerance)
        raise ZooError(f"entry {self.name} has no acceptance bounds")


def zoo_dir() -> Path:
    override = os.environ.get(ZOO_DIR_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("convbudget.zoo")))


def _data_dir() -> Path:
    return zoo_dir() / "data"


def _load_manifest() -> dict:
    return json.loads((_data_dir() / "manifest.json").read_text(encoding="utf-8"))


def tail_descriptor() -> dict:
    return _load_manifest()["tail"]


def entries() -> list[ZooEntry]:
    out = []
    for raw in _load_manifest()["entries"]:
        band = raw.get("band")
        out.append(ZooEntry(
            name=raw["name"],
            file=raw.get("file"),
            baseline=raw["baseline"],
            published_relative=Fraction(raw["published_relative"]),
            tolerance=Fraction(raw["tolerance"]) if raw.get("tolerance") else None,
            band=(Fraction(band[0]), Fraction(band[1])) if band else None,
            source=raw["source"],
            kind=raw["kind"],
            unprimed=raw.get("unprimed"),
            notes=raw.get("notes"),
        ))
    return out


def names() -> list[str]:
    return [e.name for e in entries()]


def entry(name: str) -> ZooEntry:
    for e in entries():
        if e.name == name:
            return e
    raise ZooError(f"unknown zoo entry {name!r}; known: {names()}")


def load(name: str) -> Architecture:
    e = entry(name)
    if e.file is None:
        raise ZooError(f"entry {name!r} is a budget scalar with no structure")
    return load_architecture(_data_dir() / e.file)


def load_with_tail(name: str) -> Architecture:
    """The fixture plus the shared pyramid-pool/fc tail, for whole-model
    views (parameter counts and the like)."""
    arch = load(name)
    tail = tail_descriptor()
    extra = [spatial_pyramid_pool()] + [fully_connected(u) for u in tail["fc"]]
    return arch.with_layers(list(arch.layers) + extra)


def load_script(name: str) -> list[RewriteStep]:
    path = zoo_dir() / "scripts" / f"{name}.rwr"
    if not path.exists():
        raise ZooError(f"unknown rewrite script {name!r}")
    return parse_script(path.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class FixtureCheck:
    name: str
    kind: str
    baseline: str
    published: Fraction
    computed: Fraction | None
    low: Fraction | None
    high: Fraction | None
    passed: bool | None
    report: ComplexityReport | None

    @property
    def status(self) -> str:
        if self.passed is None:
            return "SKIP"
        return "PASS" if self.passed else "FAIL"


def check_all() -> list[FixtureCheck]:
    """Recompute every structural fixture's relative budget and judge it
    against the published value. Failing rows keep their full per-layer
    report so the discrepancy can be printed, not papered over."""
    baselines: dict[str, int] = {}

    def baseline_total(name: str) -> int:
        if name not in baselines:
            baselines[name] = total_complexity(load(name)).total
        return baselines[name]

    out: list[FixtureCheck] = []
    for e in entries():
        if not e.is_structural:
            out.append(FixtureCheck(e.name, e.kind, e.baseline, e.published_relative,
                                    None, None, None, None, None))
            continue
        report = total_complexity(load(e.name))
        computed = Fraction(report.total, baseline_total(e.baseline))
        low, high = e.bounds()
        passed = low <= computed <= high
        out.append(FixtureCheck(e.name, e.kind, e.baseline, e.published_relative,
                                computed, low, high, passed,
                                None if passed else report))
    return out
