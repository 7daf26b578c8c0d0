"""Scenario files (TOML) and JSON run reports."""

from __future__ import annotations

import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from . import __version__
from .analytics import PartitionSpec, limit_constants
from .deviations import ClaimLaw, claim_law_from_dict
from .errors import ScenarioError, ValidationError
from .kernels import KernelSequence
from .ruin import NetProfitWarning
from .simulate import _atomic_write

OUT_ENV = "HAWKESGEN_OUT"
DEFAULT_OUT = "hawkesgen_out"


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce a run."""

    name: str
    sequence: KernelSequence
    horizon: float = 100.0
    reps: int = 100
    seed: int = 0
    series_tol: float = 1e-10
    grid_step: float = 1e-3
    divergence_cap: float = 50.0
    claims: ClaimLaw | None = None
    premium: float | None = None
    reserves: tuple = ()
    partition: PartitionSpec | None = None
    out_dir: str | None = None

    def __post_init__(self):
        for key in ("series_tol", "grid_step", "divergence_cap", "horizon"):
            if not getattr(self, key) > 0:
                raise ScenarioError(f"{key} must be positive, got {getattr(self, key)}")
        if self.reps < 1:
            raise ScenarioError("reps must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must be an unsigned 64-bit integer")
        if (self.claims is None) != (self.premium is None):
            raise ScenarioError("claims and premium must be given together")
        if self.premium is not None and not self.premium > 0:
            raise ScenarioError("premium must be positive")
        if any(u < 0 for u in self.reserves):
            raise ScenarioError("reserves must be >= 0")
        object.__setattr__(self, "reserves", tuple(float(u) for u in self.reserves))

    def output_dir(self, override: str | os.PathLike | None = None) -> Path:
        return Path(override or self.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "horizon": float(self.horizon),
            "reps": int(self.reps),
            "seed": int(self.seed),
        }
        if self.out_dir is not None:
            d["out_dir"] = self.out_dir
        d["tolerances"] = {
            "series_tol": float(self.series_tol),
            "grid_step": float(self.grid_step),
            "divergence_cap": float(self.divergence_cap),
        }
        d.update(self.sequence.to_dict())
        if self.claims is not None:
            d["ruin"] = {"premium": float(self.premium), "reserves": list(self.reserves),
                         "claims": self.claims.to_dict()}
        if self.partition is not None:
            d["partition"] = self.partition.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        _reject_unknown(d, _TOP_KEYS, "top level")
        _reject_unknown(d.get("tolerances", {}), _TOL_KEYS, "[tolerances]")
        _reject_unknown(d.get("ruin") or {}, _RUIN_KEYS, "[ruin]")
        try:
            seq = KernelSequence.from_dict(d)
            tol = d.get("tolerances", {})
            ruin = d.get("ruin")
            claims = claim_law_from_dict(ruin["claims"]) if ruin else None
            part = PartitionSpec.from_dict(d["partition"]) if "partition" in d else None
            return cls(
                name=str(d.get("name", "unnamed")),
                sequence=seq,
                horizon=float(d.get("horizon", 100.0)),
                reps=int(d.get("reps", 100)),
                seed=int(d.get("seed", 0)),
                series_tol=float(tol.get("series_tol", 1e-10)),
                grid_step=float(tol.get("grid_step", 1e-3)),
                divergence_cap=float(tol.get("divergence_cap", 50.0)),
                claims=claims,
                premium=float(ruin["premium"]) if ruin else None,
                reserves=tuple(ruin.get("reserves", ())) if ruin else (),
                partition=part,
                out_dir=d.get("out_dir"),
            )
        except KeyError as exc:
            raise ScenarioError(f"scenario is missing required key {exc}") from None
        except (TypeError, AttributeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from None


_TOP_KEYS = {"name", "horizon", "reps", "seed", "out_dir", "extension", "tolerances", "baseline", "kernels",
             "ruin", "partition"}
_TOL_KEYS = {"series_tol", "grid_step", "divergence_cap"}
_RUIN_KEYS = {"premium", "reserves", "claims"}


def _reject_unknown(d, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ScenarioError(f"{where} must be a table")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ScenarioError(f"unknown key(s) at {where}: {', '.join(extra)}")


def loads_scenario(text: str) -> Scenario:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"cannot parse scenario: {exc}") from None
    sc = Scenario.from_dict(data)
    if sc.claims is not None:
        m = limit_constants(sc.sequence).m
        if not sc.premium > m * sc.claims.mean():
            warnings.warn(
                f"net profit condition fails: premium {sc.premium} <= m E[C] = {m * sc.claims.mean():.6g}",
                NetProfitWarning,
                stacklevel=2,
            )
    return sc


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file; subcriticality is re-checked on construction."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
    return loads_scenario(text)


def dumps_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(sc.to_dict())


def save_scenario(sc: Scenario, path) -> None:
    _atomic_write(path, dumps_scenario(sc))


# ------------------------------------------------------------------ reports


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class Report:
    """Named scalars with error companions, a file manifest and provenance."""

    command: str
    scenario: Scenario
    results: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)
    wall_clock: float | None = None

    def add(self, name: str, value, error) -> None:
        if error is None:
            raise ValidationError(f"result {name!r} needs an error companion")
        self.results[name] = (value, error)

    def finish(self) -> Report:
        self.wall_clock = time.perf_counter() - self.started
        return self

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": __version__,
            "scenario": self.scenario.to_dict(),
            "results": {k: {"value": _num(v), "error": _num(e)} for k, (v, e) in self.results.items()},
            "files": [str(f) for f in self.files],
            "notes": list(self.notes),
            "wall_clock_seconds": self.wall_clock,
            "rng": {"bit_generator": "Philox", "seed": int(self.scenario.seed),
                    "seed_sequence": "SeedSequence(seed, spawn_key=(stream,))"},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def write(self, path) -> None:
        missing = [f for f in self.files if Path(f) != Path(path) and not Path(f).exists()]
        if missing:
            raise ValidationError(f"manifest files missing: {missing}")
        _atomic_write(path, self.to_json())
