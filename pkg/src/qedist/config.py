"""Model/run configuration: TOML or JSON, schema-checked, CLI-friendly.

A config has a ``[model]`` table (kind plus kind-specific fields) and an
optional ``[run]`` table (seed, return law, bound constants, grids).
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .birthdeath import FAMILIES, BirthDeathModel, make_density_model
from .errors import ConfigError
from .generator import ReturnDistribution, SparseGenerator
from .mpp import PopulationModel

__all__ = ["ModelConfig", "ModelBundle", "load_config", "build_bundle", "resolve_mu"]

_KINDS = ("birth-death-family", "birth-death-explicit", "general-ctmc", "mpp")

_MODEL_KEYS = {
    "birth-death-family": {"kind", "family", "A", "cap", "s", "params"},
    "birth-death-explicit": {"kind", "birth", "death", "s", "cap"},
    "general-ctmc": {"kind", "n", "entries", "csv", "s"},
    "mpp": {"kind", "d", "N", "jumps", "rates", "params", "x0", "radius"},
}

_RUN_KEYS = {
    "seed",
    "M",
    "zeta",
    "mu",
    "t",
    "t_max",
    "replicates",
    "radius",
    "D",
    "threads",
    "grid",
}


@dataclass(frozen=True)
class ModelConfig:
    model: dict
    run: dict
    source_text: str
    path: str

    @property
    def kind(self) -> str:
        return self.model["kind"]


@dataclass(frozen=True)
class ModelBundle:
    """Everything a command needs: generator, center state, companions."""

    kind: str
    generator: SparseGenerator | None
    s: int | None
    bd_model: BirthDeathModel | None = None
    mpp_model: PopulationModel | None = None
    cap: int | None = None
    A: float | None = None
    tail_rate: float = 0.0
    config: ModelConfig | None = field(default=None, compare=False)


def load_config(path) -> ModelConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    if not isinstance(data, dict) or "model" not in data:
        raise ConfigError(f"{path}: config needs a [model] table")
    model = data["model"]
    run = data.get("run", {})
    extra_top = set(data) - {"model", "run"}
    if extra_top:
        raise ConfigError(f"unknown top-level tables: {sorted(extra_top)}")
    kind = model.get("kind")
    if kind not in _KINDS:
        raise ConfigError(f"model.kind must be one of {_KINDS}, got {kind!r}")
    extra = set(model) - _MODEL_KEYS[kind]
    if extra:
        raise ConfigError(f"unknown model keys for kind {kind!r}: {sorted(extra)}")
    extra_run = set(run) - _RUN_KEYS
    if extra_run:
        raise ConfigError(f"unknown run keys: {sorted(extra_run)}")
    return ModelConfig(model=dict(model), run=dict(run), source_text=text, path=str(path))


def _require(table: dict, key: str, kind: str):
    if key not in table:
        raise ConfigError(f"model kind {kind!r} requires {key!r}")
    return table[key]


def build_bundle(cfg: ModelConfig, cap_override: int | None = None) -> ModelBundle:
    kind = cfg.kind
    m = cfg.model
    if kind == "birth-death-family":
        family = _require(m, "family", kind)
        if family not in FAMILIES:
            raise ConfigError(f"unknown family {family!r}; known: {FAMILIES}")
        A = float(_require(m, "A", kind))
        params = dict(_require(m, "params", kind))
        cap = cap_override or m.get("cap")
        model, s_auto = make_density_model(family, params, A, cap=int(cap) if cap else None)
        s = int(m.get("s", s_auto))
        if not (1 <= s <= model.cap):
            raise ConfigError(f"center state s={s} outside 1..cap={model.cap}")
        return ModelBundle(
            kind=kind,
            generator=model.to_generator(),
            s=s,
            bd_model=model,
            cap=model.cap,
            A=A,
            tail_rate=model.tail_rate,
            config=cfg,
        )
    if kind == "birth-death-explicit":
        birth = [float(x) for x in _require(m, "birth", kind)]
        death = [float(x) for x in _require(m, "death", kind)]
        if len(birth) != len(death) or not birth:
            raise ConfigError("birth and death must be equal-length nonempty lists (j = 1..cap)")
        cap = len(birth)
        b = np.concatenate([[0.0], birth])
        d = np.concatenate([[1.0], death])
        model = BirthDeathModel(b=b, d=d, cap=cap, truncated_tail=False, tail_rate=float(b[cap]))
        s = int(_require(m, "s", kind))
        if not (1 <= s <= cap):
            raise ConfigError(f"center state s={s} outside 1..cap={cap}")
        return ModelBundle(
            kind=kind,
            generator=model.to_generator(),
            s=s,
            bd_model=model,
            cap=cap,
            config=cfg,
        )
    if kind == "general-ctmc":
        s = int(_require(m, "s", kind))
        if "csv" in m:
            gen = SparseGenerator.from_csv(Path(cfg.path).parent / m["csv"])
        else:
            entries = _require(m, "entries", kind)
            tr = np.array([[e[0], e[1], e[2]] for e in entries], dtype=np.float64)
            n = int(max(tr[:, 0].max(), tr[:, 1].max()))
            gen = SparseGenerator(
                n=n,
                src=tr[:, 0].astype(np.int64),
                dst=tr[:, 1].astype(np.int64),
                rate=tr[:, 2],
            )
        if not (1 <= s <= gen.n):
            raise ConfigError(f"center state s={s} outside 1..n={gen.n}")
        return ModelBundle(kind=kind, generator=gen, s=s, cap=gen.n, config=cfg)
    # mpp
    d = int(_require(m, "d", kind))
    N = float(_require(m, "N", kind))
    jumps = _require(m, "jumps", kind)
    rates = _require(m, "rates", kind)
    params = dict(m.get("params", {}))
    model = PopulationModel.from_strings(d=d, jumps=jumps, rate_strings=rates, params=params, N=N)
    return ModelBundle(kind=kind, generator=None, s=None, mpp_model=model, config=cfg)


def resolve_mu(spec, s: int, n: int) -> ReturnDistribution:
    """Return-law spec: 'delta', 'uniform:LO..HI', or [[state, weight], ...]."""
    if spec is None or spec == "delta":
        return ReturnDistribution.delta(s)
    if isinstance(spec, str):
        if spec.startswith("uniform:"):
            rng = spec[len("uniform:") :]
            try:
                lo, hi = rng.split("..")
                lo, hi = int(lo), int(hi)
            except ValueError:
                raise ConfigError(f"bad uniform range {spec!r}; want uniform:LO..HI") from None
            if not (1 <= lo <= hi <= n):
                raise ConfigError(f"uniform range {lo}..{hi} outside 1..{n}")
            return ReturnDistribution.uniform(np.arange(lo, hi + 1))
        raise ConfigError(f"unknown return law {spec!r}")
    pairs = [(int(st), float(w)) for st, w in spec]
    states = np.array([p[0] for p in pairs])
    weights = np.array([p[1] for p in pairs])
    return ReturnDistribution(states=states, weights=weights / weights.sum())
