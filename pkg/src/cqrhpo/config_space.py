"""Search-space declarations, uniform sampling and numeric encoding.

A :class:`ConfigSpace` is an ordered list of named domains. Configurations
are immutable and hashable so they can be used as exact lookup keys in
tabulated blackboxes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

KINDS = ("categorical", "uniform", "log_uniform", "finite_range")


class Domain:
    """Base class of a single hyperparameter domain."""

    kind: str = ""

    @property
    def width(self) -> int:
        """Number of encoded features."""
        return 1

    def contains(self, value: Any) -> bool:
        raise NotImplementedError

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def encode_many(self, values: np.ndarray) -> np.ndarray:
        """Encode a column of raw values into an ``(n, width)`` array."""
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Categorical(Domain):
    values: Tuple[Any, ...]
    kind = "categorical"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError("categorical domain needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"categorical values must be distinct: {self.values}")

    @property
    def width(self) -> int:
        return len(self.values)

    def contains(self, value: Any) -> bool:
        return value in self.values

    def index(self, value: Any) -> int:
        return self.values.index(value)

    def sample_many(self, rng, n):
        # label indices; labels are resolved when a Config is materialised
        return rng.integers(len(self.values), size=n)

    def encode_many(self, values):
        out = np.zeros((len(values), self.width))
        out[np.arange(len(values)), np.asarray(values, dtype=np.int64)] = 1.0
        return out

    def to_dict(self):
        return {"kind": self.kind, "values": list(self.values)}


@dataclass(frozen=True)
class Uniform(Domain):
    lo: float
    hi: float
    kind = "uniform"

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise ValueError(f"uniform domain needs finite lo < hi, got [{self.lo}, {self.hi}]")

    def contains(self, value):
        return isinstance(value, (int, float)) and self.lo <= value <= self.hi

    def sample_many(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=n)

    def encode_many(self, values):
        return np.asarray(values, dtype=float).reshape(-1, 1)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class LogUniform(Domain):
    lo: float
    hi: float
    kind = "log_uniform"

    def __post_init__(self):
        if not self.lo > 0:
            raise ValueError(f"log_uniform domain needs lo > 0, got {self.lo}")
        if not math.isfinite(self.hi) or not self.lo < self.hi:
            raise ValueError(f"log_uniform domain needs lo < hi, got [{self.lo}, {self.hi}]")

    def contains(self, value):
        return isinstance(value, (int, float)) and self.lo <= value <= self.hi

    def sample_many(self, rng, n):
        x = np.exp(rng.uniform(math.log(self.lo), math.log(self.hi), size=n))
        # exp(log(hi)) can overshoot hi by one ulp
        return np.clip(x, self.lo, self.hi)

    def encode_many(self, values):
        return np.log(np.asarray(values, dtype=float)).reshape(-1, 1)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class FiniteRange(Domain):
    """Ordered numeric grid, encoded by value (or log value) rather than one-hot."""

    values: Tuple[float, ...]
    log: bool = False
    kind = "finite_range"

    def __post_init__(self):
        vals = tuple(self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("finite_range domain needs at least one value")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"finite_range values must be sorted and distinct: {vals}")
        if self.log and vals[0] <= 0:
            raise ValueError("log-spaced finite_range needs positive values")

    def contains(self, value):
        return isinstance(value, (int, float)) and value in self.values

    def sample_many(self, rng, n):
        return np.asarray(self.values, dtype=float)[rng.integers(len(self.values), size=n)]

    def encode_many(self, values):
        v = np.asarray(values, dtype=float)
        return (np.log(v) if self.log else v).reshape(-1, 1)

    def to_dict(self):
        return {"kind": self.kind, "values": list(self.values), "log": self.log}


def domain_from_dict(d: Mapping[str, Any]) -> Domain:
    kind = d.get("kind")
    if kind == "categorical":
        return Categorical(tuple(d["values"]))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if kind == "log_uniform":
        return LogUniform(float(d["lo"]), float(d["hi"]))
    if kind == "finite_range":
        return FiniteRange(tuple(float(v) for v in d["values"]), bool(d.get("log", False)))
    raise ValueError(f"unknown domain kind {kind!r}; expected one of {KINDS}")


class Config(Mapping[str, Any]):
    """Immutable configuration; equality and hashing are exact per coordinate."""

    __slots__ = ("_names", "_values")

    def __init__(self, names: Tuple[str, ...], values: Tuple[Any, ...]):
        self._names = names
        self._values = values

    @property
    def values(self) -> Tuple[Any, ...]:
        return self._values

    def __getitem__(self, key: str) -> Any:
        try:
            return self._values[self._names.index(key)]
        except ValueError:
            raise KeyError(key) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other) -> bool:
        if isinstance(other, Config):
            return self._names == other._names and self._values == other._values
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self._names, self._values))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in zip(self._names, self._values))
        return f"Config({inner})"


class CandidateBatch:
    """``n`` configurations sampled column-wise, materialised lazily."""

    def __init__(self, space: "ConfigSpace", columns: List[np.ndarray]):
        self.space = space
        self.columns = columns
        self._features = None

    def __len__(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = np.hstack(
                [dom.encode_many(col) for (_, dom), col in zip(self.space.dims, self.columns)]
            )
        return self._features

    def config(self, i: int) -> Config:
        values = []
        for (_, dom), col in zip(self.space.dims, self.columns):
            if isinstance(dom, Categorical):
                values.append(dom.values[int(col[i])])
            else:
                values.append(float(col[i]))
        return Config(self.space.names, tuple(values))

    def configs(self) -> List[Config]:
        return [self.config(i) for i in range(len(self))]


class ConfigSpace:
    """Ordered collection of named domains.

    The declaration order fixes the feature order used by :meth:`encode`.
    """

    def __init__(self, dims: Sequence[Tuple[str, Domain]]):
        names = [name for name, _ in dims]
        if not names:
            raise ValueError("config space needs at least one dimension")
        if len(set(names)) != len(names):
            raise ValueError(f"dimension names must be unique: {names}")
        self.dims: Tuple[Tuple[str, Domain], ...] = tuple((str(n), d) for n, d in dims)
        self.names: Tuple[str, ...] = tuple(names)

    @property
    def n_features(self) -> int:
        return sum(dom.width for _, dom in self.dims)

    def __eq__(self, other):
        return isinstance(other, ConfigSpace) and self.dims == other.dims

    def __repr__(self):
        return f"ConfigSpace({list(self.dims)})"

    def make(self, values: Mapping[str, Any] | Sequence[Any]) -> Config:
        """Build a validated :class:`Config` from a mapping or a value sequence."""
        if isinstance(values, Mapping):
            missing = set(self.names) - set(values)
            extra = set(values) - set(self.names)
            if missing or extra:
                raise ValueError(f"config keys mismatch: missing={sorted(missing)} extra={sorted(extra)}")
            seq = [values[n] for n in self.names]
        else:
            seq = list(values)
            if len(seq) != len(self.names):
                raise ValueError(f"expected {len(self.names)} values, got {len(seq)}")
        out = []
        for (name, dom), v in zip(self.dims, seq):
            if isinstance(v, np.generic):
                v = v.item()
            if not isinstance(dom, Categorical):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ValueError(f"{name}: expected a number, got {v!r}")
                v = float(v)
            if not dom.contains(v):
                raise ValueError(f"{name}: value {v!r} outside domain {dom.to_dict()}")
            out.append(v)
        return Config(self.names, tuple(out))

    def contains(self, config: Config) -> bool:
        if not isinstance(config, Config) or tuple(config) != self.names:
            return False
        return all(dom.contains(v) for (_, dom), v in zip(self.dims, config.values))

    def sample_batch(self, rng: np.random.Generator, n: int) -> CandidateBatch:
        return CandidateBatch(self, [dom.sample_many(rng, n) for _, dom in self.dims])

    def sample(self, rng: np.random.Generator) -> Config:
        return self.sample_batch(rng, 1).config(0)

    def encode(self, config: Config) -> np.ndarray:
        return self.encode_many([config])[0]

    def encode_many(self, configs: Sequence[Config]) -> np.ndarray:
        if len(configs) == 0:
            return np.zeros((0, self.n_features))
        blocks = []
        for k, (_, dom) in enumerate(self.dims):
            col = [c.values[k] for c in configs]
            if isinstance(dom, Categorical):
                col = [dom.index(v) for v in col]
            blocks.append(dom.encode_many(col))
        return np.hstack(blocks)

    def to_dict(self) -> Dict[str, Any]:
        return {"dims": [{"name": n, **d.to_dict()} for n, d in self.dims]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ConfigSpace":
        if "dims" not in d:
            raise ValueError("config-space declaration needs a 'dims' list")
        dims = []
        for entry in d["dims"]:
            entry = dict(entry)
            name = entry.pop("name")
            dims.append((name, domain_from_dict(entry)))
        return cls(dims)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ConfigSpace":
        return cls.from_dict(json.loads(text))
