"""Mixed-space parameter definitions and Latin hypercube sampling.

Each dimension draws one value per stratum: a seeded permutation assigns
strata to samples and a uniform jitter places the draw within its stratum.
Continuous dimensions map affinely; choice and integer dimensions map by
equal-width binning of the unit interval, so categories appear as evenly as
n allows (exactly n/k each when k divides n).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from gfdmlab.solver import PARAM_NAMES


@dataclass(frozen=True)
class ParameterDef:
    name: str
    kind: str  # continuous | choice | integer_range
    lo: float = 0.0
    hi: float = 1.0
    choices: tuple = ()

    def __post_init__(self):
        if self.kind == "continuous":
            if not self.lo < self.hi:
                raise ValueError(f"{self.name}: need lo < hi")
        elif self.kind == "integer_range":
            if int(self.lo) > int(self.hi):
                raise ValueError(f"{self.name}: need lo <= hi")
        elif self.kind == "choice":
            if not self.choices:
                raise ValueError(f"{self.name}: choices must be non-empty")
        else:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")

    def map_unit(self, u: float):
        """Map a unit-interval draw to a parameter value."""
        if self.kind == "continuous":
            return self.lo + u * (self.hi - self.lo)
        if self.kind == "integer_range":
            nvals = int(self.hi) - int(self.lo) + 1
            return int(self.lo) + min(int(u * nvals), nvals - 1)
        k = len(self.choices)
        return self.choices[min(int(u * k), k - 1)]

    def contains(self, value) -> bool:
        if self.kind == "continuous":
            return self.lo <= value <= self.hi
        if self.kind == "integer_range":
            return float(value).is_integer() and int(self.lo) <= int(value) <= int(self.hi)
        return any(value == c for c in self.choices)

    def numeric(self, value) -> float:
        return float(value)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "choice":
            d["choices"] = list(self.choices)
        else:
            d["lo"] = self.lo
            d["hi"] = self.hi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterDef":
        return cls(
            name=d["name"],
            kind=d["kind"],
            lo=float(d.get("lo", 0.0)),
            hi=float(d.get("hi", 1.0)),
            choices=tuple(d.get("choices", ())),
        )


@dataclass(frozen=True)
class ParameterSpace:
    params: tuple[ParameterDef, ...]

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def __getitem__(self, name: str) -> ParameterDef:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def validate(self, sample: dict) -> list[str]:
        """Out-of-range / missing field names (empty when valid)."""
        bad = []
        for p in self.params:
            if p.name not in sample:
                bad.append(p.name)
            elif not p.contains(sample[p.name]):
                bad.append(p.name)
        return bad

    def to_dict(self) -> dict:
        return {"parameters": [p.to_dict() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSpace":
        return cls(tuple(ParameterDef.from_dict(p) for p in d["parameters"]))

    @classmethod
    def default(cls) -> "ParameterSpace":
        """The 11 solver parameters with their standard ranges (order is the
        canonical PARAM_NAMES order used on every wire format)."""
        space = cls(
            (
                ParameterDef("Hmin", "continuous", 0.005, 0.01),
                ParameterDef("Hmax", "continuous", 0.03, 0.1),
                ParameterDef("max_N_stencil", "choice", choices=(30, 40)),
                ParameterDef(
                    "COMP_DoOrganizeOnlyAfterHowManyCycles", "integer_range", 1, 4
                ),
                ParameterDef("eps_v", "choice", choices=(1e-4, 1e-5, 1e-6)),
                ParameterDef("eps_p", "choice", choices=(1e-4, 1e-5, 1e-6)),
                ParameterDef("ord_grad", "choice", choices=(2, 3)),
                ParameterDef("ord_laplace", "choice", choices=(2, 2.9, 3)),
                ParameterDef("ord_eval", "choice", choices=(2, 3)),
                ParameterDef("DIFFOP_kernel_Laplace", "choice", choices=(2, 6)),
                ParameterDef("DIFFOP_kernel_Neumann", "choice", choices=(2, 5)),
            )
        )
        assert tuple(space.names) == PARAM_NAMES
        return space


def lhs(space: ParameterSpace, n: int, seed: int) -> list[dict]:
    """n Latin hypercube samples; every dimension hits each of its n strata
    exactly once. Hmax > Hmin is enforced by redrawing the jitter within the
    same strata (possible violations only arise for user-supplied spaces)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    units = np.empty((n, len(space.params)))
    strata = np.empty((n, len(space.params)), dtype=np.int64)
    for j, _p in enumerate(space.params):
        perm = rng.permutation(n)
        strata[:, j] = perm
        units[:, j] = (perm + rng.random(n)) / n

    samples = [
        {p.name: p.map_unit(units[i, j]) for j, p in enumerate(space.params)}
        for i in range(n)
    ]

    names = space.names
    if "Hmin" in names and "Hmax" in names:
        jmin, jmax = names.index("Hmin"), names.index("Hmax")
        for i, s in enumerate(samples):
            attempts = 0
            while s["Hmax"] <= s["Hmin"]:
                if attempts >= 1000:
                    raise ValueError(
                        "cannot satisfy Hmax > Hmin within the given strata"
                    )
                for j in (jmin, jmax):
                    u = (strata[i, j] + rng.random()) / n
                    s[names[j]] = space.params[j].map_unit(u)
                attempts += 1
    return samples


def encode(space: ParameterSpace, sample: dict) -> np.ndarray:
    """Numeric feature vector in space order (choices by their value)."""
    return np.array([p.numeric(sample[p.name]) for p in space.params])


def decode(space: ParameterSpace, vector) -> dict:
    """Inverse of encode for valid samples (choice values snap exactly)."""
    out = {}
    for p, v in zip(space.params, np.asarray(vector, dtype=float)):
        if p.kind == "continuous":
            out[p.name] = float(v)
        elif p.kind == "integer_range":
            out[p.name] = int(round(v))
        else:
            matches = [c for c in p.choices if float(c) == v]
            out[p.name] = matches[0] if matches else min(
                p.choices, key=lambda c: abs(float(c) - v)
            )
    return out


def save_space(space: ParameterSpace, path) -> None:
    with open(path, "w") as f:
        json.dump(space.to_dict(), f, indent=2)


def load_space(path) -> ParameterSpace:
    with open(path) as f:
        return ParameterSpace.from_dict(json.load(f))


def samples_to_csv(space: ParameterSpace, samples: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(space.names)
        for s in samples:
            w.writerow([repr(s[name]) if isinstance(s[name], float) else s[name]
                        for name in space.names])


def samples_from_csv(space: ParameterSpace, path) -> list[dict]:
    out = []
    with open(path) as f:
        reader = csv.DictReader(f)
        for row in reader:
            sample = {}
            for p in space.params:
                raw = row[p.name]
                if p.kind == "integer_range":
                    sample[p.name] = int(float(raw))
                elif p.kind == "continuous":
                    sample[p.name] = float(raw)
                else:
                    val = float(raw)
                    matches = [c for c in p.choices if float(c) == val]
                    sample[p.name] = matches[0] if matches else val
            out.append(sample)
    return out
