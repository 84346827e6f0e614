"""Factor spaces, reference distributions, designs, and run-log ingestion.

A factor space is an ordered set of named factors, each with at least two
ordered discrete levels. Levels are opaque text labels externally and dense
integer indices internally; the declaration order is the canonical order used
for tables and tie-breaking. All containers here are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

Config = tuple[int, ...]

GRID_ENUMERATION_CAP = 10_000_000


class LogSchemaError(ValueError):
    """A run-log file does not match the expected CSV schema."""


@dataclass(frozen=True)
class Factor:
    name: str
    levels: tuple[str, ...]

    @property
    def num_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class FactorSpace:
    factors: tuple[Factor, ...]

    def __post_init__(self):
        if not self.factors:
            raise ValueError("a factor space needs at least one factor")
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate factor names: {sorted(names)}")
        for f in self.factors:
            if f.num_levels < 2:
                raise ValueError(f"factor {f.name!r} has {f.num_levels} level(s); need at least 2")
            if len(set(f.levels)) != f.num_levels:
                raise ValueError(f"duplicate level labels in factor {f.name!r}")

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    @property
    def level_counts(self) -> tuple[int, ...]:
        return tuple(f.num_levels for f in self.factors)

    @property
    def grid_size(self) -> int:
        return math.prod(self.level_counts)

    def pairs(self) -> list[tuple[int, int]]:
        d = self.num_factors
        return [(j, k) for j in range(d) for k in range(j + 1, d)]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown factor {name!r}") from None

    def level_index(self, j: int, label: str) -> int:
        try:
            return self.factors[j].levels.index(label)
        except ValueError:
            raise KeyError(f"unknown level {label!r} for factor {self.factors[j].name!r}") from None

    def validate_config(self, config: Sequence[int]) -> Config:
        if len(config) != self.num_factors:
            raise ValueError(f"config has {len(config)} coordinates, expected {self.num_factors}")
        for j, (lvl, count) in enumerate(zip(config, self.level_counts)):
            if not 0 <= int(lvl) < count:
                raise ValueError(f"level index {lvl} out of range for factor {self.factors[j].name!r}")
        return tuple(int(v) for v in config)

    def labels_for(self, config: Sequence[int]) -> tuple[str, ...]:
        return tuple(self.factors[j].levels[lvl] for j, lvl in enumerate(config))

    def to_dict(self) -> dict:
        return {"factors": [{"name": f.name, "levels": list(f.levels)} for f in self.factors]}


def build_space(spec: Mapping | Sequence[tuple[str, Sequence[str]]]) -> FactorSpace:
    """Build a FactorSpace from a declaration.

    Accepts either the JSON-document shape ``{"factors": [{"name":..,
    "levels": [...]}, ...]}`` or a sequence of ``(name, levels)`` pairs.
    """
    if isinstance(spec, Mapping):
        entries = [(e["name"], e["levels"]) for e in spec["factors"]]
    else:
        entries = [(name, levels) for name, levels in spec]
    factors = tuple(Factor(str(name), tuple(str(l) for l in levels)) for name, levels in entries)
    return FactorSpace(factors)


def load_space(path: str | Path) -> FactorSpace:
    with open(path, "r", encoding="utf-8") as fh:
        return build_space(json.load(fh))


def save_space(space: FactorSpace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def enumerate_grid(space: FactorSpace, cap: int = GRID_ENUMERATION_CAP) -> list[Config]:
    """All configurations in lexicographic order (first factor slowest)."""
    if space.grid_size > cap:
        raise ValueError(f"grid size {space.grid_size} exceeds enumeration cap {cap}")
    return list(itertools.product(*[range(n) for n in space.level_counts]))


# ---------------------------------------------------------------------------
# Reference distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReferenceDistribution:
    """Distribution over configurations under which expectations and
    centering are defined.

    ``uniform`` and ``product`` kinds factorize across factors
    (pi_jk(l,m) = pi_j(l) * pi_k(m)); the ``empirical`` kind stores a
    normalized joint histogram over observed configurations.
    """

    space: FactorSpace
    kind: str  # "uniform" | "product" | "empirical"
    marginals: tuple[np.ndarray, ...] | None = None
    joint: Mapping[Config, float] | None = None

    def __post_init__(self):
        if self.kind in ("uniform", "product"):
            if self.marginals is None or len(self.marginals) != self.space.num_factors:
                raise ValueError("product-form reference needs one marginal per factor")
            for j, pi in enumerate(self.marginals):
                if len(pi) != self.space.level_counts[j]:
                    raise ValueError(f"marginal {j} has wrong length")
                if np.any(pi < 0):
                    raise ValueError("marginal probabilities must be nonnegative")
                if abs(float(pi.sum()) - 1.0) > 1e-12:
                    raise ValueError(f"marginal {j} sums to {pi.sum()}, not 1")
        elif self.kind == "empirical":
            if self.joint is None or not self.joint:
                raise ValueError("empirical reference needs a nonempty joint histogram")
            total = 0.0
            for cfg, p in self.joint.items():
                self.space.validate_config(cfg)
                if p < 0:
                    raise ValueError("joint probabilities must be nonnegative")
                total += p
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"joint histogram sums to {total}, not 1")
        else:
            raise ValueError(f"unknown reference kind {self.kind!r}")

    @property
    def is_product(self) -> bool:
        return self.kind in ("uniform", "product")

    @classmethod
    def uniform(cls, space: FactorSpace) -> "ReferenceDistribution":
        margs = tuple(np.full(n, 1.0 / n) for n in space.level_counts)
        return cls(space, "uniform", marginals=margs)

    @classmethod
    def from_marginals(cls, space: FactorSpace, marginals: Sequence[np.ndarray]) -> "ReferenceDistribution":
        return cls(space, "product", marginals=tuple(np.asarray(m, dtype=float) for m in marginals))

    @classmethod
    def empirical(cls, log: "RunLog") -> "ReferenceDistribution":
        """Normalized weight histogram of a run log."""
        hist: dict[Config, float] = {}
        total = 0.0
        for rec in log.records:
            hist[rec.config] = hist.get(rec.config, 0.0) + rec.weight
            total += rec.weight
        joint = {cfg: w / total for cfg, w in hist.items() if w > 0}
        return cls(log.space, "empirical", joint=joint)

    def marginal(self, j: int) -> np.ndarray:
        if self.is_product:
            return self.marginals[j]
        out = np.zeros(self.space.level_counts[j])
        for cfg, p in self.joint.items():
            out[cfg[j]] += p
        return out

    def pair(self, j: int, k: int) -> np.ndarray:
        """Joint pi_jk(l, m) as an (L_j, L_k) matrix."""
        if self.is_product:
            return np.outer(self.marginals[j], self.marginals[k])
        out = np.zeros((self.space.level_counts[j], self.space.level_counts[k]))
        for cfg, p in self.joint.items():
            out[cfg[j], cfg[k]] += p
        return out

    def product_marginals(self) -> "ReferenceDistribution":
        """Product-form reference built from this distribution's marginals."""
        if self.is_product:
            return self
        margs = tuple(self.marginal(j) for j in range(self.space.num_factors))
        return ReferenceDistribution.from_marginals(self.space, margs)

    def describe(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.is_product:
            out["marginals"] = {
                f.name: {lbl: float(p) for lbl, p in zip(f.levels, pi)}
                for f, pi in zip(self.space.factors, self.marginals)
            }
        return out


# ---------------------------------------------------------------------------
# Run logs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    config: Config
    response: float
    weight: float = 1.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class RunLog:
    """Weighted observations bound to a factor space."""

    space: FactorSpace
    records: tuple[RunRecord, ...]

    def __post_init__(self):
        if not self.records:
            raise ValueError("run log is empty")
        positive = False
        for rec in self.records:
            self.space.validate_config(rec.config)
            if rec.weight < 0:
                raise ValueError("weights must be nonnegative")
            positive = positive or rec.weight > 0
        if not positive:
            raise ValueError("run log needs at least one record with positive weight")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def configs_array(self) -> np.ndarray:
        arr = self.__dict__.get("_configs_array")
        if arr is None:
            arr = np.array([rec.config for rec in self.records], dtype=np.intp)
            self.__dict__["_configs_array"] = arr
        return arr

    @property
    def responses(self) -> np.ndarray:
        arr = self.__dict__.get("_responses")
        if arr is None:
            arr = np.array([rec.response for rec in self.records], dtype=float)
            self.__dict__["_responses"] = arr
        return arr

    @property
    def weights(self) -> np.ndarray:
        arr = self.__dict__.get("_weights")
        if arr is None:
            arr = np.array([rec.weight for rec in self.records], dtype=float)
            self.__dict__["_weights"] = arr
        return arr


def log_from_arrays(space: FactorSpace, configs: Iterable[Sequence[int]],
                    responses: Iterable[float],
                    weights: Iterable[float] | None = None,
                    seeds: Iterable[int] | None = None) -> RunLog:
    configs = [tuple(int(v) for v in c) for c in configs]
    responses = [float(r) for r in responses]
    weights = [1.0] * len(configs) if weights is None else [float(w) for w in weights]
    seeds = [0] * len(configs) if seeds is None else [int(s) for s in seeds]
    recs = tuple(RunRecord(c, r, w, s) for c, r, w, s in zip(configs, responses, weights, seeds))
    return RunLog(space, recs)


def ingest_log(path: str | Path, space: FactorSpace) -> RunLog:
    """Read a run-log CSV.

    The header must contain one column per factor name plus ``response``;
    ``weight`` and ``seed`` columns are optional. Rows with unknown level
    labels are rejected with their row number.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogSchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        known = set(space.names) | {"response", "weight", "seed"}
        for col in header:
            if col not in known:
                raise LogSchemaError(f"{path}: unknown column {col!r}")
        for name in space.names:
            if name not in header:
                raise LogSchemaError(f"{path}: missing factor column {name!r}")
        if "response" not in header:
            raise LogSchemaError(f"{path}: missing 'response' column")
        col_idx = {name: header.index(name) for name in header}
        has_weight = "weight" in col_idx
        has_seed = "seed" in col_idx

        records = []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            levels = []
            for j, name in enumerate(space.names):
                label = row[col_idx[name]].strip()
                try:
                    levels.append(space.level_index(j, label))
                except KeyError:
                    raise LogSchemaError(
                        f"{path}: row {rownum}: unknown level {label!r} in column {name!r}"
                    ) from None
            raw = row[col_idx["response"]].strip()
            try:
                response = float(raw)
            except ValueError:
                raise LogSchemaError(
                    f"{path}: row {rownum}: non-numeric response {raw!r}"
                ) from None
            weight = 1.0
            if has_weight and row[col_idx["weight"]].strip():
                try:
                    weight = float(row[col_idx["weight"]])
                except ValueError:
                    raise LogSchemaError(f"{path}: row {rownum}: non-numeric weight") from None
            seed = 0
            if has_seed and row[col_idx["seed"]].strip():
                try:
                    seed = int(row[col_idx["seed"]])
                except ValueError:
                    raise LogSchemaError(f"{path}: row {rownum}: non-integer seed") from None
            records.append(RunRecord(tuple(levels), response, weight, seed))
    if not records:
        raise LogSchemaError(f"{path}: no data rows")
    return RunLog(space, tuple(records))


def write_log(log: RunLog, path: str | Path) -> None:
    """Write a run log as CSV; floats round-trip exactly through repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(log.space.names) + ["response", "weight", "seed"])
        for rec in log.records:
            writer.writerow(
                list(log.space.labels_for(rec.config))
                + [repr(rec.response), repr(rec.weight), str(rec.seed)]
            )


# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignPlan:
    kind: str  # "full" | "balanced" | "skewed"
    n: int = 0
    bias: float = 1.0

    @classmethod
    def full(cls) -> "DesignPlan":
        return cls("full")

    @classmethod
    def balanced(cls, n: int) -> "DesignPlan":
        return cls("balanced", n=n)

    @classmethod
    def skewed(cls, n: int, bias: float = 3.0) -> "DesignPlan":
        return cls("skewed", n=n, bias=bias)

    def describe(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind != "full":
            out["n"] = self.n
        if self.kind == "skewed":
            out["bias"] = self.bias
        return out


def sample_design(space: FactorSpace, plan: DesignPlan, seed: int = 0) -> list[Config]:
    """Draw a design per the plan, deterministically for a given seed.

    ``balanced(n)`` equalizes per-level counts of every factor within +-1 by
    shuffling a balanced column per factor independently; duplicate configs
    act as replicates. ``skewed(n, bias)`` samples each factor independently
    with the first level weighted by ``bias``.
    """
    if plan.kind == "full":
        return enumerate_grid(space)
    n = int(plan.n)
    if n < 1:
        raise ValueError("design size must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    columns = []
    if plan.kind == "balanced":
        for count in space.level_counts:
            base, extra = divmod(n, count)
            col = np.repeat(np.arange(count), base)
            if extra:
                col = np.concatenate([col, rng.choice(count, size=extra, replace=False)])
            rng.shuffle(col)
            columns.append(col)
    elif plan.kind == "skewed":
        if plan.bias <= 0:
            raise ValueError("bias must be positive")
        for count in space.level_counts:
            probs = np.ones(count)
            probs[0] = plan.bias
            probs /= probs.sum()
            columns.append(rng.choice(count, size=n, p=probs))
    else:
        raise ValueError(f"unknown design plan {plan.kind!r}")
    return [tuple(int(col[i]) for col in columns) for i in range(n)]


# ---------------------------------------------------------------------------
# Support statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SupportCounts:
    """Per-level and per-pair-cell record counts plus effective sizes."""

    space: FactorSpace
    level_counts: tuple[np.ndarray, ...]
    pair_counts: dict[tuple[int, int], np.ndarray]
    pair_eff: dict[tuple[int, int], np.ndarray]

    def n_level(self, j: int, level: int) -> int:
        return int(self.level_counts[j][level])

    def pair(self, j: int, k: int) -> np.ndarray:
        if j < k:
            return self.pair_counts[(j, k)]
        return self.pair_counts[(k, j)].T

    def n_pair(self, j: int, k: int, lj: int, lk: int) -> int:
        return int(self.pair(j, k)[lj, lk])

    def eff_pair(self, j: int, k: int) -> np.ndarray:
        if j < k:
            return self.pair_eff[(j, k)]
        return self.pair_eff[(k, j)].T

    def to_dict(self) -> dict:
        space = self.space
        levels = {
            f.name: {lbl: int(c) for lbl, c in zip(f.levels, counts)}
            for f, counts in zip(space.factors, self.level_counts)
        }
        pairs = {}
        eff = {}
        for (j, k), mat in self.pair_counts.items():
            key = f"{space.names[j]}|{space.names[k]}"
            fj, fk = space.factors[j], space.factors[k]
            pairs[key] = {
                f"{fj.levels[a]}|{fk.levels[b]}": int(mat[a, b])
                for a in range(fj.num_levels)
                for b in range(fk.num_levels)
            }
            emat = self.pair_eff[(j, k)]
            eff[key] = {
                f"{fj.levels[a]}|{fk.levels[b]}": float(emat[a, b])
                for a in range(fj.num_levels)
                for b in range(fk.num_levels)
            }
        return {"levels": levels, "pairs": pairs, "eff": eff}


def effective_sample_size(weights: Sequence[float]) -> float:
    """1 / sum(alpha^2) for normalized weights alpha; count for equal weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0):
        raise ValueError("weights must be nonnegative and nonempty")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must not be all zero")
    alpha = w / total
    return float(1.0 / np.sum(alpha * alpha))


def support_counts(log: RunLog, space: FactorSpace | None = None) -> SupportCounts:
    space = space or log.space
    if space is not log.space and space.level_counts != log.space.level_counts:
        raise ValueError("log is not bound to this space")
    configs = log.configs_array
    w = log.weights
    counts = tuple(
        np.bincount(configs[:, j], minlength=L).astype(np.intp)
        for j, L in enumerate(space.level_counts)
    )
    pair_counts: dict[tuple[int, int], np.ndarray] = {}
    pair_eff: dict[tuple[int, int], np.ndarray] = {}
    for j, k in space.pairs():
        Lj, Lk = space.level_counts[j], space.level_counts[k]
        cell = configs[:, j] * Lk + configs[:, k]
        raw = np.bincount(cell, minlength=Lj * Lk).astype(np.intp)
        s1 = np.bincount(cell, weights=w, minlength=Lj * Lk)
        s2 = np.bincount(cell, weights=w * w, minlength=Lj * Lk)
        eff = np.zeros(Lj * Lk)
        mask = s2 > 0
        eff[mask] = (s1[mask] ** 2) / s2[mask]
        pair_counts[(j, k)] = raw.reshape(Lj, Lk)
        pair_eff[(j, k)] = eff.reshape(Lj, Lk)
    return SupportCounts(space, counts, pair_counts, pair_eff)
