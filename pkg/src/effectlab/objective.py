"""Two-factor prediction and the risk- and cost-adjusted objective.

J(x) = prediction(x) - lambda_risk * R(x) - lambda_cost * C(x), where R sums
a support-driven penalty over factor pairs and C is additive over factor
levels. Infeasible configurations are excluded from the search set rather
than scored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .effects import EffectTable
from .space import Config, FactorSpace, SupportCounts


class InfeasibleConfigError(ValueError):
    """The configuration is outside the feasible set."""


@dataclass(frozen=True, eq=False)
class CostModel:
    """Additive cost: a fixed offset plus one term per factor level."""

    space: FactorSpace
    level_costs: tuple[np.ndarray, ...]
    offset: float = 0.0

    def __post_init__(self):
        if len(self.level_costs) != self.space.num_factors:
            raise ValueError("need one cost vector per factor")
        for j, c in enumerate(self.level_costs):
            if len(c) != self.space.level_counts[j]:
                raise ValueError(f"cost vector {j} has wrong length")
            if not np.all(np.isfinite(c)):
                raise ValueError("costs must be finite")

    @classmethod
    def zero(cls, space: FactorSpace) -> "CostModel":
        return cls(space, tuple(np.zeros(n) for n in space.level_counts))

    @classmethod
    def from_dict(cls, space: FactorSpace, data: Mapping) -> "CostModel":
        costs = []
        table = data.get("costs", {})
        for f in space.factors:
            row = table.get(f.name, {})
            costs.append(np.array([float(row.get(lbl, 0.0)) for lbl in f.levels]))
        return cls(space, tuple(costs), offset=float(data.get("cost_offset", 0.0)))

    def total(self, x: Sequence[int]) -> float:
        return self.offset + sum(float(self.level_costs[j][x[j]]) for j in range(len(x)))

    def to_dict(self) -> dict:
        return {
            "costs": {
                f.name: {lbl: float(c) for lbl, c in zip(f.levels, vec)}
                for f, vec in zip(self.space.factors, self.level_costs)
            },
            "cost_offset": self.offset,
        }


def delta_cost(cost: CostModel, j: int, level: int, x: Sequence[int]) -> float:
    """Cost change from switching factor j to the given level."""
    return float(cost.level_costs[j][level] - cost.level_costs[j][x[j]])


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Penalty weights, pair penalty constants, and the feasible set.

    Feasibility is banned levels per factor plus an explicit banned-config
    list; everything else is feasible.
    """

    lambda_risk: float = 1.0
    lambda_cost: float = 0.0
    gamma: float | Mapping[str, float] = 1.0
    banned_levels: Mapping[int, frozenset[int]] = field(default_factory=dict)
    banned_configs: frozenset[Config] = frozenset()

    def __post_init__(self):
        if self.lambda_risk < 0 or self.lambda_cost < 0:
            raise ValueError("penalty weights must be nonnegative")
        gammas = self.gamma.values() if isinstance(self.gamma, Mapping) else [self.gamma]
        for g in gammas:
            if g <= 0:
                raise ValueError("gamma must be strictly positive")

    @classmethod
    def from_dict(cls, space: FactorSpace, data: Mapping) -> "ObjectiveSpec":
        gamma = data.get("gamma", 1.0)
        banned_levels: dict[int, frozenset[int]] = {}
        for name, labels in data.get("banned_levels", {}).items():
            j = space.index_of(name)
            banned_levels[j] = frozenset(space.level_index(j, lbl) for lbl in labels)
        banned_configs = frozenset(
            tuple(space.level_index(j, lbl) for j, lbl in enumerate(cfg))
            for cfg in data.get("banned_configs", [])
        )
        return cls(
            lambda_risk=float(data.get("lambda_risk", 1.0)),
            lambda_cost=float(data.get("lambda_cost", 0.0)),
            gamma=gamma,
            banned_levels=banned_levels,
            banned_configs=banned_configs,
        )

    def gamma_for(self, space: FactorSpace, j: int, k: int) -> float:
        if isinstance(self.gamma, Mapping):
            a, b = sorted((j, k))
            return float(self.gamma[f"{space.names[a]}|{space.names[b]}"])
        return float(self.gamma)

    def level_allowed(self, j: int, level: int) -> bool:
        return level not in self.banned_levels.get(j, frozenset())

    def allowed_levels(self, space: FactorSpace, j: int) -> list[int]:
        banned = self.banned_levels.get(j, frozenset())
        return [l for l in range(space.level_counts[j]) if l not in banned]

    def feasible(self, x: Sequence[int]) -> bool:
        xt = tuple(int(v) for v in x)
        if xt in self.banned_configs:
            return False
        return all(self.level_allowed(j, lvl) for j, lvl in enumerate(xt))


def two_factor_predict(table: EffectTable, x: Sequence[int]) -> float:
    """Baseline plus main effects plus pairwise interactions at x."""
    x = table.space.validate_config(x)
    total = table.mu
    for j, g in enumerate(table.mains):
        total += float(g[x[j]])
    for (j, k), mat in table.pairs.items():
        total += float(mat[x[j], x[k]])
    return total


def predict_grid(table: EffectTable) -> np.ndarray:
    """Two-factor prediction over the whole grid as a tensor."""
    space = table.space
    d = space.num_factors
    out = np.full(space.level_counts, table.mu, dtype=float)
    for j, g in enumerate(table.mains):
        shape = [1] * d
        shape[j] = len(g)
        out = out + g.reshape(shape)
    for (j, k), mat in table.pairs.items():
        shape = [1] * d
        shape[j], shape[k] = mat.shape
        out = out + mat.reshape(shape)
    return out


def risk_penalty(support: SupportCounts, x: Sequence[int],
                 gamma: float | ObjectiveSpec = 1.0) -> float:
    """Sum over factor pairs of gamma / (n_jk + gamma); each term in (0, 1]."""
    space = support.space
    total = 0.0
    for j, k in space.pairs():
        if isinstance(gamma, ObjectiveSpec):
            g = gamma.gamma_for(space, j, k)
        else:
            g = float(gamma)
            if g <= 0:
                raise ValueError("gamma must be strictly positive")
        n = support.pair_counts[(j, k)][x[j], x[k]]
        total += g / (n + g)
    return total


def risk_grid(support: SupportCounts, spec: ObjectiveSpec) -> np.ndarray:
    space = support.space
    d = space.num_factors
    out = np.zeros(space.level_counts)
    for j, k in space.pairs():
        g = spec.gamma_for(space, j, k)
        term = g / (support.pair_counts[(j, k)] + g)
        shape = [1] * d
        shape[j], shape[k] = term.shape
        out = out + term.reshape(shape)
    return out


def cost_grid(cost: CostModel) -> np.ndarray:
    space = cost.space
    d = space.num_factors
    out = np.full(space.level_counts, cost.offset, dtype=float)
    for j, c in enumerate(cost.level_costs):
        shape = [1] * d
        shape[j] = len(c)
        out = out + c.reshape(shape)
    return out


def feasible_mask(space: FactorSpace, spec: ObjectiveSpec) -> np.ndarray:
    mask = np.ones(space.level_counts, dtype=bool)
    d = space.num_factors
    for j, banned in spec.banned_levels.items():
        for lvl in banned:
            index: list = [slice(None)] * d
            index[j] = lvl
            mask[tuple(index)] = False
    for cfg in spec.banned_configs:
        mask[cfg] = False
    return mask


def objective(table: EffectTable, x: Sequence[int], support: SupportCounts,
              spec: ObjectiveSpec, cost: CostModel | None = None) -> float:
    """Risk- and cost-adjusted score of a feasible configuration."""
    x = table.space.validate_config(x)
    if not spec.feasible(x):
        raise InfeasibleConfigError(f"configuration {x} is outside the feasible set")
    cost = cost or CostModel.zero(table.space)
    value = two_factor_predict(table, x)
    value -= spec.lambda_risk * risk_penalty(support, x, spec)
    value -= spec.lambda_cost * cost.total(x)
    return value


def objective_grid(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
                   cost: CostModel | None = None) -> tuple[np.ndarray, np.ndarray]:
    """J over the whole grid plus the feasibility mask."""
    cost = cost or CostModel.zero(table.space)
    J = predict_grid(table)
    if spec.lambda_risk:
        J = J - spec.lambda_risk * risk_grid(support, spec)
    if spec.lambda_cost:
        J = J - spec.lambda_cost * cost_grid(cost)
    return J, feasible_mask(table.space, spec)
