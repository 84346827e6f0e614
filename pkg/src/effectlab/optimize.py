"""Coordinate-ascent search over the feasible set with optimality diagnostics.

One sweep updates each factor in declaration order to the level with the
largest local gain, accepting only strict improvements and breaking ties by
lowest level index. The endpoint of a converged run is 1-swap optimal; a
diagonal-dominance certificate upgrades that to global optimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .effects import EffectTable
from .objective import (
    CostModel,
    InfeasibleConfigError,
    ObjectiveSpec,
    objective,
)
from .space import Config, FactorSpace, SupportCounts

DOMINANCE_CONTEXT_CAP = 100_000


@dataclass(frozen=True)
class SearchSpec:
    restarts: int = 4
    beam: int = 2
    eps_stop: float = 0.0
    max_sweeps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restart count must be at least 1")
        if self.beam < 1:
            raise ValueError("beam width must be at least 1")
        if self.eps_stop < 0:
            raise ValueError("eps_stop must be nonnegative")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")


@dataclass
class SearchTrace:
    steps: list[tuple[int, Config, float]]
    final: Config
    termination: str  # "converged" | "max_sweeps"
    verified_1swap: bool | None = None

    @property
    def values(self) -> list[float]:
        return [v for _, _, v in self.steps]


@dataclass(eq=False)
class DominanceReport:
    margins: np.ndarray            # m_j per factor
    influence: np.ndarray          # L_jk, zero diagonal
    holds: bool
    exact: bool
    contexts_checked: tuple[int, ...]

    def to_dict(self, space: FactorSpace) -> dict:
        return {
            "holds": bool(self.holds),
            "exact": bool(self.exact),
            "margins": {name: float(m) for name, m in zip(space.names, self.margins)},
            "influence": {
                f"{space.names[j]}|{space.names[k]}": float(self.influence[j, k])
                for j in range(len(space.names))
                for k in range(len(space.names))
                if j != k
            },
            "contexts_checked": list(self.contexts_checked),
        }


# ---------------------------------------------------------------------------
# Local objective
# ---------------------------------------------------------------------------

def local_gain(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
               cost: CostModel | None, j: int, level: int, x: Sequence[int]) -> float:
    """Local objective of setting factor j to ``level`` in context x.

    Differences of this function across levels equal the corresponding
    differences of the full objective.
    """
    x = table.space.validate_config(x)
    if not spec.level_allowed(j, level):
        raise InfeasibleConfigError(f"level {level} of factor {j} is banned")
    swapped = x[:j] + (level,) + x[j + 1:]
    if swapped in spec.banned_configs:
        raise InfeasibleConfigError(f"configuration {swapped} is banned")
    cost = cost or CostModel.zero(table.space)
    total = float(table.mains[j][level])
    for k in range(table.space.num_factors):
        if k == j:
            continue
        total += float(table.pair(j, k)[level, x[k]])
        g = spec.gamma_for(table.space, j, k)
        n = support.pair(j, k)[level, x[k]]
        total -= spec.lambda_risk * g / (n + g)
    total -= spec.lambda_cost * (float(cost.level_costs[j][level]) - float(cost.level_costs[j][x[j]]))
    return total


def _local_scores(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
                  cost: CostModel, j: int, x: Sequence[int]) -> np.ndarray:
    """Vector of local objectives over all levels of factor j (NaN = banned)."""
    space = table.space
    L = space.level_counts[j]
    scores = table.mains[j].astype(float).copy()
    for k in range(space.num_factors):
        if k == j:
            continue
        scores += table.pair(j, k)[:, x[k]]
        g = spec.gamma_for(space, j, k)
        n = support.pair(j, k)[:, x[k]]
        scores -= spec.lambda_risk * g / (n + g)
    scores -= spec.lambda_cost * (cost.level_costs[j] - float(cost.level_costs[j][x[j]]))
    banned = spec.banned_levels.get(j, frozenset())
    for lvl in banned:
        scores[lvl] = np.nan
    if spec.banned_configs:
        for lvl in range(L):
            if lvl not in banned and x[:j] + (lvl,) + x[j + 1:] in spec.banned_configs:
                scores[lvl] = np.nan
    return scores


def coordinate_ascent(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
                      cost: CostModel | None, start: Sequence[int],
                      search: SearchSpec | None = None) -> tuple[Config, SearchTrace]:
    """Sweep factors in declaration order until no strict improvement.

    Ties between equally good levels go to the lowest index, and a move is
    accepted only when its gain exceeds ``eps_stop`` (default: any strictly
    positive gain), which rules out equal-value cycles.
    """
    search = search or SearchSpec()
    space = table.space
    cost = cost or CostModel.zero(space)
    x = space.validate_config(start)
    if not spec.feasible(x):
        raise InfeasibleConfigError(f"start configuration {x} is infeasible")

    steps = [(0, x, objective(table, x, support, spec, cost))]
    termination = "max_sweeps"
    for sweep in range(1, search.max_sweeps + 1):
        improved = False
        for j in range(space.num_factors):
            scores = _local_scores(table, support, spec, cost, j, x)
            if np.all(np.isnan(scores)):
                raise InfeasibleConfigError(
                    f"no feasible level for factor {space.names[j]!r} in context {x}"
                )
            best = int(np.nanargmax(scores))
            gain = scores[best] - scores[x[j]]
            if best != x[j] and gain > search.eps_stop:
                x = x[:j] + (best,) + x[j + 1:]
                improved = True
        steps.append((sweep, x, objective(table, x, support, spec, cost)))
        if not improved:
            termination = "converged"
            break
    trace = SearchTrace(steps, x, termination)
    if termination == "converged" and search.eps_stop == 0.0:
        ok, _ = verify_1swap(table, support, spec, cost, x)
        trace.verified_1swap = ok
    return x, trace


def _greedy_start(table: EffectTable, spec: ObjectiveSpec) -> Config:
    """Per-factor argmax of the main effects over allowed levels."""
    space = table.space
    start = []
    for j in range(space.num_factors):
        allowed = spec.allowed_levels(space, j)
        if not allowed:
            raise InfeasibleConfigError(f"factor {space.names[j]!r} has no allowed levels")
        g = table.mains[j]
        start.append(max(allowed, key=lambda l: (g[l], -l)))
    return tuple(start)


def multistart(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
               cost: CostModel | None, search: SearchSpec | None = None
               ) -> tuple[Config, list[SearchTrace]]:
    """Greedy start plus random restarts drawn from per-factor top levels.

    Restart r derives its RNG from (seed, r), so results do not depend on
    scheduling. The winner is the endpoint with the best objective; exact
    ties go to the lexicographically smallest configuration.
    """
    search = search or SearchSpec()
    space = table.space
    cost = cost or CostModel.zero(space)

    starts = [_greedy_start(table, spec)]
    children = np.random.SeedSequence(search.seed).spawn(max(search.restarts - 1, 0))
    for child in children:
        rng = np.random.default_rng(child)
        for _ in range(100):
            cand = []
            for j in range(space.num_factors):
                allowed = spec.allowed_levels(space, j)
                top = sorted(allowed, key=lambda l: (-table.mains[j][l], l))[: search.beam]
                cand.append(int(top[rng.integers(0, len(top))]))
            cand = tuple(cand)
            if spec.feasible(cand):
                starts.append(cand)
                break

    traces = []
    best: tuple[float, Config] | None = None
    for start in starts:
        if not spec.feasible(start):
            continue
        x, trace = coordinate_ascent(table, support, spec, cost, start, search)
        traces.append(trace)
        value = trace.steps[-1][2]
        if best is None or (value, tuple(-c for c in x)) > (best[0], tuple(-c for c in best[1])):
            best = (value, x)
    if best is None:
        raise InfeasibleConfigError("no feasible start configuration found")
    return best[1], traces


def verify_1swap(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
                 cost: CostModel | None, x: Sequence[int]
                 ) -> tuple[bool, tuple[int, int, float] | None]:
    """Exhaustive scan of all single-factor substitutions.

    Returns (True, None) when no feasible swap strictly increases the
    objective, else (False, (factor, level, gain)) for the best violation.
    """
    space = table.space
    cost = cost or CostModel.zero(space)
    x = space.validate_config(x)
    if not spec.feasible(x):
        raise InfeasibleConfigError(f"configuration {x} is infeasible")
    worst: tuple[int, int, float] | None = None
    for j in range(space.num_factors):
        scores = _local_scores(table, support, spec, cost, j, x)
        base = scores[x[j]]
        for lvl in range(space.level_counts[j]):
            if lvl == x[j] or np.isnan(scores[lvl]):
                continue
            gain = float(scores[lvl] - base)
            if gain > 0 and (worst is None or gain > worst[2]):
                worst = (j, lvl, gain)
    return worst is None, worst


# ---------------------------------------------------------------------------
# Dominance certificate
# ---------------------------------------------------------------------------

def _pair_score(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
                j: int, k: int) -> np.ndarray:
    """Interaction-plus-risk contribution of factor k to factor j's local
    objective, as an (L_j, L_k) matrix."""
    g = spec.gamma_for(table.space, j, k)
    return table.pair(j, k) - spec.lambda_risk * g / (support.pair(j, k) + g)


def diag_dominance_check(table: EffectTable, support: SupportCounts,
                         spec: ObjectiveSpec, cost: CostModel | None = None,
                         context_cap: int = DOMINANCE_CONTEXT_CAP,
                         sample_contexts: int = 2048, seed: int = 0) -> DominanceReport:
    """Certificate that every 1-swap optimum is the global optimum.

    ``influence[j, k]`` bounds how much a change in factor k can move factor
    j's local objective at any level. ``margins[j]`` is the smallest gap
    between the best and second-best local objective of factor j over
    feasible contexts, enumerated exactly when the context count is within
    ``context_cap`` and otherwise sampled (then the certificate is
    approximate and marked non-exact). Banned configs break the product
    structure of contexts, so their presence voids the certificate.
    """
    space = table.space
    cost = cost or CostModel.zero(space)
    d = space.num_factors
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    allowed = [spec.allowed_levels(space, j) for j in range(d)]
    for j in range(d):
        if not allowed[j]:
            raise InfeasibleConfigError(f"factor {space.names[j]!r} has no allowed levels")

    influence = np.zeros((d, d))
    for j in range(d):
        for k in range(d):
            if j == k:
                continue
            h = _pair_score(table, support, spec, j, k)
            h = h[np.ix_(allowed[j], allowed[k])]
            influence[j, k] = float((h.max(axis=1) - h.min(axis=1)).max())

    margins = np.full(d, math.inf)
    contexts_checked = []
    exact = not spec.banned_configs
    for j in range(d):
        if len(allowed[j]) < 2:
            contexts_checked.append(0)
            continue
        others = [k for k in range(d) if k != j]
        n_contexts = math.prod(len(allowed[k]) for k in others)
        base = table.mains[j][allowed[j]] - spec.lambda_cost * cost.level_costs[j][allowed[j]]
        pair_scores = {
            k: _pair_score(table, support, spec, j, k)[np.ix_(allowed[j], allowed[k])]
            for k in others
        }
        if n_contexts <= context_cap:
            # Tensor of local objectives: level axis first, one axis per context factor.
            shape = [len(allowed[j])] + [len(allowed[k]) for k in others]
            scores = np.zeros(shape)
            scores += base.reshape([-1] + [1] * len(others))
            for pos, k in enumerate(others):
                s = [len(allowed[j])] + [1] * len(others)
                s[1 + pos] = len(allowed[k])
                scores = scores + pair_scores[k].reshape(s)
            flat = scores.reshape(len(allowed[j]), -1)
            top2 = np.sort(flat, axis=0)[-2:, :]
            margins[j] = float((top2[1] - top2[0]).min())
            contexts_checked.append(int(flat.shape[1]))
        else:
            exact = False
            gaps = np.full(sample_contexts, math.inf)
            for s in range(sample_contexts):
                ctx = [allowed[k][rng.integers(0, len(allowed[k]))] for k in others]
                col = base.copy()
                for pos, k in enumerate(others):
                    col = col + pair_scores[k][:, allowed[k].index(ctx[pos])]
                srt = np.sort(col)
                gaps[s] = srt[-1] - srt[-2]
            margins[j] = float(gaps.min())
            contexts_checked.append(sample_contexts)

    holds = bool(np.all(influence.sum(axis=1) < margins)) and not spec.banned_configs
    return DominanceReport(margins, influence, holds, exact, tuple(contexts_checked))


# ---------------------------------------------------------------------------
# Gap bounds
# ---------------------------------------------------------------------------

def near_opt_bound(epsilon: float) -> float:
    """Value loss of maximizing a surrogate within epsilon of the truth."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return 2.0 * epsilon


def two_swap_bound(table: EffectTable, support: SupportCounts, spec: ObjectiveSpec,
                   cost: CostModel | None, x_hat: Sequence[int]) -> float:
    """Upper bound on J(y) - J(x_hat) over the feasible set for a 1-swap
    optimal x_hat: positive-part maxima of main, interaction, risk-saving,
    and cost-saving terms."""
    space = table.space
    cost = cost or CostModel.zero(space)
    x = space.validate_config(x_hat)
    ok, violation = verify_1swap(table, support, spec, cost, x)
    if not ok:
        raise ValueError(f"x_hat is not 1-swap optimal; improving swap {violation}")

    total = 0.0
    for j in range(space.num_factors):
        allowed = spec.allowed_levels(space, j)
        g = table.mains[j]
        total += max(max(float(g[l] - g[x[j]]) for l in allowed), 0.0)
        if spec.lambda_cost:
            c = cost.level_costs[j]
            total += spec.lambda_cost * max(
                max(float(c[x[j]] - c[l]) for l in allowed), 0.0
            )
    for j, k in space.pairs():
        mat = table.pairs[(j, k)]
        sub = mat[np.ix_(spec.allowed_levels(space, j), spec.allowed_levels(space, k))]
        total += max(float(sub.max() - mat[x[j], x[k]]), 0.0)
        if spec.lambda_risk:
            gam = spec.gamma_for(space, j, k)
            r = gam / (support.pair_counts[(j, k)] + gam)
            rsub = r[np.ix_(spec.allowed_levels(space, j), spec.allowed_levels(space, k))]
            total += spec.lambda_risk * max(float(r[x[j], x[k]] - rsub.min()), 0.0)
    return total
