"""Cell-mean estimation of main effects and pairwise interactions.

The estimators follow the plug-in recipe: a weighted baseline, weighted
conditional means per level and per level pair, differencing to raw effects,
exact re-centering under the reference distribution, multiplicative
shrinkage of weakly supported entries, and a final re-centering so the
table invariants hold exactly. Uncertainty comes from resampling whole
records with replacement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .space import (
    FactorSpace,
    ReferenceDistribution,
    RunLog,
    SupportCounts,
    support_counts,
)


class EmptyCellError(LookupError):
    """A conditional mean was requested for a cell with no support."""


@dataclass(frozen=True)
class ShrinkageSpec:
    """Pseudo-count shrinkage strengths: eta = n / (n + tau).

    Scalars apply to every factor / pair; mappings override per factor name
    or per ``"name_j|name_k"`` pair key.
    """

    tau_main: float | Mapping[str, float] = 1.0
    tau_pair: float | Mapping[str, float] = 1.0

    def __post_init__(self):
        for tau in (self.tau_main, self.tau_pair):
            values = tau.values() if isinstance(tau, Mapping) else [tau]
            for v in values:
                if v <= 0:
                    raise ValueError("shrinkage strengths must be strictly positive")

    def main(self, space: FactorSpace, j: int) -> float:
        if isinstance(self.tau_main, Mapping):
            return float(self.tau_main[space.names[j]])
        return float(self.tau_main)

    def pair(self, space: FactorSpace, j: int, k: int) -> float:
        if isinstance(self.tau_pair, Mapping):
            return float(self.tau_pair[f"{space.names[j]}|{space.names[k]}"])
        return float(self.tau_pair)


NEGLIGIBLE_TAU = 1e-12  # effectively unshrunk; spec requires tau > 0


@dataclass(eq=False)
class EffectTable:
    """Baseline plus centered main-effect and pair-interaction tables.

    ``mains[j]`` holds the centered, shrunk effect per level of factor ``j``;
    ``pairs[(j, k)]`` (j < k) holds the doubly centered interaction matrix.
    ``level_means[j]`` keeps the raw weighted conditional means that the
    effects were derived from (NaN where unsupported).
    """

    space: FactorSpace
    reference: ReferenceDistribution
    mu: float
    mains: tuple[np.ndarray, ...]
    pairs: dict[tuple[int, int], np.ndarray]
    support: SupportCounts | None = None
    provenance: str = "CM"
    level_means: tuple[np.ndarray, ...] | None = None
    mains_unsupported: tuple[np.ndarray, ...] | None = None
    pairs_unsupported: dict[tuple[int, int], np.ndarray] | None = None
    mu_ci: np.ndarray | None = None
    mains_se: tuple[np.ndarray, ...] | None = None
    mains_ci: tuple[np.ndarray, ...] | None = None
    pairs_se: dict[tuple[int, int], np.ndarray] | None = None
    pairs_ci: dict[tuple[int, int], np.ndarray] | None = None
    level_means_ci: tuple[np.ndarray, ...] | None = None
    diagnostics: dict | None = None

    def main(self, j: int) -> np.ndarray:
        return self.mains[j]

    def pair(self, j: int, k: int) -> np.ndarray:
        if j < k:
            return self.pairs[(j, k)]
        return self.pairs[(k, j)].T

    def with_zero_pairs(self) -> "EffectTable":
        zeros = {jk: np.zeros_like(mat) for jk, mat in self.pairs.items()}
        return replace(self, pairs=zeros)

    def to_dict(self) -> dict:
        space = self.space
        mains = {
            f.name: {lbl: float(v) for lbl, v in zip(f.levels, g)}
            for f, g in zip(space.factors, self.mains)
        }
        pairs = {}
        for (j, k), mat in self.pairs.items():
            fj, fk = space.factors[j], space.factors[k]
            pairs[f"{fj.name}|{fk.name}"] = {
                f"{fj.levels[a]}|{fk.levels[b]}": float(mat[a, b])
                for a in range(fj.num_levels)
                for b in range(fk.num_levels)
            }
        out = {
            "mu": self.mu,
            "mains": mains,
            "pairs": pairs,
            "provenance": self.provenance,
            "reference": self.reference.describe(),
            "support": self.support.to_dict() if self.support is not None else None,
        }
        ci = {}
        if self.mu_ci is not None:
            ci["mu"] = [float(self.mu_ci[0]), float(self.mu_ci[1])]
        if self.mains_ci is not None:
            ci["mains"] = {
                f.name: {lbl: [float(lo), float(hi)] for lbl, (lo, hi) in zip(f.levels, arr)}
                for f, arr in zip(space.factors, self.mains_ci)
            }
        if self.pairs_ci is not None:
            ci["pairs"] = {
                f"{space.names[j]}|{space.names[k]}": {
                    f"{space.factors[j].levels[a]}|{space.factors[k].levels[b]}":
                        [float(mat[a, b, 0]), float(mat[a, b, 1])]
                    for a in range(space.level_counts[j])
                    for b in range(space.level_counts[k])
                }
                for (j, k), mat in self.pairs_ci.items()
            }
        out["ci"] = ci or None
        if self.diagnostics is not None:
            out["diagnostics"] = self.diagnostics
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def table_from_dict(data: Mapping, space: FactorSpace,
                    reference: ReferenceDistribution | None = None) -> EffectTable:
    reference = reference or ReferenceDistribution.uniform(space)
    mains = []
    for f in space.factors:
        row = data["mains"][f.name]
        mains.append(np.array([float(row[lbl]) for lbl in f.levels]))
    pairs = {}
    for j, k in space.pairs():
        fj, fk = space.factors[j], space.factors[k]
        cell = data["pairs"][f"{fj.name}|{fk.name}"]
        mat = np.array([[float(cell[f"{a}|{b}"]) for b in fk.levels] for a in fj.levels])
        pairs[(j, k)] = mat
    return EffectTable(
        space=space,
        reference=reference,
        mu=float(data["mu"]),
        mains=tuple(mains),
        pairs=pairs,
        provenance=str(data.get("provenance", "CM")),
    )


# ---------------------------------------------------------------------------
# Baseline and conditional means
# ---------------------------------------------------------------------------

def weighted_baseline(log: RunLog) -> float:
    total = float(log.weights.sum())
    if total <= 0:
        raise ValueError("total weight is zero")
    return float(np.dot(log.weights, log.responses) / total)


def conditional_mean(log: RunLog, j: int, level: int) -> float:
    mask = log.configs_array[:, j] == level
    wsum = float(log.weights[mask].sum())
    if wsum <= 0:
        raise EmptyCellError(f"no support for factor {log.space.names[j]!r} level {level}")
    return float(np.dot(log.weights[mask], log.responses[mask]) / wsum)


def conditional_pair_mean(log: RunLog, j: int, lj: int, k: int, lk: int) -> float:
    cfg = log.configs_array
    mask = (cfg[:, j] == lj) & (cfg[:, k] == lk)
    wsum = float(log.weights[mask].sum())
    if wsum <= 0:
        raise EmptyCellError(
            f"no support for pair ({log.space.names[j]!r}={lj}, {log.space.names[k]!r}={lk})"
        )
    return float(np.dot(log.weights[mask], log.responses[mask]) / wsum)


# ---------------------------------------------------------------------------
# Centering
# ---------------------------------------------------------------------------

def center_main(g: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Shift so the pi-weighted mean is exactly zero."""
    return g - float(np.dot(pi, g))


def double_center(mat: np.ndarray, joint: np.ndarray,
                  tol: float = 1e-13, max_rounds: int = 500) -> np.ndarray:
    """Remove row and column conditional means under the joint weights.

    For product-form weights one row pass followed by one column pass is
    exact; non-product joints need alternating passes, which converge
    geometrically. Rows or columns with zero mass are left untouched.
    """
    out = mat.astype(float).copy()
    row_mass = joint.sum(axis=1)
    col_mass = joint.sum(axis=0)
    rows = row_mass > 0
    cols = col_mass > 0
    for _ in range(max_rounds):
        row_means = np.zeros(out.shape[0])
        row_means[rows] = (joint * out).sum(axis=1)[rows] / row_mass[rows]
        out[rows, :] -= row_means[rows, None]
        col_means = np.zeros(out.shape[1])
        col_means[cols] = (joint * out).sum(axis=0)[cols] / col_mass[cols]
        out[:, cols] -= col_means[None, cols]
        row_dev = np.abs((joint * out).sum(axis=1)[rows] / row_mass[rows]).max(initial=0.0)
        col_dev = np.abs((joint * out).sum(axis=0)[cols] / col_mass[cols]).max(initial=0.0)
        if max(row_dev, col_dev) <= tol:
            break
    return out


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

def _cell_means(configs: np.ndarray, resp: np.ndarray, w: np.ndarray,
                space: FactorSpace):
    """Weighted level and pair-cell means; NaN marks empty cells."""
    level_means = []
    for j, L in enumerate(space.level_counts):
        sw = np.bincount(configs[:, j], weights=w, minlength=L)
        swf = np.bincount(configs[:, j], weights=w * resp, minlength=L)
        means = np.full(L, np.nan)
        mask = sw > 0
        means[mask] = swf[mask] / sw[mask]
        level_means.append(means)
    pair_means = {}
    for j, k in space.pairs():
        Lj, Lk = space.level_counts[j], space.level_counts[k]
        cell = configs[:, j] * Lk + configs[:, k]
        sw = np.bincount(cell, weights=w, minlength=Lj * Lk)
        swf = np.bincount(cell, weights=w * resp, minlength=Lj * Lk)
        means = np.full(Lj * Lk, np.nan)
        mask = sw > 0
        means[mask] = swf[mask] / sw[mask]
        pair_means[(j, k)] = means.reshape(Lj, Lk)
    return level_means, pair_means


def _estimate_arrays(configs: np.ndarray, resp: np.ndarray, w: np.ndarray,
                     space: FactorSpace, reference: ReferenceDistribution,
                     shrinkage: ShrinkageSpec):
    """Core CM pipeline on raw arrays; returns everything the table needs."""
    total = w.sum()
    if total <= 0:
        raise ValueError("total weight is zero")
    mu = float(np.dot(w, resp) / total)
    level_means, pair_means = _cell_means(configs, resp, w, space)

    mains_missing = tuple(np.isnan(m) for m in level_means)
    pairs_missing = {jk: np.isnan(m) for jk, m in pair_means.items()}

    # Raw differenced effects; empty cells contribute zero and stay flagged.
    mains = []
    for j, means in enumerate(level_means):
        g = np.where(np.isnan(means), 0.0, means - mu)
        mains.append(g)
    pairs = {}
    for (j, k), means in pair_means.items():
        mj = np.where(np.isnan(level_means[j]), mu, level_means[j])
        mk = np.where(np.isnan(level_means[k]), mu, level_means[k])
        g = means - mj[:, None] - mk[None, :] + mu
        pairs[(j, k)] = np.where(np.isnan(means), 0.0, g)

    # Support drives both shrinkage and diagnostics.
    level_counts = tuple(
        np.bincount(configs[:, j], minlength=L).astype(np.intp)
        for j, L in enumerate(space.level_counts)
    )

    def recenter():
        for j in range(space.num_factors):
            mains[j] = center_main(mains[j], reference.marginal(j))
        for jk in list(pairs):
            pairs[jk] = double_center(pairs[jk], reference.pair(*jk))

    recenter()
    for j in range(space.num_factors):
        tau = shrinkage.main(space, j)
        eta = level_counts[j] / (level_counts[j] + tau)
        mains[j] = eta * mains[j]
        mains[j][mains_missing[j]] = 0.0
    for (j, k) in list(pairs):
        tau = shrinkage.pair(space, j, k)
        Lj, Lk = space.level_counts[j], space.level_counts[k]
        cell = configs[:, j] * Lk + configs[:, k]
        n_jk = np.bincount(cell, minlength=Lj * Lk).reshape(Lj, Lk)
        eta = n_jk / (n_jk + tau)
        pairs[(j, k)] = eta * pairs[(j, k)]
        pairs[(j, k)][pairs_missing[(j, k)]] = 0.0
    recenter()

    return mu, tuple(mains), pairs, tuple(level_means), mains_missing, pairs_missing


def estimate_effects_cm(log: RunLog, reference: ReferenceDistribution | None = None,
                        shrinkage: ShrinkageSpec | None = None) -> EffectTable:
    """Conditional-mean effect table: raw estimates, exact re-centering,
    pseudo-count shrinkage, and a final re-centering."""
    space = log.space
    reference = reference or ReferenceDistribution.uniform(space)
    shrinkage = shrinkage or ShrinkageSpec()
    mu, mains, pairs, level_means, m_miss, p_miss = _estimate_arrays(
        log.configs_array, log.responses, log.weights, space, reference, shrinkage
    )
    return EffectTable(
        space=space,
        reference=reference,
        mu=mu,
        mains=mains,
        pairs=pairs,
        support=support_counts(log),
        provenance="CM",
        level_means=level_means,
        mains_unsupported=m_miss,
        pairs_unsupported=p_miss,
    )


def bootstrap_cis(log: RunLog, reference: ReferenceDistribution | None = None,
                  shrinkage: ShrinkageSpec | None = None, B: int = 200,
                  level: float = 0.95, seed: int = 0) -> EffectTable:
    """Percentile intervals from resampling whole records with replacement.

    Replicate b draws its RNG from child b of the seed sequence, so results
    are reproducible regardless of evaluation order.
    """
    if B < 100:
        raise ValueError("bootstrap needs at least 100 replicates")
    if not 0 < level < 1:
        raise ValueError("coverage level must be in (0, 1)")
    space = log.space
    reference = reference or ReferenceDistribution.uniform(space)
    shrinkage = shrinkage or ShrinkageSpec()
    base = estimate_effects_cm(log, reference, shrinkage)

    configs, resp, w = log.configs_array, log.responses, log.weights
    n = len(log)
    mu_reps = np.empty(B)
    main_reps = [np.empty((B, L)) for L in space.level_counts]
    pair_reps = {jk: np.empty((B,) + base.pairs[jk].shape) for jk in base.pairs}
    mean_reps = [np.empty((B, L)) for L in space.level_counts]

    children = np.random.SeedSequence(seed).spawn(B)
    for b in range(B):
        rng = np.random.default_rng(children[b])
        idx = rng.integers(0, n, size=n)
        wb = w[idx]
        if wb.sum() <= 0:  # pathological draw under zero-heavy weights
            idx = np.arange(n)
            wb = w
        mu_b, mains_b, pairs_b, means_b, _, _ = _estimate_arrays(
            configs[idx], resp[idx], wb, space, reference, shrinkage
        )
        mu_reps[b] = mu_b
        for j in range(space.num_factors):
            main_reps[j][b] = mains_b[j]
            mean_reps[j][b] = means_b[j]
        for jk in pair_reps:
            pair_reps[jk][b] = pairs_b[jk]

    lo_q = 100.0 * (1.0 - level) / 2.0
    hi_q = 100.0 - lo_q

    def pct(arr):
        return np.stack(
            [np.nanpercentile(arr, lo_q, axis=0), np.nanpercentile(arr, hi_q, axis=0)],
            axis=-1,
        )

    mains_ci = tuple(pct(main_reps[j]) for j in range(space.num_factors))
    mains_se = tuple(np.nanstd(main_reps[j], axis=0, ddof=1) for j in range(space.num_factors))
    pairs_ci = {jk: pct(pair_reps[jk]) for jk in pair_reps}
    pairs_se = {jk: np.nanstd(pair_reps[jk], axis=0, ddof=1) for jk in pair_reps}
    level_means_ci = tuple(pct(mean_reps[j]) for j in range(space.num_factors))
    mu_ci = np.array([np.percentile(mu_reps, lo_q), np.percentile(mu_reps, hi_q)])

    return replace(
        base,
        mu_ci=mu_ci,
        mains_se=mains_se,
        mains_ci=mains_ci,
        pairs_se=pairs_se,
        pairs_ci=pairs_ci,
        level_means_ci=level_means_ci,
    )


def shrinkage_risk(eta: float, variance_estimate: float, effect_value: float) -> float:
    """Mean squared risk of multiplicative shrinkage at strength eta."""
    if not 0 < eta <= 1:
        raise ValueError("eta must be in (0, 1]")
    return eta * eta * variance_estimate + (1.0 - eta) ** 2 * effect_value * effect_value
