"""Shapley attribution of factor effects and least-squares table recovery.

The coalition value of a fixed configuration x and factor subset T is the
expectation of the response with the T coordinates pinned to x and the rest
drawn from a product-form background. For enumerable grids every coalition
value is computed exactly by tensor contraction, which makes permutation
sampling cheap: one contraction table per oracle, then pure lookups.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .effects import EffectTable, ShrinkageSpec, center_main, double_center
from .space import (
    Config,
    FactorSpace,
    ReferenceDistribution,
    RunLog,
    SupportCounts,
)

EXACT_CELL_CAP = 1_000_000
RANK_TOLERANCE = 1e-8


class RankDeficiencyError(ValueError):
    def __init__(self, message: str, blocks: list[str] | None = None):
        super().__init__(message)
        self.blocks = blocks or []


# ---------------------------------------------------------------------------
# Coalition values
# ---------------------------------------------------------------------------

class ValueOracle:
    """Evaluates v(T) = E[f(x_T, X_rest)] under a product background.

    Backed either by a callable response function or by the cell means of a
    run log; unobserved cells of a log-backed oracle fall back to the
    weighted baseline. Exact evaluation materializes the grid and contracts
    background marginals axis by axis; every subset's contraction is cached.
    """

    def __init__(self, space: FactorSpace, reference: ReferenceDistribution,
                 values: np.ndarray, bound: float | None = None,
                 padded_cells: int = 0):
        if not reference.is_product:
            raise ValueError(
                "coalition values need a product-form background; "
                "use reference.product_marginals() to convert an empirical one"
            )
        if space.grid_size > EXACT_CELL_CAP:
            raise ValueError(
                f"grid size {space.grid_size} exceeds the exact-evaluation cap {EXACT_CELL_CAP}"
            )
        self.space = space
        self.reference = reference
        self.values = np.asarray(values, dtype=float).reshape(space.level_counts)
        self.bound = float(np.abs(self.values).max()) if bound is None else float(bound)
        self.padded_cells = padded_cells
        self._tables: dict[int, np.ndarray] = {}
        self._axes: dict[int, tuple[int, ...]] = {}
        self._build_tables()

    @classmethod
    def from_function(cls, space: FactorSpace, reference: ReferenceDistribution,
                      fn: Callable[[Config], float], bound: float | None = None) -> "ValueOracle":
        from .space import enumerate_grid

        grid = enumerate_grid(space, cap=EXACT_CELL_CAP)
        values = np.array([fn(x) for x in grid], dtype=float)
        return cls(space, reference, values, bound=bound)

    @classmethod
    def from_log(cls, log: RunLog, reference: ReferenceDistribution,
                 warn: bool = True) -> "ValueOracle":
        if not reference.is_product:
            raise ValueError(
                "coalition values need a product-form background; "
                "use reference.product_marginals() to convert an empirical one"
            )
        space = log.space
        counts = space.level_counts
        size = space.grid_size
        strides = np.array(
            [math.prod(counts[j + 1:]) for j in range(space.num_factors)], dtype=np.intp
        )
        flat = log.configs_array @ strides
        w = log.weights
        sw = np.bincount(flat, weights=w, minlength=size)
        swf = np.bincount(flat, weights=w * log.responses, minlength=size)
        total = w.sum()
        mu = float(swf.sum() / total)
        values = np.full(size, mu)
        mask = sw > 0
        values[mask] = swf[mask] / sw[mask]
        padded = int(size - mask.sum())
        if padded and warn:
            warnings.warn(
                f"{padded} of {size} grid cells unobserved; coalition values "
                "fall back to the weighted baseline there",
                stacklevel=2,
            )
        return cls(space, reference, values, padded_cells=padded)

    def _build_tables(self):
        d = self.space.num_factors
        full = (1 << d) - 1
        self._tables[full] = self.values
        self._axes[full] = tuple(range(d))
        order = sorted(range(1 << d), key=lambda m: -bin(m).count("1"))
        for mask in order:
            axes = self._axes.get(mask)
            if axes is None:
                continue
            tab = self._tables[mask]
            for pos, j in enumerate(axes):
                child = mask & ~(1 << j)
                if child in self._tables:
                    continue
                pi = self.reference.marginal(j)
                self._tables[child] = np.tensordot(tab, pi, axes=([pos], [0]))
                self._axes[child] = tuple(a for a in axes if a != j)

    @property
    def v_empty(self) -> float:
        return float(self._tables[0])

    def v(self, x: Sequence[int], subset: Iterable[int] | int) -> float:
        """Coalition value with the ``subset`` coordinates fixed to x."""
        mask = subset if isinstance(subset, int) else _mask_of(subset)
        idx = tuple(int(x[j]) for j in self._axes[mask])
        return float(self._tables[mask][idx])

    def v_all(self, x: Sequence[int]) -> np.ndarray:
        """Coalition values for every factor subset, indexed by bitmask."""
        d = self.space.num_factors
        out = np.empty(1 << d)
        for mask in range(1 << d):
            idx = tuple(int(x[j]) for j in self._axes[mask])
            out[mask] = self._tables[mask][idx]
        return out


def _mask_of(subset: Iterable[int]) -> int:
    mask = 0
    for j in subset:
        mask |= 1 << int(j)
    return mask


def coalition_value(oracle: ValueOracle, x: Sequence[int], subset: Iterable[int]) -> float:
    return oracle.v(x, subset)


# ---------------------------------------------------------------------------
# Monte Carlo attribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShapleyEstimate:
    x: Config
    phi: np.ndarray
    variance: np.ndarray
    M: int
    method: str = "permutation"


def mc_shapley(oracle: ValueOracle, x: Sequence[int], M: int = 1000, seed: int = 0,
               method: str = "permutation", return_contributions: bool = False):
    """Per-factor attribution of f(x) - v(empty) from marginal contributions.

    ``permutation`` averages M uniformly random orderings; ``subset`` draws
    M prefix sets per factor (size uniform, then a uniform subset of that
    size); ``exact`` enumerates all subsets with their ordering weights and
    has no sampling error. Deterministic for a given seed.
    """
    x = oracle.space.validate_config(x)
    d = oracle.space.num_factors
    vx = oracle.v_all(x)

    if method == "exact":
        masks = np.arange(1 << d)
        sizes = np.array([bin(m).count("1") for m in masks])
        fact = [math.factorial(i) for i in range(d + 1)]
        phi = np.empty(d)
        variance = np.empty(d)
        for j in range(d):
            bit = 1 << j
            pre = masks[(masks & bit) == 0]
            s = sizes[pre]
            weights = np.array([fact[si] * fact[d - 1 - si] / fact[d] for si in s])
            delta = vx[pre | bit] - vx[pre]
            phi[j] = float(np.dot(weights, delta))
            variance[j] = float(np.dot(weights, (delta - phi[j]) ** 2))
        est = ShapleyEstimate(x, phi, variance, M=1 << (d - 1) if d else 0, method="exact")
        if return_contributions:
            return est, None
        return est

    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    if method == "permutation":
        perms = np.argsort(rng.random((M, d)), axis=1)
        delta = np.empty((M, d))
        pre = np.zeros(M, dtype=np.int64)
        rows = np.arange(M)
        for t in range(d):
            j = perms[:, t]
            new = pre | (1 << j)
            delta[rows, j] = vx[new] - vx[pre]
            pre = new
    elif method == "subset":
        delta = np.empty((M, d))
        for j in range(d):
            others = [k for k in range(d) if k != j]
            sizes = rng.integers(0, d, size=M)
            scores = rng.random((M, d - 1)) if d > 1 else np.zeros((M, 0))
            order = np.argsort(scores, axis=1)
            pre = np.zeros(M, dtype=np.int64)
            for pos in range(d - 1):
                take = sizes > pos
                member = np.array(others, dtype=np.int64)[order[:, pos]]
                pre = np.where(take, pre | (1 << member), pre)
            bit = 1 << j
            delta[:, j] = vx[pre | bit] - vx[pre]
    else:
        raise ValueError(f"unknown sampling method {method!r}")

    phi = delta.mean(axis=0)
    variance = delta.var(axis=0, ddof=1) if M > 1 else np.zeros(d)
    est = ShapleyEstimate(x, phi, variance, M=M, method=method)
    if return_contributions:
        return est, delta
    return est


def exact_shapley_second_order(table: EffectTable, x: Sequence[int]) -> np.ndarray:
    """Closed-form attribution for a second-order table: each factor takes
    its main effect plus half of every interaction it participates in."""
    x = table.space.validate_config(x)
    d = table.space.num_factors
    phi = np.array([float(table.mains[j][x[j]]) for j in range(d)])
    for (j, k), mat in table.pairs.items():
        half = 0.5 * float(mat[x[j], x[k]])
        phi[j] += half
        phi[k] += half
    return phi


def mc_sample_bound(B: float, eps: float, delta: float,
                    union_items: int | None = None) -> float:
    if B <= 0:
        raise ValueError("B must be positive")
    if not 0 < eps < 1 or not 0 < delta < 1:
        raise ValueError("eps and delta must be in (0, 1)")
    items = 1 if union_items is None else int(union_items)
    if items < 1:
        raise ValueError("union_items must be at least 1")
    return 8.0 * B * B / (eps * eps) * math.log(2.0 * items / delta)


def mc_sample_size(B: float, eps: float, delta: float,
                   union_items: int | None = None) -> int:
    """Permutation count sufficient for |phi_hat - phi| <= eps with
    probability 1 - delta; union mode covers ``union_items`` estimates."""
    return math.ceil(mc_sample_bound(B, eps, delta, union_items))


# ---------------------------------------------------------------------------
# Design matrix and least-squares recovery
# ---------------------------------------------------------------------------

def _centered_basis(pi: np.ndarray) -> np.ndarray:
    """L x (L-1) basis of the pi-mean-zero subspace: level l >= 1 is free,
    level 0 absorbs -pi_l/pi_0 of it."""
    L = len(pi)
    if pi[0] <= 0:
        raise ValueError("reference marginal must give level 0 positive mass")
    U = np.zeros((L, L - 1))
    for l in range(1, L):
        U[l, l - 1] = 1.0
        U[0, l - 1] = -pi[l] / pi[0]
    return U


@dataclass(eq=False)
class EffectDesignMatrix:
    """Linear system mapping free effect parameters to attributions.

    Rows are (evaluation point, factor) pairs; columns are the sum-to-zero
    reparametrized main and pair parameters. Pre-reparametrization each row
    touches one main entry with coefficient 1 and d-1 pair entries with
    coefficient 1/2.
    """

    space: FactorSpace
    reference: ReferenceDistribution
    eval_set: tuple[Config, ...]
    matrix: np.ndarray
    blocks: list[tuple[str, tuple[int, ...], slice]]
    sigma_min: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def block_names(self) -> list[str]:
        names = self.space.names
        out = []
        for kind, idx, _ in self.blocks:
            if kind == "main":
                out.append(names[idx[0]])
            else:
                out.append(f"{names[idx[0]]}|{names[idx[1]]}")
        return out

    def deficient_blocks(self, tol: float = RANK_TOLERANCE) -> list[str]:
        """Names of parameter blocks with weight in the near-null space."""
        _, s, vt = np.linalg.svd(self.matrix, full_matrices=True)
        rank = int((s >= tol).sum())
        null_rows = vt[rank:]
        if null_rows.size == 0:
            return []
        names = self.block_names()
        hit = []
        for (kind, idx, sl), name in zip(self.blocks, names):
            if np.abs(null_rows[:, sl]).max() > 1e-6:
                hit.append(name)
        return hit

    def diagnostics(self) -> dict:
        return {
            "sigma_min": self.sigma_min,
            "rows": int(self.matrix.shape[0]),
            "params": int(self.matrix.shape[1]),
        }


def raw_design_row_support(space: FactorSpace) -> int:
    """Nonzero count of one pre-reparametrization row: the main entry plus
    one pair entry per other factor."""
    return 1 + (space.num_factors - 1)


def build_design_matrix(eval_set: Sequence[Sequence[int]], space: FactorSpace,
                        reference: ReferenceDistribution | None = None) -> EffectDesignMatrix:
    if not eval_set:
        raise ValueError("evaluation set is empty")
    reference = reference or ReferenceDistribution.uniform(space)
    if not reference.is_product:
        raise ValueError("design matrix needs a product-form reference")
    configs = tuple(space.validate_config(x) for x in eval_set)
    d = space.num_factors

    bases = [_centered_basis(reference.marginal(j)) for j in range(d)]
    blocks: list[tuple[str, tuple[int, ...], slice]] = []
    col = 0
    for j in range(d):
        width = space.level_counts[j] - 1
        blocks.append(("main", (j,), slice(col, col + width)))
        col += width
    for j, k in space.pairs():
        width = (space.level_counts[j] - 1) * (space.level_counts[k] - 1)
        blocks.append(("pair", (j, k), slice(col, col + width)))
        col += width
    p = col
    block_of: dict[tuple, slice] = {(kind, idx): sl for kind, idx, sl in blocks}

    A = np.zeros((len(configs) * d, p))
    for i, x in enumerate(configs):
        row_u = [bases[j][x[j]] for j in range(d)]
        for j in range(d):
            r = i * d + j
            A[r, block_of[("main", (j,))]] = row_u[j]
            for k in range(d):
                if k == j:
                    continue
                a, b = (j, k) if j < k else (k, j)
                coeff = 0.5 * np.outer(row_u[a], row_u[b]).ravel()
                A[r, block_of[("pair", (a, b))]] = coeff
    if A.shape[0] < A.shape[1]:
        sigma_min = 0.0  # underdetermined: the null space is structural
    else:
        s = np.linalg.svd(A, compute_uv=False)
        sigma_min = float(s[-1]) if s.size else 0.0
    return EffectDesignMatrix(space, reference, configs, A, blocks, sigma_min)


def _support_from_points(points: Sequence[Config], space: FactorSpace) -> SupportCounts:
    from .space import log_from_arrays, support_counts

    log = log_from_arrays(space, points, [0.0] * len(points))
    return support_counts(log)


def fit_effects_sf(estimates: Sequence[ShapleyEstimate], space: FactorSpace,
                   reference: ReferenceDistribution | None = None,
                   shrinkage: ShrinkageSpec | None = None, *,
                   support: SupportCounts | None = None, mu: float = 0.0,
                   design: EffectDesignMatrix | None = None) -> EffectTable:
    """Least squares in the sum-to-zero basis, mapped back to full tables,
    re-centered, then shrunk the same way as the cell-mean path.

    ``support`` supplies the shrinkage counts (defaults to counting the
    evaluation points); ``mu`` is the baseline to attach, typically the
    oracle's empty-coalition value.
    """
    if not estimates:
        raise ValueError("no attribution estimates to fit")
    reference = reference or ReferenceDistribution.uniform(space)
    shrinkage = shrinkage or ShrinkageSpec()
    d = space.num_factors
    for est in estimates:
        if len(est.x) != d:
            raise ValueError("estimate evaluated on an inconsistent space")

    eval_set = tuple(est.x for est in estimates)
    if design is None:
        design = build_design_matrix(eval_set, space, reference)
    elif design.eval_set != eval_set:
        raise ValueError("design matrix was built for a different evaluation set")
    if design.sigma_min <= RANK_TOLERANCE:
        blocks = design.deficient_blocks()
        raise RankDeficiencyError(
            f"design matrix is rank deficient (sigma_min={design.sigma_min:.3e}); "
            f"unidentified blocks: {blocks}",
            blocks,
        )

    phi = np.concatenate([est.phi for est in estimates])
    theta, *_ = np.linalg.lstsq(design.matrix, phi, rcond=None)
    residual = float(np.linalg.norm(design.matrix @ theta - phi))

    bases = [_centered_basis(reference.marginal(j)) for j in range(d)]
    mains = []
    pairs = {}
    for kind, idx, sl in design.blocks:
        if kind == "main":
            (j,) = idx
            mains.append(bases[j] @ theta[sl])
        else:
            j, k = idx
            Lj, Lk = space.level_counts[j], space.level_counts[k]
            theta_mat = theta[sl].reshape(Lj - 1, Lk - 1)
            pairs[(j, k)] = bases[j] @ theta_mat @ bases[k].T

    if support is None:
        support = _support_from_points(eval_set, space)

    def recenter():
        for j in range(d):
            mains[j] = center_main(mains[j], reference.marginal(j))
        for jk in list(pairs):
            pairs[jk] = double_center(pairs[jk], reference.pair(*jk))

    recenter()
    for j in range(d):
        tau = shrinkage.main(space, j)
        n = support.level_counts[j]
        mains[j] = (n / (n + tau)) * mains[j]
    for (j, k) in list(pairs):
        tau = shrinkage.pair(space, j, k)
        n = support.pair(j, k)
        pairs[(j, k)] = (n / (n + tau)) * pairs[(j, k)]
    recenter()

    diag = design.diagnostics()
    diag["residual_norm"] = residual
    return EffectTable(
        space=space,
        reference=reference,
        mu=float(mu),
        mains=tuple(mains),
        pairs=pairs,
        support=support,
        provenance="SF",
        diagnostics=diag,
    )


def stability_bound(design: EffectDesignMatrix, observation_error_norm: float) -> float:
    """Worst-case parameter error given an attribution error of the stated
    Euclidean norm."""
    if design.sigma_min <= 0:
        raise ValueError("stability bound undefined for a singular design matrix")
    return float(observation_error_norm) / design.sigma_min


def write_shapley_csv(estimates: Sequence[ShapleyEstimate], space: FactorSpace,
                      path: str | Path, header_note: str | None = None) -> None:
    """Long-form dump: one row per (evaluation point, factor)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_note:
            fh.write(f"# {header_note}\n")
        writer = csv.writer(fh)
        writer.writerow(list(space.names) + ["factor", "phi_hat", "variance", "M"])
        for est in estimates:
            labels = list(space.labels_for(est.x))
            for j, name in enumerate(space.names):
                writer.writerow(
                    labels + [name, repr(float(est.phi[j])), repr(float(est.variance[j])), est.M]
                )
