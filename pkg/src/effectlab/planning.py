"""Sample-size planning and error budgeting from concentration bounds.

All planners return integer ceilings of the closed forms; half-widths are
reals in response units. Inputs: a bound B on |response|, per-cell target
accuracy eps, and failure probability delta.
"""

from __future__ import annotations

import math

from .space import RunLog


def _check_budget(B: float, eps: float, delta: float) -> None:
    if B <= 0:
        raise ValueError("B must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")


def hoeffding_cell_bound(B: float, eps: float, delta: float) -> float:
    _check_budget(B, eps, delta)
    return 2.0 * B * B / (eps * eps) * math.log(2.0 / delta)


def hoeffding_cell_n(B: float, eps: float, delta: float) -> int:
    """Cell size sufficient for a cell-mean error of at most eps."""
    return math.ceil(hoeffding_cell_bound(B, eps, delta))


def uniform_cells_bound(B: float, eps: float, delta: float, L_j: int, L_k: int) -> float:
    _check_budget(B, eps, delta)
    if L_j < 1 or L_k < 1:
        raise ValueError("level counts must be at least 1")
    return 2.0 * B * B / (eps * eps) * math.log(2.0 * L_j * L_k / delta)


def uniform_cells_n(B: float, eps: float, delta: float, L_j: int, L_k: int) -> int:
    """Minimum cell size making every cell of an L_j x L_k pair accurate at
    once (union bound over cells)."""
    return math.ceil(uniform_cells_bound(B, eps, delta, L_j, L_k))


def bernstein_halfwidth(sigma_hat: float, B: float, n: int, delta: float) -> float:
    """Variance-adaptive half-width for a cell mean from n samples."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma_hat < 0 or B <= 0:
        raise ValueError("sigma_hat must be nonnegative and B positive")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    log_term = math.log(3.0 / delta)
    return math.sqrt(2.0 * sigma_hat * sigma_hat * log_term / n) + 3.0 * B * log_term / n


def effect_error_budget(eps0: float, eps1: float) -> tuple[float, float]:
    """Worst-case (main, pair) effect errors from a baseline error of eps0
    and cell-mean errors of eps1."""
    if eps0 < 0 or eps1 < 0:
        raise ValueError("error targets must be nonnegative")
    return (eps1 + eps0, 3.0 * eps1 + eps0)


def infer_bound(log: RunLog, inflation: float = 1.1) -> float:
    """Response bound from a log: max |response| inflated for safety."""
    peak = float(abs(log.responses).max())
    if peak == 0.0:
        return 1.0
    return inflation * peak
