"""Finite-difference oracles: central differences, Ridders' extrapolation,
and Jacobian comparison reporting.

These routines are deliberately engine-agnostic: they only ever call the
function handed to them, so they can serve as an independent check on any
analytic Jacobian in the package.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

# Classical Ridders parameters; the initial step shrinks by CON per tableau
# column and iteration stops once the error estimate degrades by SAFE.
RIDDERS_CON = 1.4
RIDDERS_SAFE = 2.0
RIDDERS_TABLEAU = 10


class NonFiniteError(RuntimeError):
    """The probed function returned NaN or Inf."""


class ShapeMismatchError(ValueError):
    """Analytic and oracle blocks have different shapes."""


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("NIMBLE_MINI_THREADS", "1")))
    except ValueError:
        return 1


def _eval(fn, x):
    y = np.atleast_1d(np.asarray(fn(np.asarray(x, dtype=float)), dtype=float))
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("function returned non-finite values")
    return y


def central_difference(fn, x, h: float | np.ndarray = None) -> np.ndarray:
    """Column-wise central-difference Jacobian of fn at x.

    h defaults to 1e-6 * max(1, |x_i|) per coordinate.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if h is None:
        h = 1e-6 * np.maximum(1.0, np.abs(x))
    hs = np.broadcast_to(np.asarray(h, dtype=float), x.shape)

    def column(i):
        e = np.zeros_like(x)
        e[i] = hs[i]
        return (_eval(fn, x + e) - _eval(fn, x - e)) / (2.0 * hs[i])

    workers = _max_workers()
    if workers > 1 and x.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(column, range(x.size)))
    else:
        cols = [column(i) for i in range(x.size)]
    return np.stack(cols, axis=-1)


def _ridders_column(fn, x, i, h0, max_tableau):
    """Ridders' polynomial extrapolation for one input coordinate.

    Returns (derivative column, per-entry error estimate).
    """
    con2 = RIDDERS_CON * RIDDERS_CON
    hh = h0

    def probe(step):
        e = np.zeros_like(x)
        e[i] = step
        return (_eval(fn, x + e) - _eval(fn, x - e)) / (2.0 * step)

    tableau = [[probe(hh)]]
    best = tableau[0][0].copy()
    best_err = np.full_like(best, np.inf)
    prev_worst = np.inf
    for col in range(1, max_tableau):
        hh /= RIDDERS_CON
        column = [probe(hh)]
        fac = con2
        for row in range(1, col + 1):
            higher = (column[row - 1] * fac - tableau[col - 1][row - 1]) / (fac - 1.0)
            fac *= con2
            errt = np.maximum(
                np.abs(higher - column[row - 1]),
                np.abs(higher - tableau[col - 1][row - 1]),
            )
            improved = errt < best_err
            best = np.where(improved, higher, best)
            best_err = np.where(improved, errt, best_err)
            column.append(higher)
        tableau.append(column)
        worst = float(np.max(np.abs(column[-1] - tableau[col - 1][-1])))
        if col > 1 and worst >= RIDDERS_SAFE * prev_worst:
            break
        prev_worst = min(prev_worst, worst) if np.isfinite(worst) else prev_worst
    return best, best_err


def ridders(fn, x, h: float | np.ndarray = None, max_tableau: int = RIDDERS_TABLEAU):
    """Ridders-extrapolated Jacobian of fn at x with per-entry error estimates.

    The initial step defaults to 1e-2 * max(1, |x_i|); it should span a range
    over which fn varies noticeably, not a tiny increment.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if h is None:
        h = 1e-2 * np.maximum(1.0, np.abs(x))
    hs = np.broadcast_to(np.asarray(h, dtype=float), x.shape)

    def column(i):
        return _ridders_column(fn, x, i, hs[i], max_tableau)

    workers = _max_workers()
    if workers > 1 and x.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(column, range(x.size)))
    else:
        results = [column(i) for i in range(x.size)]
    jac = np.stack([r[0] for r in results], axis=-1)
    err = np.stack([r[1] for r in results], axis=-1)
    return jac, err


@dataclass
class BlockReport:
    name: str
    max_abs_error: float
    max_rel_error: float
    step_size: float
    ridders_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def row(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{self.name},{self.max_abs_error:.17g},{self.max_rel_error:.17g},"
                f"{self.step_size:.17g},{self.ridders_error:.17g},"
                f"{self.tolerance:.17g},{status}")


@dataclass
class DiffReport:
    blocks: list

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    def table(self) -> str:
        header = "block,max_abs_error,max_rel_error,step_size,ridders_error,tolerance,status"
        return "\n".join([header] + [b.row() for b in self.blocks])

    def failing(self) -> list:
        return [b for b in self.blocks if not b.passed]


def _errors(analytic, oracle):
    analytic = np.asarray(analytic, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    if analytic.shape != oracle.shape:
        raise ShapeMismatchError(
            f"shape mismatch: analytic {analytic.shape} vs oracle {oracle.shape}")
    diff = np.abs(analytic - oracle)
    max_abs = float(diff.max()) if diff.size else 0.0
    # unit floor: blocks much smaller than 1 are held to the tolerance as an
    # absolute error, which keeps all-zero blocks from failing on noise
    scale = max(1.0, float(np.max(np.abs(oracle))), float(np.max(np.abs(analytic))))
    return max_abs, max_abs / scale


def compare(analytic_blocks: dict, oracle_blocks: dict, tolerances: dict,
            step_sizes: dict = None, ridders_errors: dict = None) -> DiffReport:
    """Per-block error stats for named Jacobian blocks.

    Relative error is max-abs error normalized by the larger of the two
    blocks' max magnitudes (unit-scale floor of 1e-30 guards all-zero blocks).
    """
    rows = []
    for name, analytic in analytic_blocks.items():
        if name not in oracle_blocks:
            raise ShapeMismatchError(f"oracle is missing block {name!r}")
        max_abs, max_rel = _errors(analytic, oracle_blocks[name])
        rows.append(BlockReport(
            name=name,
            max_abs_error=max_abs,
            max_rel_error=max_rel,
            step_size=float((step_sizes or {}).get(name, 0.0)),
            ridders_error=float((ridders_errors or {}).get(name, 0.0)),
            tolerance=float(tolerances[name] if isinstance(tolerances, dict)
                            else tolerances),
        ))
    return DiffReport(rows)
