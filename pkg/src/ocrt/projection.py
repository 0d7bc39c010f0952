"""Euclidean projections onto polyhedra and a small dense active-set QP solver.

The workhorse is an active-set method on the KKT system of

    min 1/2 y'Hy - g'y   s.t.   A_eq y = b_eq,  A_in y <= b_in,

with H symmetric positive definite. Equality rows stay in the system
permanently; the inequality working set grows by the most-violated rule and
shrinks by dropping the smallest-index constraint with a negative multiplier
(Bland-style anti-cycling). Problems at the scale used here (a handful of
targets, tens of rows) solve in a few iterations.
"""

from __future__ import annotations

import numpy as np

from .data import (
    STATUS_ITER_LIMIT,
    STATUS_OPTIMAL,
    FeasibleSet,
    InfeasibleSetError,
    PredictionResult,
    UnsupportedError,
    check_feasibility,
)

_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-10


def _solve_kkt(H, g, C, d):
    """Solve the stationarity system for an equality-held working set.

    Returns (y, multipliers, consistent). The system is solved by least
    squares so redundant rows are harmless; inconsistency of C y = d is
    reported through the flag instead of an exception.
    """
    n = H.shape[0]
    m = C.shape[0]
    if m == 0:
        return np.linalg.lstsq(H, g, rcond=None)[0], np.zeros(0), True
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H
    kkt[:n, n:] = C.T
    kkt[n:, :n] = C
    rhs = np.concatenate([g, d])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    y, mult = sol[:n], sol[n:]
    resid = float(np.max(np.abs(C @ y - d), initial=0.0))
    consistent = resid <= 1e-8 * (1.0 + float(np.max(np.abs(d), initial=0.0)))
    return y, mult, consistent


def solve_qp_active_set(H, g, A_eq, b_eq, A_in, b_in, max_iter: int | None = None):
    """Minimize 1/2 y'Hy - g'y over {A_eq y = b_eq, A_in y <= b_in}.

    Returns (y, status). Raises InfeasibleSetError when the constraint
    system has no solution (detected through an inconsistent equality
    system or an inconsistent working subsystem, which the most-violated
    update only produces on empty polyhedra).
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A_eq = np.asarray(A_eq, dtype=float)
    b_eq = np.asarray(b_eq, dtype=float)
    A_in = np.asarray(A_in, dtype=float)
    b_in = np.asarray(b_in, dtype=float)
    n_eq, n_in = len(b_eq), len(b_in)
    if max_iter is None:
        max_iter = 100 + 30 * (n_in + 1)

    if n_eq:
        ls_sol, *_ = np.linalg.lstsq(A_eq, b_eq, rcond=None)
        resid = float(np.max(np.abs(A_eq @ ls_sol - b_eq), initial=0.0))
        if resid > 1e-8 * (1.0 + float(np.max(np.abs(b_eq), initial=0.0))):
            raise InfeasibleSetError("equality system is inconsistent")

    active: list[int] = []
    y = None
    for _ in range(max_iter):
        C = np.vstack([A_eq, A_in[active]]) if (n_eq or active) else np.zeros((0, len(g)))
        d = np.concatenate([b_eq, b_in[active]])
        y, mult, consistent = _solve_kkt(H, g, C, d)
        if not consistent:
            raise InfeasibleSetError("active constraints admit no common point")
        mult_in = mult[n_eq:]
        negative = [active[i] for i in range(len(active)) if mult_in[i] < -_DUAL_TOL]
        if negative:
            active.remove(min(negative))
            continue
        if n_in:
            viol = A_in @ y - b_in
            viol[active] = -np.inf
            worst = int(np.argmax(viol))
            if viol[worst] > _FEAS_TOL:
                active.append(worst)
                active.sort()
                continue
        return y, STATUS_OPTIMAL
    return y, STATUS_ITER_LIMIT


def project_equalities(points: np.ndarray, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto the affine set {A y = b}."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(b) == 0:
        out = pts.copy()
    else:
        gram = A @ A.T
        resid = pts @ A.T - b
        mult = np.linalg.lstsq(gram, resid.T, rcond=None)[0]
        out = pts - mult.T @ A
    return out if np.asarray(points).ndim == 2 else out[0]


def project_simplex_fixed_sum(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {y >= 0, sum(y) = total} via sort-and-threshold."""
    if total < 0:
        raise ValueError("total must be nonnegative")
    v = np.asarray(v, dtype=float).reshape(-1)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, len(v) + 1)
    cond = u - css / ind > 0
    rho = int(np.max(np.nonzero(cond)[0])) + 1 if cond.any() else 1
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def project_capped_simplex(v: np.ndarray, total: float, upper: float) -> np.ndarray:
    """Euclidean projection onto {0 <= y <= upper, sum(y) = total}.

    Accepts a single vector or a matrix of row vectors; rows are projected
    independently. The scalar threshold per row is found by bisection on the
    monotone map tau -> sum(clip(v - tau, 0, upper)), exact to floating point.
    """
    arr = np.atleast_2d(np.asarray(v, dtype=float))
    s = arr.shape[1]
    if total < -1e-12 or total > s * upper + 1e-9:
        raise InfeasibleSetError(f"sum {total} unreachable with {s} coords capped at {upper}")
    if not np.isfinite(upper):
        out = np.vstack([project_simplex_fixed_sum(row, total) for row in arr])
        return out if np.asarray(v).ndim == 2 else out[0]
    lo = arr.min(axis=1) - upper - 1.0
    hi = arr.max(axis=1) + 1.0
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        mass = np.clip(arr - mid[:, None], 0.0, upper).sum(axis=1)
        larger = mass > total
        lo = np.where(larger, mid, lo)
        hi = np.where(larger, hi, mid)
    out = np.clip(arr - (0.5 * (lo + hi))[:, None], 0.0, upper)
    return out if np.asarray(v).ndim == 2 else out[0]


def project_polyhedron(
    point: np.ndarray,
    fset: FeasibleSet,
    extra_ineq=None,
) -> PredictionResult:
    """Euclidean projection of a point onto a convex feasible set.

    The objective reported is the squared distance ||yhat - point||^2; a
    point already inside the set projects to itself. Additional inequality
    rows (coefficients, rhs) may be supplied without copying the set.
    """
    if fset.cardinality is not None:
        raise UnsupportedError("projection requires a convex set; use the cardinality solver")
    point = np.asarray(point, dtype=float).reshape(-1)
    if point.shape != (fset.dim,):
        raise ValueError(f"expected length-{fset.dim} point, got shape {point.shape}")

    if not extra_ineq:
        if check_feasibility(point, fset, tol=_FEAS_TOL).feasible:
            return PredictionResult(point.copy(), 0.0)
        structure = fset.uniform_sum_structure()
        if structure is not None:
            total, upper = structure
            if total < 0:
                raise InfeasibleSetError("fixed sum is negative under nonnegativity")
            y = project_capped_simplex(point, total, upper)
            return PredictionResult(y, float(np.sum((y - point) ** 2)))

    a_in, b_in = fset.inequality_system()
    if extra_ineq:
        a_x = np.asarray([np.asarray(r[0], dtype=float) for r in extra_ineq])
        b_x = np.asarray([float(r[1]) for r in extra_ineq])
        a_in = np.vstack([a_in, a_x])
        b_in = np.concatenate([b_in, b_x])
    y, status = solve_qp_active_set(
        np.eye(fset.dim), point, fset.A_eq, fset.b_eq, a_in, b_in
    )
    return PredictionResult(y, float(np.sum((y - point) ** 2)), status=status)
