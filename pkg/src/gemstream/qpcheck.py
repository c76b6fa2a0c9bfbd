"""Brute-force oracles and the randomized self-check behind ``gemstream qp-check``.

The oracles deliberately share no code with :mod:`gemstream.qp`: the primal
oracle searches a grid in the original (primal) variable, and the dual
oracle enumerates active sets of the KKT system.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .qp import QpConfig, kkt_residual, project_multi, solve_nonneg_qp


def enumerate_active_sets(gram, linear) -> np.ndarray:
    """Exact minimizer of 1/2 v^T A v + b^T v, v >= 0, for small k.

    Tries every free set F, solves A_FF v_F = -b_F, keeps KKT-feasible
    candidates and returns the one with the lowest objective.
    """
    A = np.asarray(gram, dtype=np.float64)
    b = np.asarray(linear, dtype=np.float64)
    k = b.shape[0]
    best, best_obj = None, np.inf
    for mask in itertools.product([False, True], repeat=k):
        free = np.array(mask)
        v = np.zeros(k)
        if free.any():
            sol, *_ = np.linalg.lstsq(A[np.ix_(free, free)], -b[free], rcond=None)
            v[free] = sol
        if np.any(v < -1e-12):
            continue
        grad = A @ v + b
        if np.any(grad[~free] < -1e-9):
            continue
        obj = 0.5 * v @ A @ v + b @ v
        if obj < best_obj:
            best, best_obj = np.maximum(v, 0.0), obj
    return best


def _aligned_basis(R):
    """Rows: unit normals of a maximal independent subset of constraints, then
    an orthonormal basis of their common null space."""
    d = R.shape[1]
    chosen = []
    for r in R:
        trial = chosen + [r / np.linalg.norm(r)]
        if len(trial) <= d and np.linalg.matrix_rank(np.stack(trial), tol=1e-9) == len(trial):
            chosen = trial
    C = np.stack(chosen)
    _, _, vt = np.linalg.svd(C)
    return np.vstack([C, vt[len(chosen):]]), len(chosen)


def grid_projection(g, refs, levels: int = 30, points: int = 21, shrink: float = 0.3):
    """Feasible minimizer of ||w - g||^2 subject to <w, r_i> >= 0, by grid search.

    The grid lives in constraint-aligned coordinates ``u = T w`` whose first
    coordinates are ``<w, r_i / ||r_i||>``, so the feasible region is an
    orthant and its boundary falls exactly on grid points.  Each level
    re-centres a smaller grid on the best feasible point found so far.
    Returns ``(w, ||w - g||^2)``.  Only practical for dim <= 3.
    """
    g = np.asarray(g, dtype=np.float64)
    R = np.stack([np.asarray(r, dtype=np.float64) for r in refs])
    norms = np.linalg.norm(R, axis=1)
    d = g.shape[0]
    T, m = _aligned_basis(R)
    T_inv = np.linalg.inv(T)

    def feasible(W):
        lim = -1e-12 * np.linalg.norm(W, axis=1, keepdims=True) * norms
        return np.all(W @ R.T >= lim, axis=1)

    best_u = np.zeros(d)
    best_obj = float(g @ g)
    half = np.linalg.norm(T, 2) * np.linalg.norm(g) + 1e-3
    for _ in range(levels):
        axes = []
        for j in range(d):
            lo = best_u[j] - half
            if j < m:
                lo = max(0.0, lo)
            axes.append(np.linspace(lo, best_u[j] + half, points))
        U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        W = U @ T_inv.T
        ok = feasible(W)
        if ok.any():
            obj = np.sum((W[ok] - g) ** 2, axis=1)
            i = int(np.argmin(obj))
            if obj[i] < best_obj:
                best_u, best_obj = U[ok][i], float(obj[i])
        half *= shrink
    return T_inv @ best_u, best_obj


@dataclass
class CheckReport:
    trials: int
    max_kkt_residual: float = 0.0
    max_optimality_gap: float = 0.0
    min_constraint_slack: float = np.inf
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def random_instance(rng, max_dim, max_refs):
    d = int(rng.integers(1, max_dim + 1))
    k = int(rng.integers(1, max_refs + 1))
    return rng.standard_normal(d), [rng.standard_normal(d) for _ in range(k)]


def run_checks(
    trials: int,
    seed: int,
    projector=project_multi,
    cfg: QpConfig | None = None,
    gap_tol: float = 1e-4,
    feas_tol: float = 1e-8,
    kkt_tol: float = 1e-8,
) -> CheckReport:
    """Randomized oracle suite over ``trials`` instances of each kind.

    * small instances (dim <= 3, <= 2 constraints): optimality gap against
      :func:`grid_projection`
    * larger instances (dim <= 16, <= 5 constraints): every constraint holds
      and the dual solution satisfies KKT
    """
    cfg = cfg or QpConfig()
    rng = np.random.default_rng(seed)
    report = CheckReport(trials)

    for i in range(trials):
        g, refs = random_instance(rng, 3, 2)
        w = np.asarray(projector(g, refs, cfg))
        obj = float(np.sum((w - g) ** 2))
        _, ref_obj = grid_projection(g, refs)
        gap = abs(obj - ref_obj)
        slack = min(float(w @ r) for r in refs)
        report.max_optimality_gap = max(report.max_optimality_gap, gap)
        report.min_constraint_slack = min(report.min_constraint_slack, slack)
        if gap > gap_tol or slack < -feas_tol:
            report.failures.append(
                {"suite": "optimality", "trial": i, "g": g.tolist(),
                 "refs": [r.tolist() for r in refs], "gap": gap, "slack": slack}
            )

    for i in range(trials):
        g, refs = random_instance(rng, 16, 5)
        w = np.asarray(projector(g, refs, cfg))
        slack = min(float(w @ r) for r in refs)
        G = np.stack(refs)
        A, b = G @ G.T, G @ g
        res = 0.0
        if np.any(b < 0):
            res = kkt_residual(A, b, solve_nonneg_qp(A, b, cfg).coefficients)
        report.max_kkt_residual = max(report.max_kkt_residual, res)
        report.min_constraint_slack = min(report.min_constraint_slack, slack)
        if slack < -feas_tol or res > kkt_tol:
            report.failures.append(
                {"suite": "feasibility", "trial": i, "g": g.tolist(),
                 "refs": [r.tolist() for r in refs], "slack": slack, "kkt": res}
            )
    return report
