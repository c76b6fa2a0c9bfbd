"""Gradient projection by non-negative quadratic programming.

Multi-constraint projection: find the update direction closest to the
new-data gradient ``g`` that has a non-negative inner product with every
reference (memory) gradient.  It is solved through its dual,

    min_v  1/2 v^T (G G^T) v + (G g)^T v   s.t.  v >= 0,

with the primal recovered as ``w = G^T v + g``.  ``G`` stacks the reference
gradients as rows, so the dual has one coordinate per constraint.

Single-constraint projection: one reference ``r`` and an optional slack
``xi`` (``<w, r> >= -xi``) give a scalar dual with a closed-form solution

    v = max(0, -(<g, r> + xi) / <r, r>),   w = v r + g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonConvergence, ZeroNormReference


@dataclass(frozen=True)
class QpConfig:
    tolerance: float = 1e-10
    max_iterations: int = 10_000
    slack: float = 0.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.slack >= 0:
            raise ValueError("slack must be non-negative")


@dataclass(frozen=True)
class DualSolution:
    coefficients: np.ndarray
    objective: float
    iterations: int
    converged: bool


def _as_grad(x, name="gradient") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty flat vector")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def kkt_residual(gram, linear, v) -> float:
    """Largest violation among v >= 0, Av + b >= 0 and v * (Av + b) = 0."""
    grad = gram @ v + linear
    return float(
        max(
            np.max(np.maximum(-v, 0.0)),
            np.max(np.maximum(-grad, 0.0)),
            np.max(np.abs(v * grad)),
        )
    )


def kkt_scale(gram, linear, v) -> float:
    """Magnitude of the terms in ``Av + b``; rounding error grows with it."""
    return float(max(1.0, np.max(np.abs(gram)) * np.max(np.abs(v)) + np.max(np.abs(linear))))


def rounding_floor(gram, linear, v) -> float:
    """Smallest KKT residual double precision can certify at this scale."""
    k = len(linear)
    return 8.0 * k * np.finfo(np.float64).eps * kkt_scale(gram, linear, v) * max(1.0, float(np.max(v)))


def _converged(gram, linear, v, tol) -> bool:
    return kkt_residual(gram, linear, v) <= max(tol, rounding_floor(gram, linear, v))


def _dual_objective(gram, linear, v):
    return float(0.5 * v @ gram @ v + linear @ v)


def _free_solve(gram, linear, free):
    z = np.zeros(len(linear))
    if free.any():
        z[free] = np.linalg.lstsq(gram[np.ix_(free, free)], -linear[free], rcond=None)[0]
    return z


def _active_set_finish(gram, linear, free, max_rounds):
    """Finite active-set solve warm-started from a guessed free set.

    Lawson-Hanson style: solve the equality system on the free set, step
    back toward feasibility whenever a free coordinate would go negative,
    then release the closed coordinate with the most negative gradient.  A
    released coordinate that comes straight back non-positive (rounding on a
    rank-deficient free set) is blocked until the iterate next changes.
    Returns ``None`` if the round budget runs out.
    """
    v = np.zeros(len(linear))
    free = free.copy()
    blocked = np.zeros_like(free)
    for _ in range(max_rounds):
        while True:
            z = _free_solve(gram, linear, free)
            bad = free & (z <= 0)
            if not bad.any():
                v = z
                break
            alpha = np.min(v[bad] / (v[bad] - z[bad]))
            v = v + alpha * (z - v)
            free &= v > 0
            v[~free] = 0.0
        grad = gram @ v + linear
        floor = rounding_floor(gram, linear, v)
        candidates = ~free & ~blocked & (grad < -floor)
        if not candidates.any():
            return v
        j = int(np.argmin(np.where(candidates, grad, np.inf)))
        free[j] = True
        z = _free_solve(gram, linear, free)
        if z[j] <= 0:
            free[j] = False
            blocked[j] = True
        else:
            blocked[:] = False
    return None


def solve_nonneg_qp(gram, linear, cfg: QpConfig | None = None) -> DualSolution:
    """Minimize 1/2 v^T A v + b^T v over v >= 0 for symmetric PSD ``A``.

    Projected cyclic coordinate descent with exact per-coordinate line
    minimization.  After each sweep the iterate is checked against the KKT
    conditions, and a finite active-set solve warm-started from the current
    free set is tried; coordinate descent usually identifies the right
    active set long before it converges to tight tolerances on it.

    The residual test is absolute (``cfg.tolerance``) unless rounding at the
    problem's scale makes that uncertifiable, see :func:`rounding_floor`.

    Raises
    ------
    DimensionMismatch
        If ``gram`` is not square or does not match ``linear``.
    NonConvergence
        If the KKT residual is still above ``cfg.tolerance`` (relative to
        :func:`kkt_scale`) after ``cfg.max_iterations`` sweeps.
    """
    cfg = cfg or QpConfig()
    A = np.atleast_2d(np.asarray(gram, dtype=np.float64))
    b = np.atleast_1d(np.asarray(linear, dtype=np.float64))
    k = b.shape[0]
    if A.shape != (k, k) or k < 1 or b.ndim != 1:
        raise DimensionMismatch(f"gram {A.shape} does not match linear term {b.shape}")

    diag = np.diag(A).copy()
    v = np.zeros(k)
    grad = b.copy()
    if _converged(A, b, v, cfg.tolerance):
        return DualSolution(v, 0.0, 0, True)

    for it in range(1, cfg.max_iterations + 1):
        for i in range(k):
            if diag[i] <= 0.0:
                if grad[i] < 0.0:
                    raise NonConvergence(
                        f"dual unbounded below along coordinate {i}", iterations=it
                    )
                continue
            new = max(0.0, v[i] - grad[i] / diag[i])
            delta = new - v[i]
            if delta != 0.0:
                v[i] = new
                grad += delta * A[:, i]
        # refresh to keep rounding from accumulating in the running gradient
        grad = A @ v + b
        # warm start from the CD free set; a cold start copes with free sets
        # that hold nearly dependent constraints
        for start in (v > 0, np.zeros(k, dtype=bool)):
            cand = _active_set_finish(A, b, start, max_rounds=3 * k + 10)
            if cand is not None and _converged(A, b, cand, cfg.tolerance):
                if kkt_residual(A, b, cand) <= kkt_residual(A, b, v):
                    return DualSolution(cand, _dual_objective(A, b, cand), it, True)
        if _converged(A, b, v, cfg.tolerance):
            return DualSolution(v, _dual_objective(A, b, v), it, True)

    residual = kkt_residual(A, b, v)
    raise NonConvergence(
        f"KKT residual {residual:.3e} above tolerance {cfg.tolerance:.1e} "
        f"after {cfg.max_iterations} sweeps",
        residual=residual,
        iterations=cfg.max_iterations,
    )


def project_multi(g, refs, cfg: QpConfig | None = None) -> np.ndarray:
    """Closest direction to ``g`` with ``<w, r_i> >= 0`` for every reference."""
    cfg = cfg or QpConfig()
    g = _as_grad(g, "g")
    if len(refs) == 0:
        raise DimensionMismatch("at least one reference gradient is required")
    G = np.stack([_as_grad(r, "reference") for r in refs])
    if G.shape[1] != g.shape[0]:
        raise DimensionMismatch(f"references have length {G.shape[1]}, g has {g.shape[0]}")
    if np.any(np.linalg.norm(G, axis=1) == 0.0):
        raise ZeroNormReference("reference gradient has zero norm")

    Gg = G @ g
    if np.all(Gg >= 0.0):
        return g
    sol = solve_nonneg_qp(G @ G.T, Gg, cfg)
    return G.T @ sol.coefficients + g


def single_dual(g, ref, slack: float = 0.0) -> float:
    """Closed-form scalar dual of the one-constraint projection."""
    g = _as_grad(g, "g")
    ref = _as_grad(ref, "reference")
    if ref.shape != g.shape:
        raise DimensionMismatch(f"reference has length {ref.shape[0]}, g has {g.shape[0]}")
    rr = float(ref @ ref)
    if rr == 0.0:
        raise ZeroNormReference("reference gradient has zero norm")
    return max(0.0, -(float(g @ ref) + slack) / rr)


def project_single(g, ref, cfg: QpConfig | None = None) -> np.ndarray:
    """``v * ref + g`` with the scalar dual ``v`` from :func:`single_dual`."""
    cfg = cfg or QpConfig()
    v = single_dual(g, ref, cfg.slack)
    g = np.asarray(g, dtype=np.float64)
    if v == 0.0:
        return g
    return v * np.asarray(ref, dtype=np.float64) + g
