"""Finite-difference solver for the outer variational inequality.

Discretizes  min(rho V - a(q) V'' + C(q), V - G) = 0  on a uniform grid
with a(q) = (1/2)((h-l)/sigma)^2 q^2 (1-q)^2 and central second
differences.  The degenerate coefficient vanishes at the endpoints, which
pins the boundary rows to the obstacle (q = 0, 1 are absorbing states).

The default algorithm is policy iteration (Howard): each sweep solves a
tridiagonal system over the current continuation set and re-classifies
nodes; it terminates in finitely many sweeps on this monotone scheme.  A
projected Gauss-Seidel (PSOR) fallback is selectable through the options.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded

from .model import CostSpec, ModelParams, ParameterError, cost_eval
from .obstacles import ObstacleFn


@dataclass(frozen=True)
class Grid:
    """Uniform grid with nodes i/n, i = 0..n."""

    n: int = 4000

    def __post_init__(self):
        if self.n < 16:
            raise ParameterError(f"grid needs at least 16 intervals, got {self.n}")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def dq(self) -> float:
        return 1.0 / self.n


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 200
    method: str = "policy"  # "policy" or "psor"
    psor_omega: float = 1.6
    psor_max_sweeps: int = 200_000


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, last_residual: float):
        super().__init__(f"{msg} (last residual {last_residual:.3e})")
        self.last_residual = last_residual


@dataclass
class ViSolution:
    grid: Grid
    values: np.ndarray
    obstacle: np.ndarray
    q_lo: Optional[float]
    q_hi: Optional[float]
    pde_residual_sup: float
    complementarity_gap: float
    iterations: int
    assumption_flags: dict = field(default_factory=dict)
    # coefficients kept for a posteriori residual recomputation
    _diffusion: np.ndarray = None
    _cost: np.ndarray = None
    _rho: float = 0.0
    contact_tol: float = 0.0


def _second_difference(v: np.ndarray, dq: float) -> np.ndarray:
    # nested differences: adjacent node values are close, so the inner
    # subtractions are exact and the cancellation error of the naive
    # three-term form (~ulp(v)/dq^2) is avoided
    fwd = v[2:] - v[1:-1]
    bwd = v[1:-1] - v[:-2]
    return (fwd - bwd) / dq**2


def _residuals(sol: ViSolution) -> Tuple[np.ndarray, np.ndarray]:
    """Interior-node PDE residual and V - G, both as arrays."""
    v, g = sol.values, sol.obstacle
    dq = sol.grid.dq
    d2 = _second_difference(v, dq)
    r_pde = sol._rho * v[1:-1] - sol._diffusion[1:-1] * d2 + sol._cost[1:-1]
    return r_pde, v - g


def solve_vi(
    params: ModelParams,
    cost: CostSpec,
    ob: ObstacleFn,
    grid: Grid = Grid(),
    opts: SolverOptions = SolverOptions(),
) -> ViSolution:
    """Solve the discrete obstacle problem and extract the free boundaries.

    Discrete complementarity at every interior node: either the operator
    residual vanishes (within opts.tol) and V >= G, or V = G and the
    residual is >= -opts.tol.
    """
    if params.sigma == 0:
        raise ParameterError("sigma = 0: use model.degenerate_value, no PDE to solve")

    qs = grid.nodes
    n = grid.n
    dq = grid.dq
    a = 0.5 * (params.spread / params.sigma) ** 2 * qs**2 * (1.0 - qs) ** 2
    c = np.array([cost_eval(cost, params, float(q)) for q in qs])
    g = ob.on_grid(qs)
    rho = params.rho

    flags = {}
    if getattr(cost, "violates_lower_bound", False):
        flags["cost_lower_bound_violated"] = True

    if opts.method == "policy":
        v, iters = _solve_multilevel(params, cost, ob, grid, opts)
    elif opts.method == "psor":
        v, iters = _solve_psor(rho, a, c, g, dq, opts)
    else:
        raise ParameterError(f"unknown solver method {opts.method!r}")

    # contact nodes sit exactly on the obstacle; clip roundoff below it
    v = np.maximum(v, g)
    v[0], v[-1] = g[0], g[-1]

    contact_tol = 1e-7 * params.spread
    sol = ViSolution(
        grid=grid, values=v, obstacle=g, q_lo=None, q_hi=None,
        pde_residual_sup=0.0, complementarity_gap=0.0, iterations=iters,
        assumption_flags=flags, _diffusion=a, _cost=c, _rho=rho,
        contact_tol=contact_tol,
    )
    sup, gap = pde_residual(sol)
    sol.pde_residual_sup = sup
    sol.complementarity_gap = gap
    sol.q_lo, sol.q_hi = extract_boundaries(sol, contact_tol)
    return sol


def _solve_multilevel(params, cost, ob, grid, opts) -> Tuple[np.ndarray, int]:
    """Policy iteration with a coarse-to-fine warm start.

    The exploration set only advances one node per sweep from a poor
    initial guess, so a cold start on a fine grid needs O(n) sweeps.
    Solving on a dyadically coarsened ladder first and seeding each
    finer level's active set from the coarser boundaries keeps every
    level down to a handful of sweeps.
    """
    sizes = [grid.n]
    while sizes[-1] > 500 and sizes[-1] % 2 == 0:
        sizes.append(sizes[-1] // 2)
    sizes.reverse()

    coef = 0.5 * (params.spread / params.sigma) ** 2
    active = None
    total = 0
    for level, n in enumerate(sizes):
        qs = np.linspace(0.0, 1.0, n + 1)
        dq = 1.0 / n
        a = coef * qs**2 * (1.0 - qs) ** 2
        c = np.array([cost_eval(cost, params, float(q)) for q in qs])
        g = ob.on_grid(qs)
        if active is None:
            active = _kink_seed(g, n)
            max_iter = 2 * n + 100
        else:
            max_iter = opts.max_iter
        v, active, iters = _solve_policy(
            params.rho, a, c, g, dq, active, max_iter
        )
        total += iters
        if n != sizes[-1]:
            active = _prolong_active(active, n)
    return v, total


def _kink_seed(g, n) -> np.ndarray:
    """Initial active set: the interior nodes around the obstacle kink."""
    flat = g <= g[0] + 1e-12 * max(1.0, abs(g[0]))
    kink = int(np.flatnonzero(flat)[-1]) if flat.any() else n // 2
    kink = min(max(kink, 1), n - 1)
    active = np.zeros(n - 1, dtype=bool)
    active[max(kink - 2, 0) : min(kink + 1, n - 1)] = True
    return active


def _prolong_active(active, n) -> np.ndarray:
    """Map a coarse active set to the twice-finer grid, padded two cells."""
    fine = np.zeros(2 * n - 1, dtype=bool)
    idx = np.flatnonzero(active)
    if idx.size:
        lo = 2 * (int(idx[0]) + 1)  # coarse node -> fine node number
        hi = 2 * (int(idx[-1]) + 1)
        fine[max(lo - 2 - 1, 0) : min(hi + 2, 2 * n - 1)] = True
    else:
        fine[2 * (n // 2) - 1] = True
    return fine


def _solve_policy(
    rho, a, c, g, dq, active, max_iter
) -> Tuple[np.ndarray, np.ndarray, int]:
    n = len(g) - 1
    interior = slice(1, n)
    off = a[1:n] / dq**2
    diag = rho + 2.0 * off

    v = g.copy()
    prev = None
    last_gap = np.inf
    for it in range(1, max_iter + 1):
        v = _solve_linear(rho, off, c, g, active, dq, n)
        d2 = _second_difference(v, dq)
        r_pde = rho * v[interior] - a[interior] * d2 + c[interior]
        r_obs = v[interior] - g[interior]
        # compare the PDE row scaled by its diagonal so both branches are
        # in value units; picks the smaller (more violated) branch per node
        new_active = r_pde / diag <= r_obs
        last_gap = float(np.max(np.abs(np.minimum(r_pde / diag, r_obs))))
        if np.array_equal(new_active, active):
            return v, active, it
        if prev is not None and np.array_equal(new_active, prev):
            # two-cycle: a single node hovers exactly on the obstacle;
            # either policy satisfies complementarity to roundoff
            return v, active, it
        prev = active
        active = new_active
    raise ConvergenceError("policy iteration did not converge", last_gap)


def _solve_linear(rho, off, c, g, active, dq, n) -> np.ndarray:
    """Tridiagonal solve with PDE rows on the active set, V = G elsewhere."""
    # row i (interior): (rho + 2 off_i) v_i - off_i v_{i-1} - off_i v_{i+1} = -c_i
    diag = np.empty(n + 1)
    lower = np.zeros(n + 1)
    upper = np.zeros(n + 1)
    rhs = np.empty(n + 1)

    diag[0] = diag[n] = 1.0
    rhs[0], rhs[n] = g[0], g[n]

    idx = np.arange(1, n)
    diag[idx] = np.where(active, rho + 2.0 * off, 1.0)
    lower[idx] = np.where(active, -off, 0.0)
    upper[idx] = np.where(active, -off, 0.0)
    rhs[idx] = np.where(active, -c[idx], g[idx])

    ab = np.zeros((3, n + 1))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    v = solve_banded((1, 1), ab, rhs)
    # iterative refinement: the raw solve's backward error
    # (~eps * ||A|| * ||v||, with ||A|| ~ a/dq^2) is too large for the
    # unscaled complementarity check downstream.  The residual is grouped
    # so the huge off-diagonal terms cancel exactly before any rounding.
    for _ in range(2):
        res = np.zeros(n + 1)
        fwd = v[2:] - v[1:-1]
        bwd = v[:-2] - v[1:-1]
        r_act = -c[idx] - rho * v[idx] + off * (fwd + bwd)
        res[idx] = np.where(active, r_act, g[idx] - v[idx])
        v = v + solve_banded((1, 1), ab, res)
    return v


def _solve_psor(rho, a, c, g, dq, opts) -> Tuple[np.ndarray, int]:
    n = len(g) - 1
    v = g.copy()
    off = a / dq**2
    omega = opts.psor_omega
    for sweep in range(1, opts.psor_max_sweeps + 1):
        delta = 0.0
        for i in range(1, n):
            gs = (off[i] * (v[i - 1] + v[i + 1]) - c[i]) / (rho + 2.0 * off[i])
            new = max(g[i], v[i] + omega * (gs - v[i]))
            delta = max(delta, abs(new - v[i]))
            v[i] = new
        if delta < opts.tol * max(1.0, float(np.max(np.abs(g)))):
            return v, sweep
    raise ConvergenceError("PSOR did not converge", delta)


def extract_boundaries(
    sol: ViSolution, contact_tol: Optional[float] = None
) -> Tuple[float, float]:
    """Free boundaries from the contact set.

    Returns midpoints between the last contact node and first exploration
    node from below (q_lo) and symmetrically from above (q_hi).  Verifies
    that the contact set is two connected boundary intervals; an empty
    exploration region signals pure stopping with q_lo = q_hi at the
    obstacle kink.
    """
    if contact_tol is None:
        contact_tol = sol.contact_tol
    qs = sol.grid.nodes
    free = (sol.values - sol.obstacle) > contact_tol
    idx = np.flatnonzero(free)
    if idx.size == 0:
        from .obstacles import crossing_point  # avoid cycle at import time

        # try to locate the kink from the obstacle itself
        kink = _obstacle_kink(sol)
        return kink, kink
    first, last = int(idx[0]), int(idx[-1])
    if not np.all(free[first : last + 1]):
        raise RuntimeError("exploration region is not connected; refine the grid")
    q_lo = 0.5 * (qs[first - 1] + qs[first]) if first > 0 else qs[0]
    q_hi = 0.5 * (qs[last] + qs[last + 1]) if last < len(qs) - 1 else qs[-1]
    return float(q_lo), float(q_hi)


def _obstacle_kink(sol: ViSolution) -> float:
    g = sol.obstacle
    qs = sol.grid.nodes
    flat = g <= g[0] + 1e-12 * max(1.0, abs(g[0]))
    i = int(np.flatnonzero(flat)[-1]) if flat.any() else 0
    return float(qs[i])


def pde_residual(sol: ViSolution) -> Tuple[float, float]:
    """Recompute (sup-norm PDE residual on the exploration set,
    complementarity gap over all interior nodes) from scratch."""
    r_pde, vg = _residuals(sol)
    free = vg[1:-1] > sol.contact_tol
    sup = float(np.max(np.abs(r_pde[free]))) if free.any() else 0.0
    gap = float(np.max(np.abs(np.minimum(r_pde, vg[1:-1]))))
    return sup, gap
