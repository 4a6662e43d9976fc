"""Stopping payoffs ("obstacles") for the outer problem.

Each regime yields an obstacle on [0, 1]: the irreversible piecewise-linear
payoff, or max(mu, V_B) with V_B the nested continuation value of keeping
the unknown product under the refined signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    DerivedConstants,
    GaussianSignal,
    Irreversible,
    ModelParams,
    ParameterError,
    PoissonSignal,
    RefinedSignalSpec,
    _power,
    derive_constants,
    exponent_k,
    gaussian_d_b,
    gaussian_q_b,
    poisson_l_tilde,
    poisson_q_b,
)


def g_irreversible(params: ModelParams, q: float) -> float:
    """max(mu, q h + (1-q) l), kinked at p_hat."""
    return max(params.mu, q * params.h + (1.0 - q) * params.l)


def vb_poisson(params: ModelParams, lam: float, r: float, q: float) -> float:
    """Nested value under the truth-revealing Poisson signal: mu - r on
    [0, q_b], then the line q h + (1-q) l_tilde."""
    if not (0.0 < r < params.mu - params.l):
        raise ParameterError(f"return fee must lie in (0, mu - l), got {r}")
    if not lam > 0:
        raise ParameterError(f"Poisson intensity must be positive, got {lam}")
    q_b = poisson_q_b(params, lam, r)
    if q <= q_b:
        return params.mu - r
    l_t = poisson_l_tilde(params, lam, r)
    return q * params.h + (1.0 - q) * l_t


def vb_gaussian(params: ModelParams, sigma_tilde: float, r: float, q: float) -> float:
    """Nested value under the refined Gaussian signal; C^1 at q_b by
    construction and equal to h at q = 1 (the power term vanishes there)."""
    if not (0.0 < r < params.mu - params.l):
        raise ParameterError(f"return fee must lie in (0, mu - l), got {r}")
    if not (0.0 < sigma_tilde <= params.sigma):
        raise ParameterError(
            f"need 0 < sigma_tilde <= sigma, got {sigma_tilde} vs {params.sigma}"
        )
    q_b = gaussian_q_b(params, sigma_tilde, r)
    if q <= q_b:
        return params.mu - r
    k_t = exponent_k(params, sigma_tilde)
    m = 0.5 * (1.0 - k_t)
    d_b = gaussian_d_b(params, sigma_tilde, r)
    return q * params.h + (1.0 - q) * params.l + d_b * _power(q, m) * _power(1.0 - q, 1.0 - m)


def vb_gaussian_slope(params: ModelParams, sigma_tilde: float, r: float, q: float) -> float:
    """Analytic derivative of the ODE branch of the Gaussian nested value."""
    k_t = exponent_k(params, sigma_tilde)
    m = 0.5 * (1.0 - k_t)
    d_b = gaussian_d_b(params, sigma_tilde, r)
    return params.spread + d_b * _power(q, m - 1.0) * _power(1.0 - q, -m) * (m - q)


@dataclass(frozen=True)
class ObstacleFn:
    """Bundles regime, params and derived constants; callable on beliefs."""

    params: ModelParams
    regime: RefinedSignalSpec
    constants: DerivedConstants

    @classmethod
    def create(cls, params: ModelParams, regime: RefinedSignalSpec) -> "ObstacleFn":
        return cls(params=params, regime=regime, constants=derive_constants(params, regime))

    def __call__(self, q: float) -> float:
        return obstacle_eval(self, q)

    def on_grid(self, qs: np.ndarray) -> np.ndarray:
        return np.array([obstacle_eval(self, float(q)) for q in qs])

    def slope(self, q: float) -> float:
        """Right-hand obstacle slope, the smooth-fit target at the upper
        boundary (only meaningful to the right of the crossing point)."""
        p = self.params
        if isinstance(self.regime, Irreversible):
            return p.spread
        if isinstance(self.regime, PoissonSignal):
            return p.h - self.constants.l_tilde
        return vb_gaussian_slope(p, self.regime.sigma_tilde, self.regime.r, q)


def obstacle_eval(ob: ObstacleFn, q: float) -> float:
    """G~(q): irreversible payoff, or max(mu, V_B(q)) in refined regimes."""
    p = ob.params
    if isinstance(ob.regime, Irreversible):
        return g_irreversible(p, q)
    if isinstance(ob.regime, PoissonSignal):
        return max(p.mu, vb_poisson(p, ob.regime.lam, ob.regime.r, q))
    return max(p.mu, vb_gaussian(p, ob.regime.sigma_tilde, ob.regime.r, q))


def crossing_point(ob: ObstacleFn) -> float:
    """Belief where the obstacle switches off its flat mu branch.

    Closed form for the linear regimes; bracketed bisection (abs tol 1e-12)
    on the nested Gaussian value otherwise.  Bisection rather than Newton:
    the power term has unbounded derivative near 0.
    """
    p = ob.params
    if isinstance(ob.regime, Irreversible):
        return p.p_hat
    if isinstance(ob.regime, PoissonSignal):
        l_t = ob.constants.l_tilde
        return (p.mu - l_t) / (p.h - l_t)
    s, r = ob.regime.sigma_tilde, ob.regime.r
    lo = ob.constants.q_b
    hi = 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if vb_gaussian(p, s, r, mid) <= p.mu:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)
