"""Saturated ramp-metering feedback driven by a parameter estimate.

Each controlled on-ramp admits its nominal inflow while the freeway sits at
or below the estimated equilibrium, and is throttled linearly towards its
minimum ``b_i`` as the weighted overshoot

    Xi(x) = sum_i sigma^i max(0, x_i - x_hat*_i)

grows, reaching ``b_i`` once ``Xi >= tau``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import EquilibriumSpec, InfeasibleError, estimated_equilibrium
from .theta import ThetaEstimate

DEFAULT_SIGMA = 0.5
DEFAULT_TAU_FRACTION = 0.9


def tau_bound(eq: EquilibriumSpec, sigma: float) -> float:
    """Largest gain parameter for which any excursion outside the free-flow box saturates every ramp."""
    R = list(eq.R)
    spread = np.max(eq.v_max[R] - eq.b)
    return eq.epsilon ** 2 * sigma ** eq.n / spread


@dataclass(frozen=True)
class ControllerConfig:
    sigma: float
    tau: float
    b: np.ndarray
    R: tuple[int, ...]

    @classmethod
    def build(cls, eq: EquilibriumSpec, sigma: float = DEFAULT_SIGMA, tau: float | None = None,
              tau_fraction: float = DEFAULT_TAU_FRACTION) -> "ControllerConfig":
        """Validated controller settings; ``tau`` defaults to ``tau_fraction`` of the bound."""
        if not 0.0 < sigma <= 1.0:
            raise InfeasibleError(f"sigma must lie in (0, 1], got {sigma}")
        limit = tau_bound(eq, sigma)
        if tau is None:
            if not 0.0 < tau_fraction <= 1.0:
                raise InfeasibleError(f"tau_fraction must lie in (0, 1], got {tau_fraction}")
            tau = tau_fraction * limit
        if not 0.0 < tau <= limit:
            raise InfeasibleError(f"tau = {tau:.6g} outside (0, {limit:.6g}]")
        return cls(sigma=float(sigma), tau=float(tau), b=eq.b.copy(), R=eq.R)


def xi(x, x_hat_star, sigma: float) -> float:
    """Weighted overshoot of ``x`` above the estimated equilibrium."""
    x = np.asarray(x, dtype=float)
    weights = sigma ** np.arange(1, x.size + 1)
    return float(np.sum(weights * np.maximum(0.0, x - np.asarray(x_hat_star))))


def control_law(v_hat_R: np.ndarray, overshoot: float, cfg: ControllerConfig) -> np.ndarray:
    return np.maximum(cfg.b, v_hat_R - (v_hat_R - cfg.b) * overshoot / cfg.tau)


def control(theta: ThetaEstimate, x, eq: EquilibriumSpec, cfg: ControllerConfig) -> np.ndarray:
    """Controlled inflows for cells in ``R`` (ordered like ``R``)."""
    x_hat, v_hat_R = estimated_equilibrium(theta, eq)
    return control_law(v_hat_R, xi(x, x_hat, cfg.sigma), cfg)
