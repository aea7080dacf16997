"""Uncongested equilibrium, its feasibility, and the estimate-driven target.

At an uncongested equilibrium every cell runs in free flow, so the flow
through cell ``i`` equals ``r_i x*_i`` and obeys the chain recursion

    r_i x*_i = v*_i + (1 - P_{i-1}) r_{i-1} x*_{i-1}.

The controller never sees the true parameters. It rebuilds the equilibrium
from an estimate, choosing the controlled inflows with :func:`select_g` and
capping each target occupancy at ``mu_i - eps``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .plant import DomainError, FreewayParams, Output, step
from .theta import ThetaBox, ThetaEstimate

log = logging.getLogger(__name__)

STRICT_MARGIN = 1e-9


class InfeasibleError(DomainError):
    """A configuration violates one of the equilibrium design inequalities."""


@dataclass(frozen=True)
class CellCheck:
    cell: int  # 1-based label
    load: float
    bound: float
    binding: str
    ok: bool


@dataclass(frozen=True)
class FeasibilityReport:
    cells: tuple[CellCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.cells)

    def failures(self) -> list[CellCheck]:
        return [c for c in self.cells if not c.ok]

    def __str__(self) -> str:
        lines = []
        for c in self.cells:
            mark = "ok  " if c.ok else "FAIL"
            lines.append(
                f"{mark} cell {c.cell}: load {c.load:.6g} < {c.bound:.6g} ({c.binding})"
            )
        return "\n".join(lines)


def chain_flows(v: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Free-flow throughput of every cell: ``F_i = v_i + (1 - P_{i-1}) F_{i-1}``."""
    flows = np.empty_like(v, dtype=float)
    flows[0] = v[0]
    for i in range(1, v.size):
        flows[i] = v[i] + (1.0 - P[i - 1]) * flows[i - 1]
    return flows


def check_feasibility(params: FreewayParams, v_star) -> FeasibilityReport:
    """Check that ``v_star`` admits an uncongested equilibrium, cell by cell."""
    v_star = np.asarray(v_star, dtype=float)
    if v_star.shape != (params.n,) or np.any(v_star < 0):
        raise DomainError("v_star must hold n non-negative inflows")
    if v_star[0] <= 0:
        raise DomainError("v_star[0] must be strictly positive")
    loads = chain_flows(v_star, params.P)
    cells = []
    for i in range(params.n):
        candidates = {
            "capacity q": params.q[i],
            "congested supply c*(a-delta)": params.c[i] * (params.a[i] - params.delta[i]),
            "critical demand r*delta": params.r[i] * params.delta[i],
        }
        binding = min(candidates, key=candidates.get)
        bound = candidates[binding]
        ok = loads[i] + STRICT_MARGIN < bound
        cells.append(CellCheck(i + 1, float(loads[i]), float(bound), binding, bool(ok)))
    return FeasibilityReport(tuple(cells))


def equilibrium_from_inflows(params: FreewayParams, v_star) -> np.ndarray:
    """Uncongested equilibrium occupancies for nominal inflows ``v_star``."""
    report = check_feasibility(params, v_star)
    if not report.ok:
        bad = report.failures()[0]
        raise InfeasibleError(
            f"inflows infeasible at cell {bad.cell}: load {bad.load:.6g} "
            f"not below {bad.bound:.6g} ({bad.binding})"
        )
    return chain_flows(np.asarray(v_star, dtype=float), params.P) / params.r


@dataclass(frozen=True)
class EquilibriumSpec:
    """Design data of the regulation problem.

    ``v_star`` and ``x_star`` are the true nominal inflows and equilibrium;
    they are used for validation and for measuring residuals, never by the
    controller. ``b`` and ``target_density`` are aligned with ``R``.
    """

    n: int
    R: tuple[int, ...]
    epsilon: float
    v_star: np.ndarray
    x_star: np.ndarray
    mu: np.ndarray
    v_max: np.ndarray
    b: np.ndarray
    target_density: np.ndarray
    uncontrolled: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "uncontrolled", tuple(i for i in range(self.n) if i not in self.R)
        )

    @property
    def theta_box(self) -> ThetaBox:
        return ThetaBox(self.n, self.epsilon, self.v_max[list(self.uncontrolled)])

    @property
    def caps(self) -> np.ndarray:
        """Upper bounds ``mu_i - eps`` on the estimated equilibrium."""
        return self.mu - self.epsilon


def omega_caps_report(params: FreewayParams, mu, v_max) -> list[str]:
    """Violations of the free-flow region caps, empty when they all hold."""
    problems = []
    sup = np.minimum(params.q, params.c * (params.a - mu))
    if not v_max[0] + STRICT_MARGIN < sup[0]:
        problems.append(f"cell 1: v_max {v_max[0]:.6g} not below supply {sup[0]:.6g} at mu")
    for i in range(1, params.n):
        load = v_max[i] + (1.0 - params.P[i - 1]) * params.r[i - 1] * mu[i - 1]
        if not load + STRICT_MARGIN < sup[i]:
            problems.append(
                f"cell {i + 1}: v_max + upstream flow {load:.6g} not below supply {sup[i]:.6g} at mu"
            )
    return problems


def build_equilibrium(
    params: FreewayParams,
    mu,
    v_max,
    b,
    target_density=None,
) -> EquilibriumSpec:
    """Validate the design constants and assemble an :class:`EquilibriumSpec`.

    Raises :class:`InfeasibleError` on any violated constraint; nothing is
    adjusted silently.
    """
    n, eps, R = params.n, params.epsilon, params.R
    mu = np.asarray(mu, dtype=float).reshape(-1)
    v_max = np.asarray(v_max, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if mu.shape != (n,) or v_max.shape != (n,):
        raise DomainError("mu and v_max need n entries")
    if b.shape != (len(R),):
        raise DomainError(f"b needs one entry per controlled cell ({len(R)})")

    x_star = equilibrium_from_inflows(params, params.v_star)
    problems = []
    if np.any(mu <= 0) or np.any(mu >= params.delta):
        problems.append("mu must lie in (0, delta)")
    if np.any(v_max <= 0):
        problems.append("v_max must be positive")
    problems += omega_caps_report(params, mu, v_max)
    for i in range(n):
        if x_star[i] > mu[i] - eps:
            problems.append(f"cell {i + 1}: x* = {x_star[i]:.6g} exceeds mu - eps = {mu[i] - eps:.6g}")
        if params.v_star[i] > v_max[i]:
            problems.append(f"cell {i + 1}: v* = {params.v_star[i]:.6g} exceeds v_max")
    for k, i in enumerate(R):
        if not 0.0 < b[k] < params.v_star[i]:
            problems.append(f"cell {i + 1}: b = {b[k]:.6g} not in (0, v*)")
        if params.v_star[i] < b[k] + eps:
            problems.append(f"cell {i + 1}: v* = {params.v_star[i]:.6g} below b + eps")
    if problems:
        raise InfeasibleError("; ".join(problems))

    if target_density is None:
        target = x_star[list(R)].copy()
    else:
        target = np.asarray(target_density, dtype=float).reshape(-1)
        if target.shape != (len(R),):
            raise DomainError("target_density needs one entry per controlled cell")

    slack = float(np.min(mu - eps - x_star))
    if slack < 1e-3:
        log.warning("equilibrium within %.3g of the mu - eps caps; set A neighbourhood is thin", slack)

    return EquilibriumSpec(
        n=n, R=R, epsilon=eps, v_star=params.v_star.copy(), x_star=x_star,
        mu=mu, v_max=v_max, b=b, target_density=target,
    )


def select_g(P_hat, v_hat_uncontrolled, r_hat, eq: EquilibriumSpec) -> np.ndarray:
    """Nominal controlled inflows implied by an estimate (target-density mode).

    Walks the chain from upstream to downstream; at each controlled cell the
    inflow is whatever lifts the estimated throughput to ``r_hat_i * target_i``,
    clamped to ``[b_i + eps, v_max_i]``.
    """
    P_hat = np.asarray(P_hat, dtype=float)
    r_hat = np.asarray(r_hat, dtype=float)
    v_unc = dict(zip(eq.uncontrolled, np.asarray(v_hat_uncontrolled, dtype=float)))
    out = np.empty(len(eq.R))
    throughput = 0.0
    k = 0
    for i in range(eq.n):
        carried = (1.0 - P_hat[i - 1]) * throughput if i > 0 else 0.0
        if i in v_unc:
            v_i = v_unc[i]
        else:
            want = r_hat[i] * eq.target_density[k] - carried
            v_i = min(max(want, eq.b[k] + eq.epsilon), eq.v_max[i])
            out[k] = v_i
            k += 1
        throughput = v_i + carried
    return out


def full_inflows(theta: ThetaEstimate, v_R, eq: EquilibriumSpec) -> np.ndarray:
    v = np.empty(eq.n)
    v[list(eq.uncontrolled)] = theta.v_hat_uncontrolled
    v[list(eq.R)] = v_R
    return v


def estimated_equilibrium(
    theta: ThetaEstimate, eq: EquilibriumSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Equilibrium the controller aims at under estimate ``theta``.

    Returns ``(x_hat_star, v_hat_R)``; occupancies are capped at ``mu - eps``.
    """
    v_R = select_g(theta.P_hat, theta.v_hat_uncontrolled, theta.r_hat, eq)
    v = full_inflows(theta, v_R, eq)
    x_hat = chain_flows(v, theta.P_hat) / theta.r_hat
    return np.minimum(x_hat, eq.caps), v_R


def true_theta(params: FreewayParams) -> ThetaEstimate:
    return ThetaEstimate(
        params.P.copy(), params.v_star[list(params.uncontrolled)].copy(), params.r.copy()
    )


def equilibrium_output(params: FreewayParams, eq: EquilibriumSpec) -> Output:
    """Measured output ``y*`` at the equilibrium (independent of the disturbance)."""
    _, y = step(params, eq.x_star, params.v_star, np.ones(params.n - 1))
    return y

