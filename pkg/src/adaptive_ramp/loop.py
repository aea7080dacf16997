"""Closed loop: freeway plant, estimate-driven ramp metering and dead-beat observer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import plant
from .controller import ControllerConfig, control_law, xi
from .equilibrium import (
    EquilibriumSpec,
    InfeasibleError,
    equilibrium_output,
    estimated_equilibrium,
    true_theta,
)
from .observer import ObserverState, in_A, observer_update
from .plant import DomainError, FreewayParams, Output
from .theta import ThetaEstimate

POLICIES = ("constant", "iid", "sequence", "adversarial")


@dataclass(frozen=True)
class Disturbance:
    """Priority-weight generator.

    ``constant`` repeats ``value``; ``iid`` draws uniform weights every step;
    ``sequence`` cycles through ``sequence`` when given and otherwise follows a
    seeded random walk clipped to [0, 1]; ``adversarial`` draws each weight
    from {0, 1}.
    """

    policy: str = "iid"
    value: Optional[tuple[float, ...]] = None
    sequence: Optional[tuple[tuple[float, ...], ...]] = None
    walk_step: float = 0.15

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise DomainError(f"unknown disturbance policy {self.policy!r}; use one of {POLICIES}")

    def generate(self, n: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
        k = n - 1
        if self.policy == "constant":
            value = np.full(k, 0.5) if self.value is None else np.asarray(self.value, dtype=float)
            out = np.tile(value, (horizon, 1))
        elif self.policy == "iid":
            out = rng.uniform(0.0, 1.0, size=(horizon, k))
        elif self.policy == "adversarial":
            out = rng.integers(0, 2, size=(horizon, k)).astype(float)
        elif self.sequence is not None:
            seq = np.asarray(self.sequence, dtype=float).reshape(-1, k)
            out = seq[np.arange(horizon) % seq.shape[0]]
        else:
            out = np.empty((horizon, k))
            d = rng.uniform(0.0, 1.0, size=k)
            for t in range(horizon):
                out[t] = d
                d = np.clip(d + rng.normal(0.0, self.walk_step, size=k), 0.0, 1.0)
        if out.shape != (horizon, k) or np.any(out < 0) or np.any(out > 1):
            raise DomainError("disturbance values must be n-1 weights in [0, 1]")
        return out


@dataclass(frozen=True)
class Scenario:
    params: FreewayParams
    eq: EquilibriumSpec
    ctrl: ControllerConfig
    x0: np.ndarray
    theta_hat0: ThetaEstimate
    w0: Output
    horizon: int
    disturbance: Disturbance = field(default_factory=Disturbance)
    seed: int = 0
    id: str = "scenario"

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise DomainError("horizon must be non-negative")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.params.n,) or np.any(x0 <= 0) or np.any(x0 > self.params.a):
            raise DomainError(f"x0 = {x0} outside S")
        if not self.eq.theta_box.contains(self.theta_hat0):
            raise DomainError("initial estimate outside the parameter box")
        w = self.w0
        if np.any(w.x <= 0) or np.any(w.x > self.params.a) or np.any(w.q_out < 0) or \
                np.any(w.q_out > self.params.a) or np.any(w.q_link < 0) or \
                np.any(w.q_link > self.params.a[:-1]):
            raise DomainError("initial window outside Y")

    @property
    def theta(self) -> ThetaEstimate:
        return true_theta(self.params)


def empty_window(x0) -> Output:
    """History placeholder carrying no flow information (never in the recovery set)."""
    x0 = np.asarray(x0, dtype=float)
    return Output(x=x0.copy(), q_out=np.zeros(x0.size), q_link=np.zeros(x0.size - 1))


def warmup_window(params: FreewayParams, eq: EquilibriumSpec, ctrl: ControllerConfig,
                  theta_hat0: ThetaEstimate, x0, d) -> Output:
    """Output of one plant step from ``x0`` under the initial feedback."""
    x0 = np.asarray(x0, dtype=float)
    x_hat, v_R = estimated_equilibrium(theta_hat0, eq)
    v = inflow_vector(params, control_law(v_R, xi(x0, x_hat, ctrl.sigma), ctrl))
    return plant.step(params, x0, v, d)[1]


def inflow_vector(params: FreewayParams, u: np.ndarray) -> np.ndarray:
    """Full inflow vector: metered ``u`` on controlled cells, true nominal inflow elsewhere."""
    v = params.v_star.copy()
    v[list(params.R)] = u
    return v


@dataclass(frozen=True)
class StepRecord:
    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    y: Output
    theta_hat: ThetaEstimate
    v_hat_R: np.ndarray
    xi: float
    in_A: bool


def closed_loop_step(x, obs: ObserverState, d, scenario: Scenario):
    """One closed-loop transition.

    Returns ``(x_next, obs_next, record)``; the record describes the state
    and estimate *before* the transition together with what happened during it.
    """
    eq, cfg = scenario.eq, scenario.ctrl
    x_hat, v_hat_R = estimated_equilibrium(obs.theta_hat, eq)
    overshoot = xi(x, x_hat, cfg.sigma)
    u = control_law(v_hat_R, overshoot, cfg)
    x_next, y = plant.step(scenario.params, x, inflow_vector(scenario.params, u), d)
    hit = in_A(obs.window, eq)
    obs_next = observer_update(obs, y, eq)
    record = StepRecord(np.asarray(x, dtype=float), u, np.asarray(d, dtype=float), y,
                        obs.theta_hat, v_hat_R, overshoot, hit)
    return x_next, obs_next, record


@dataclass
class Trajectory:
    """Logged closed-loop run.

    Per-step arrays (``u``, ``d``, ``q_out``, ``q_link``, ``xi``) have
    ``horizon`` rows; state-like arrays (``x``, ``theta``, ``v_hat_R``,
    ``window``, ``in_A``) have ``horizon + 1`` rows, the last describing the
    terminal state.
    """

    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    q_out: np.ndarray
    q_link: np.ndarray
    theta: np.ndarray
    v_hat_R: np.ndarray
    window: np.ndarray
    xi: np.ndarray
    in_A: np.ndarray
    status: str = "ok"

    @property
    def horizon(self) -> int:
        return self.u.shape[0]


def simulate(scenario: Scenario) -> Trajectory:
    """Run ``scenario`` for its horizon; deterministic given the seed."""
    p, eq = scenario.params, scenario.eq
    n, H, m = p.n, scenario.horizon, len(p.R)
    rng = np.random.default_rng(scenario.seed)
    ds = scenario.disturbance.generate(n, H, rng)

    dim = scenario.theta_hat0.as_vector().size
    traj = Trajectory(
        x=np.full((H + 1, n), np.nan), u=np.full((H, m), np.nan), d=ds,
        q_out=np.full((H, n), np.nan), q_link=np.full((H, n - 1), np.nan),
        theta=np.full((H + 1, dim), np.nan), v_hat_R=np.full((H + 1, m), np.nan),
        window=np.full((H + 1, 3 * n - 1), np.nan), xi=np.full(H, np.nan),
        in_A=np.zeros(H + 1, dtype=bool),
    )
    x = np.asarray(scenario.x0, dtype=float).copy()
    obs = ObserverState(window=scenario.w0, theta_hat=scenario.theta_hat0)
    for t in range(H):
        traj.x[t] = x
        traj.theta[t] = obs.theta_hat.as_vector()
        traj.window[t] = obs.window.as_vector()
        try:
            x, obs, rec = closed_loop_step(x, obs, ds[t], scenario)
        except DomainError as exc:
            traj.status = f"error at t={t}: {exc}"
            return traj
        traj.u[t], traj.q_out[t], traj.q_link[t] = rec.u, rec.y.q_out, rec.y.q_link
        traj.v_hat_R[t], traj.xi[t], traj.in_A[t] = rec.v_hat_R, rec.xi, rec.in_A
    traj.x[H] = x
    traj.theta[H] = obs.theta_hat.as_vector()
    traj.window[H] = obs.window.as_vector()
    traj.v_hat_R[H] = estimated_equilibrium(obs.theta_hat, eq)[1]
    traj.in_A[H] = in_A(obs.window, eq)
    return traj


def composite_residual(traj: Trajectory, scenario: Scenario) -> np.ndarray:
    """Distance of the full closed-loop state from its equilibrium at each time.

    Sum of Euclidean norms ``|x - x*| + |w - y*| + |r_hat - r| + |P_hat - P|
    + |v_hat* - v*|``, where ``v_hat*`` stacks the estimated uncontrolled
    inflows and the controlled inflows selected from the estimate.
    """
    p, eq = scenario.params, scenario.eq
    n = p.n
    y_star = equilibrium_output(p, eq).as_vector()
    theta = traj.theta
    P_hat, r_hat = theta[:, : n - 1], theta[:, -n:]
    v_hat = np.empty((theta.shape[0], n))
    v_hat[:, list(p.uncontrolled)] = theta[:, n - 1: n - 1 + len(p.uncontrolled)]
    v_hat[:, list(p.R)] = traj.v_hat_R
    norm = np.linalg.norm
    return (norm(traj.x - eq.x_star, axis=1) + norm(traj.window - y_star, axis=1)
            + norm(r_hat - p.r, axis=1) + norm(P_hat - p.P, axis=1)
            + norm(v_hat - p.v_star, axis=1))


def state_residual(traj: Trajectory, scenario: Scenario) -> np.ndarray:
    return np.linalg.norm(traj.x - scenario.eq.x_star, axis=1)


def recurrence_gaps(hits: np.ndarray) -> np.ndarray:
    """Distances between consecutive recovery-set hits."""
    idx = np.flatnonzero(hits)
    return np.diff(idx)


# -- contraction of the weighted occupancy sum ---------------------------------

@dataclass(frozen=True)
class ContractionResult:
    C: float
    violations: int
    samples: int
    worst_ratio: float


def _weights(n: int) -> np.ndarray:
    # sum_j I_j(x) = sum_i (n + 1 - i) x_i
    return np.arange(n, 0, -1, dtype=float)


def contraction_check(params: FreewayParams, v_max, sample_count: int = 10_000,
                      seed: int = 0, edge_fraction: float = 0.25) -> ContractionResult:
    """Largest ``C`` with ``sum I(x+) <= (1 - C) sum I(x) + sum (n+1-i) v_i`` on random samples.

    Occupancies are drawn in S and inflows in the free-flow caps. A share
    ``edge_fraction`` of samples pins random coordinates to full cells and
    near-zero inflows, where the inequality is tightest.
    """
    n = params.n
    v_max = np.asarray(v_max, dtype=float)
    rng = np.random.default_rng(seed)
    w = _weights(n)
    ratios = np.empty(sample_count)
    cases = []
    for k in range(sample_count):
        x = params.a * (1.0 - rng.uniform(size=n))
        v = v_max * rng.uniform(size=n)
        v[0] = v_max[0] * (1.0 - rng.uniform())
        d = rng.uniform(size=n - 1)
        if rng.uniform() < edge_fraction:
            full = rng.uniform(size=n) < 0.5
            x[full] = params.a[full]
            v[rng.uniform(size=n) < 0.5] = 0.0
            v[0] = max(v[0], 1e-9 * v_max[0])
            d = rng.integers(0, 2, size=n - 1).astype(float)
        x_next, _ = plant.step(params, x, v, d)
        before, after, feed = w @ x, w @ x_next, w @ v
        ratios[k] = (before + feed - after) / before
        cases.append((before, after, feed))
    worst = float(ratios.min()) if sample_count else 1.0
    C = min(worst, 1.0) * (1.0 - 1e-9)
    violations = sum(1 for before, after, feed in cases if after > (1.0 - C) * before + feed)
    return ContractionResult(C=C, violations=violations, samples=sample_count, worst_ratio=worst)


def kappa(params: FreewayParams, eq: EquilibriumSpec) -> float:
    w = _weights(params.n)
    R, U = list(params.R), list(params.uncontrolled)
    return float(w[R] @ eq.b + w[U] @ eq.v_max[U])


def m_bound(params: FreewayParams, eq: EquilibriumSpec, C: float) -> int:
    """Upper bound on the number of steps the loop can stay outside the free-flow box.

    Raises:
        InfeasibleError: when the minimum inflows and uncontrolled caps are too
            large for the contraction constant ``C``.
    """
    if not 0.0 < C < 1.0:
        raise DomainError(f"C must lie in (0, 1), got {C}")
    w = _weights(params.n)
    k = kappa(params, eq)
    floor = float(np.min(w * eq.mu))
    if not k < C * floor:
        raise InfeasibleError(
            f"kappa = {k:.6g} not below C * min((n+1-i) mu_i) = {C * floor:.6g}; "
            "reduce b_i on controlled ramps or v_max on uncontrolled ones"
        )
    top = float(w @ params.a)
    ratio = (math.log(floor - k / C) - math.log(top)) / math.log1p(-C)
    return max(1, 2 + math.ceil(ratio))


def first_hit(hits: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(hits)
    return int(idx[0]) if idx.size else None


__all__ = [
    "POLICIES", "ContractionResult", "Disturbance", "InfeasibleError", "Scenario", "StepRecord",
    "Trajectory", "closed_loop_step", "composite_residual", "contraction_check", "empty_window",
    "first_hit", "inflow_vector", "kappa", "m_bound", "recurrence_gaps", "simulate",
    "state_residual", "true_theta", "warmup_window",
]
