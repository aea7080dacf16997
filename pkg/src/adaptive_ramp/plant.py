"""Cell transmission freeway model with unknown priority weights.

The freeway is a chain of ``n`` cells. Cell ``i`` holds ``x_i`` vehicles,
receives an external inflow ``v_i`` near its upstream boundary and sends a
fraction ``P_i`` of its outflow to an off-ramp. The last cell sends all of its
outflow out of the network.

Per step:

    demand    f_i(x_i)                      linear r_i x_i below delta_i
    supply    min(q_i, c_i (a_i - x_i))
    s_i       share of f_{i-1} actually admitted into cell i (depends on d_i)
    F_1,in  = min(supply_1, v_1)
    F_i,in  = min(supply_i, v_i + (1 - P_{i-1}) f_{i-1}(x_{i-1}))
    x_i+    = x_i - s_{i+1} f_i(x_i) + F_i,in        (s_{n+1} = 1)

Measured outputs are the occupancies, the off-ramp flows
``Q_out_i = P_i s_{i+1} f_i`` (``Q_out_n = f_n``) and the link flows
``Q_i = (1 - P_i) s_{i+1} f_i``.

Indices are 0-based in code: ``s[k]`` is the admitted share of the flow from
cell ``k`` into cell ``k + 1`` and ``d[k]`` the priority weight of cell
``k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CONSTANT = "constant"
LINEAR_DROP = "linear"
CONGESTED_SHAPES = (CONSTANT, LINEAR_DROP)


class DomainError(ValueError):
    """Raised when an argument lies outside the model's state/input domain."""


def _vec(values, name: str, length: int) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (length,):
        raise DomainError(f"{name} must have {length} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class FreewayParams:
    """Full plant description, including the parameters unknown to the controller.

    Attributes:
        a: storage capacity per cell [veh].
        q: capacity flow per cell [veh/step].
        c: congestion wave speed per cell, in (0, 1].
        delta: free-flow breakpoint per cell [veh], in (0, a_i].
        r: demand slope per cell, in [epsilon, 1 - epsilon].
        f_min: lower bound of the congested demand branch [veh/step].
        congested_shape: ``"constant"`` or ``"linear"`` per cell.
        P: exit rates of cells 1..n-1, in [0, 1 - epsilon].
        v_star: nominal external inflows for all n cells [veh/step]. Entries
            of controlled cells are the nominal controlled inflows; the others
            are the true uncontrolled inflows.
        R: 0-based indices of the controlled cells (sorted, non-empty).
        epsilon: margin in (0, 1/2).
    """

    a: np.ndarray
    q: np.ndarray
    c: np.ndarray
    delta: np.ndarray
    r: np.ndarray
    f_min: np.ndarray
    congested_shape: tuple[str, ...]
    P: np.ndarray
    v_star: np.ndarray
    R: tuple[int, ...]
    epsilon: float
    uncontrolled: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        n = int(np.size(self.a))
        if n < 3:
            raise DomainError(f"need at least 3 cells, got {n}")
        for name in ("a", "q", "c", "delta", "r", "f_min", "v_star"):
            object.__setattr__(self, name, _vec(getattr(self, name), name, n))
        object.__setattr__(self, "P", _vec(self.P, "P", n - 1))
        shapes = tuple(self.congested_shape)
        if len(shapes) == 1:
            shapes = shapes * n
        if len(shapes) != n or any(s not in CONGESTED_SHAPES for s in shapes):
            raise DomainError(f"congested_shape must be {n} entries from {CONGESTED_SHAPES}")
        object.__setattr__(self, "congested_shape", shapes)
        R = tuple(sorted(set(int(i) for i in self.R)))
        if not R or R[0] < 0 or R[-1] >= n:
            raise DomainError(f"R must be a non-empty subset of cell indices 0..{n - 1}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "uncontrolled", tuple(i for i in range(n) if i not in R))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        self._validate()

    def _validate(self) -> None:
        eps = self.epsilon
        if not 0.0 < eps < 0.5:
            raise DomainError(f"epsilon must lie in (0, 1/2), got {eps}")
        if np.any(self.a <= 0) or np.any(self.q <= 0):
            raise DomainError("a and q must be positive")
        if np.any(self.c <= 0) or np.any(self.c > 1):
            raise DomainError("c must lie in (0, 1]")
        if np.any(self.delta <= 0) or np.any(self.delta > self.a):
            raise DomainError("delta must lie in (0, a]")
        if np.any(self.r < eps) or np.any(self.r > 1 - eps):
            raise DomainError("r must lie in [epsilon, 1 - epsilon]")
        if np.any(self.P < 0) or np.any(self.P > 1 - eps):
            raise DomainError("P must lie in [0, 1 - epsilon]")
        if np.any(self.f_min <= 0) or np.any(self.f_min > self.r * self.delta):
            raise DomainError("f_min must lie in (0, r * delta]")
        if np.any(self.v_star < 0):
            raise DomainError("v_star must be non-negative")
        if self.v_star[0] <= 0:
            raise DomainError("the first cell needs a strictly positive inflow")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        """All n exit rates, with the implicit terminal rate 1."""
        return np.append(self.P, 1.0)


@dataclass(frozen=True)
class Output:
    """Measured output of one step: occupancies and the flows observed during it."""

    x: np.ndarray
    q_out: np.ndarray
    q_link: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.q_out, self.q_link])


def demand(params: FreewayParams, i: int, z: float) -> float:
    """Attempted outflow of cell ``i`` holding ``z`` vehicles."""
    a, dl, r = params.a[i], params.delta[i], params.r[i]
    if not 0.0 <= z <= a:
        raise DomainError(f"occupancy {z} of cell {i + 1} outside [0, {a}]")
    if z <= dl:
        return r * z
    if params.congested_shape[i] == CONSTANT or a == dl:
        return r * dl
    frac = (z - dl) / (a - dl)
    return r * dl + frac * (params.f_min[i] - r * dl)


def demand_vector(params: FreewayParams, x: np.ndarray) -> np.ndarray:
    return np.array([demand(params, i, float(x[i])) for i in range(params.n)])


def supply(params: FreewayParams, i: int, x_i: float) -> float:
    """Largest inflow cell ``i`` can receive at occupancy ``x_i``."""
    if not 0.0 < x_i <= params.a[i]:
        raise DomainError(f"occupancy {x_i} of cell {i + 1} outside (0, {params.a[i]}]")
    return min(params.q[i], params.c[i] * (params.a[i] - x_i))


def priority_fraction(
    params: FreewayParams, i: int, x: np.ndarray, v_i: float, d_i: float
) -> float:
    """Share ``s_i`` of the upstream demand admitted into cell ``i`` (``i >= 1``).

    ``d_i = 0`` gives the on-ramp absolute priority, ``d_i = 1`` the mainstream.
    When the supply covers the total demand the share is exactly 1 for any
    weight.
    """
    if not 1 <= i < params.n:
        raise DomainError(f"priority share defined for cells 2..n, got index {i}")
    if v_i < 0 or not 0.0 <= d_i <= 1.0:
        raise DomainError("inflow must be non-negative and d in [0, 1]")
    sup = supply(params, i, float(x[i]))
    upstream = (1.0 - params.P[i - 1]) * demand(params, i - 1, float(x[i - 1]))
    if v_i + upstream <= sup:
        return 1.0
    onramp_first = min(1.0, max(0.0, (sup - v_i) / upstream))
    mainline_first = min(1.0, sup / upstream)
    return (1.0 - d_i) * onramp_first + d_i * mainline_first


def _check_step_args(params: FreewayParams, x, v, d) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = params.n
    x = _vec(x, "x", n)
    v = _vec(v, "v", n)
    d = _vec(d, "d", n - 1)
    if np.any(x <= 0) or np.any(x > params.a):
        raise DomainError(f"state {x} outside S")
    if v[0] <= 0 or np.any(v < 0):
        raise DomainError(f"inflow {v} invalid: v_1 > 0 and v_i >= 0 required")
    if np.any(d < 0) or np.any(d > 1):
        raise DomainError(f"disturbance {d} outside [0, 1]^(n-1)")
    return x, v, d


def step(
    params: FreewayParams, x: Sequence[float], v: Sequence[float], d: Sequence[float]
) -> tuple[np.ndarray, Output]:
    """Advance the freeway one step.

    Args:
        params: plant description.
        x: current occupancies (in S).
        v: full external inflow vector, n entries.
        d: priority weights of cells 2..n.

    Returns:
        ``(x_next, y)`` where ``y`` carries ``x`` and the flows measured during
        this step.
    """
    x, v, d = _check_step_args(params, x, v, d)
    n = params.n
    f = demand_vector(params, x)
    s = np.ones(n)  # s[k]: share of f[k] that leaves cell k; s[n-1] = 1
    f_in = np.empty(n)
    f_in[0] = min(supply(params, 0, x[0]), v[0])
    for i in range(1, n):
        s[i - 1] = priority_fraction(params, i, x, v[i], d[i - 1])
        f_in[i] = min(supply(params, i, x[i]), v[i] + (1.0 - params.P[i - 1]) * f[i - 1])
    f_out = s * f
    x_next = x - f_out + f_in
    q_out = params.exit_rates * f_out
    q_link = (1.0 - params.P) * f_out[:-1]
    return x_next, Output(x=x, q_out=q_out, q_link=q_link)


def onramp_inflows(params: FreewayParams, x: np.ndarray, y: Output, x_next: np.ndarray) -> np.ndarray:
    """Actual external inflows ``W_i v_i`` admitted during a step, from its conservation balance."""
    admitted = x_next - x + s_times_demand(params, y)
    admitted[1:] -= y.q_link
    return admitted


def s_times_demand(params: FreewayParams, y: Output) -> np.ndarray:
    """Total outflow ``s_{i+1} f_i(x_i)`` of every cell recovered from the measured flows."""
    out = y.q_out.copy()
    out[:-1] += y.q_link
    return out


def linear_step(params: FreewayParams, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Closed-form free-flow update, valid when no supply constraint binds."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f = params.r * x
    x_next = x - f + v
    x_next[1:] += (1.0 - params.P) * f[:-1]
    return x_next
