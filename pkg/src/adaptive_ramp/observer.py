"""Dead-beat parameter observer.

The generic scheme keeps the last ``p`` outputs in a shift register. Whenever
the stored window lies in a recovery set ``A`` it replaces the estimate with
``psi(y, window)``; otherwise the estimate is held.

For the freeway ``p = 1``. If the previous step started inside the free-flow
box every flow is linear in the occupancies, and one transition determines
the exit rates, demand slopes and uncontrolled inflows exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .equilibrium import EquilibriumSpec
from .plant import Output
from .theta import ThetaEstimate

__all__ = [
    "ObserverState",
    "ThetaEstimate",
    "generic_deadbeat_update",
    "in_A",
    "observer_update",
    "psi",
]


def generic_deadbeat_update(
    window: Sequence,
    theta,
    y,
    member: Callable[[tuple], bool],
    recover: Callable[[object, tuple], object],
) -> tuple[tuple, object]:
    """One update of the shift-register dead-beat estimator.

    Args:
        window: previous outputs ``(w_1, ..., w_p)``, most recent first.
        theta: current estimate.
        y: newest output.
        member: membership test for the recovery set, applied to the window.
        recover: map ``(y, window) -> estimate``, only called on members.

    Returns:
        ``(new_window, new_theta)``.
    """
    window = tuple(window)
    if not window:
        raise ValueError("window length must be at least 1")
    new_theta = recover(y, window) if member(window) else theta
    return (y,) + window[:-1], new_theta


def in_A(w: Output, eq: EquilibriumSpec) -> bool:
    """Whether stored output ``w`` permits exact recovery."""
    if not np.all(w.x < eq.mu):
        return False
    return bool(np.all(w.q_out[:-1] + w.q_link > 0.0))


def psi(y: Output, w: Output, eq: EquilibriumSpec) -> ThetaEstimate:
    """Recover the parameters from the current output ``y`` and stored output ``w``.

    Raises:
        ValueError: if ``w`` is not in the recovery set.
    """
    if not in_A(w, eq):
        raise ValueError("psi evaluated outside the recovery set")
    eps, n = eq.epsilon, eq.n
    leaving = w.q_out[:-1] + w.q_link

    P_hat = np.minimum(1.0 - eps, w.q_out[:-1] / leaving)

    r_raw = np.empty(n)
    r_raw[:-1] = leaving / w.x[:-1]
    r_raw[-1] = w.q_out[-1] / w.x[-1]
    r_hat = np.clip(r_raw, eps, 1.0 - eps)

    v_hat = np.empty(len(eq.uncontrolled))
    for k, i in enumerate(eq.uncontrolled):
        est = y.x[i] - w.x[i] + w.q_out[i]
        if i < n - 1:
            est += w.q_link[i]
        if i > 0:
            est -= w.q_link[i - 1]
        v_hat[k] = max(0.0, min(eq.v_max[i], est))

    return ThetaEstimate(P_hat, v_hat, r_hat)


@dataclass(frozen=True)
class ObserverState:
    window: Output
    theta_hat: ThetaEstimate
    deadbeat_flag: bool = False


def observer_update(state: ObserverState, y: Output, eq: EquilibriumSpec) -> ObserverState:
    """Shift in ``y`` and refresh the estimate if the stored window is in ``A``."""
    hit = in_A(state.window, eq)
    theta = psi(y, state.window, eq) if hit else state.theta_hat
    return replace(
        state, window=y, theta_hat=theta, deadbeat_flag=state.deadbeat_flag or hit
    )
