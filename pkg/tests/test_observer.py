from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_ramp.config import load_scenario
from adaptive_ramp.equilibrium import equilibrium_output
from adaptive_ramp.loop import closed_loop_step, inflow_vector
from adaptive_ramp.observer import (
    ObserverState,
    generic_deadbeat_update,
    in_A,
    observer_update,
    psi,
)
from adaptive_ramp.plant import Output, step

from conftest import REF3, omega_sample, random_scenario

REF = load_scenario(REF3)
INSTANCES = [REF] + [random_scenario(seed, n) for seed, n in [(31, 3), (32, 4), (33, 5), (34, 6)]]


def true_transition(sc, rng):
    """Output pair (y, w) of the true plant with the stored step starting in the free-flow box."""
    p = sc.params
    x, v = omega_sample(sc, rng)
    v[list(p.uncontrolled)] = p.v_star[list(p.uncontrolled)]
    if v[0] <= 0:
        v[0] = p.v_star[0]
    d = rng.uniform(size=p.n - 1)
    x_next, w = step(p, x, v, d)
    y = step(p, x_next, inflow_vector(p, sc.eq.b), rng.uniform(size=p.n - 1))[1]
    return y, w


def test_equilibrium_output_in_A():
    y_star = equilibrium_output(REF.params, REF.eq)
    assert in_A(y_star, REF.eq)


def test_boundary_and_zero_flow_not_in_A():
    y_star = equilibrium_output(REF.params, REF.eq)
    x = y_star.x.copy()
    x[1] = REF.eq.mu[1]
    assert not in_A(replace(y_star, x=x), REF.eq)
    q_out = y_star.q_out.copy()
    q_out[:2] = 0.0
    assert not in_A(replace(y_star, q_out=q_out, q_link=np.zeros(2)), REF.eq)


def test_psi_at_equilibrium():
    y_star = equilibrium_output(REF.params, REF.eq)
    np.testing.assert_allclose(y_star.q_out, [2.0, 2.6, 10.4], atol=1e-12)
    np.testing.assert_allclose(y_star.q_link, [8.0, 10.4], atol=1e-12)
    th = psi(y_star, y_star, REF.eq)
    np.testing.assert_allclose(th.P_hat, [0.2, 0.2], atol=1e-12)
    np.testing.assert_allclose(th.r_hat, [0.5, 0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(th.v_hat_uncontrolled, [10.0, 0.0], atol=1e-12)


def test_psi_outside_A_raises():
    y0 = Output(np.full(3, 90.0), np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        psi(y0, y0, REF.eq)


def test_psi_clamps_ratios():
    w = Output(np.array([10.0, 10.0, 10.0]), np.array([9.0, 0.1, 9.9]), np.array([0.1, 0.0]))
    th = psi(w, w, REF.eq)
    assert th.P_hat[0] == 1.0 - REF.eq.epsilon
    assert th.r_hat[0] == 1.0 - REF.eq.epsilon  # raw ratio 0.91
    assert th.r_hat[1] == REF.eq.epsilon


@settings(max_examples=500, deadline=None)
@given(k=st.integers(0, len(INSTANCES) - 1), seed=st.integers(0, 2**32 - 1))
def test_psi_recovers_truth(k, seed):
    sc = INSTANCES[k]
    y, w = true_transition(sc, np.random.default_rng(seed))
    assert in_A(w, sc.eq)
    est = psi(y, w, sc.eq)
    np.testing.assert_allclose(est.as_vector(), sc.theta.as_vector(), rtol=0, atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(k=st.integers(0, len(INSTANCES) - 1), seed=st.integers(0, 2**32 - 1))
def test_psi_stays_in_box(k, seed):
    sc = INSTANCES[k]
    p, eq = sc.params, sc.eq
    rng = np.random.default_rng(seed)
    w = Output(eq.mu * (1.0 - rng.uniform(size=p.n)), p.a * rng.uniform(size=p.n),
               p.a[:-1] * rng.uniform(size=p.n - 1))
    y = Output(p.a * (1.0 - rng.uniform(size=p.n)), p.a * rng.uniform(size=p.n),
               p.a[:-1] * rng.uniform(size=p.n - 1))
    if in_A(w, eq):
        assert eq.theta_box.contains(psi(y, w, eq))


def test_update_holds_outside_A():
    w = Output(np.full(3, 90.0), np.zeros(3), np.zeros(2))
    state = ObserverState(w, REF.theta_hat0)
    y = equilibrium_output(REF.params, REF.eq)
    new = observer_update(state, y, REF.eq)
    assert new.theta_hat == REF.theta_hat0
    assert new.window is y
    assert not new.deadbeat_flag


def test_update_locks_and_stays():
    rng = np.random.default_rng(5)
    y1, w = true_transition(REF, rng)
    state = observer_update(ObserverState(w, REF.theta_hat0), y1, REF.eq)
    assert state.theta_hat.distance(REF.theta) <= 1e-12
    y_star = equilibrium_output(REF.params, REF.eq)
    again = observer_update(replace(state, window=y_star), y_star, REF.eq)
    np.testing.assert_allclose(again.theta_hat.as_vector(), state.theta_hat.as_vector(), atol=1e-12)


def test_generic_shift_register():
    window, theta = generic_deadbeat_update(("y1", "y2", "y3"), "th", "y",
                                            member=lambda w: False, recover=None)
    assert window == ("y", "y1", "y2")
    assert theta == "th"


def test_generic_never_member_holds():
    window, theta = ("a",), 0
    for k in range(50):
        window, theta = generic_deadbeat_update(window, theta, k, lambda w: False, lambda y, w: 1)
    assert theta == 0


def test_generic_rejects_empty_window():
    with pytest.raises(ValueError):
        generic_deadbeat_update((), 0, 1, lambda w: True, lambda y, w: 1)


def test_generic_matches_specialized():
    sc = INSTANCES[2]
    eq = sc.eq
    rng = np.random.default_rng(0)
    ds = sc.disturbance.generate(sc.params.n, 1000, rng)
    x = sc.x0.copy()
    obs = ObserverState(sc.w0, sc.theta_hat0)
    window, theta = (sc.w0,), sc.theta_hat0
    for t in range(1000):
        x, nxt, rec = closed_loop_step(x, obs, ds[t], sc)
        window, theta = generic_deadbeat_update(window, theta, rec.y,
                                                lambda w: in_A(w[0], eq),
                                                lambda y, w: psi(y, w[0], eq))
        assert window[0] is nxt.window
        assert np.array_equal(theta.as_vector(), nxt.theta_hat.as_vector())
        obs = nxt
