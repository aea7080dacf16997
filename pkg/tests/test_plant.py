import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptive_ramp import plant
from adaptive_ramp.plant import DomainError, FreewayParams

from conftest import omega_sample, random_scenario

INSTANCES = [random_scenario(seed, n) for seed, n in [(1, 3), (2, 4), (3, 5), (4, 6), (5, 3), (6, 5)]]


def _reference_step(p, x, v, d):
    """Scalar re-implementation of one CTM step, kept deliberately naive."""
    n = len(x)

    def f(i, z):
        if z <= p.delta[i]:
            return p.r[i] * z
        if p.congested_shape[i] == "constant":
            return p.r[i] * p.delta[i]
        top = p.r[i] * p.delta[i]
        return top + (z - p.delta[i]) / (p.a[i] - p.delta[i]) * (p.f_min[i] - top)

    def sup(i):
        return min(p.q[i], p.c[i] * (p.a[i] - x[i]))

    s = [1.0] * n
    f_in = [min(sup(0), v[0])]
    for i in range(1, n):
        up = (1 - p.P[i - 1]) * f(i - 1, x[i - 1])
        first = min(1.0, max(0.0, (sup(i) - v[i]) / up)) if up > 0 else 1.0
        second = min(1.0, sup(i) / up) if up > 0 else 1.0
        s[i - 1] = (1 - d[i - 1]) * first + d[i - 1] * second
        f_in.append(min(sup(i), v[i] + up))
    return [x[i] - s[i] * f(i, x[i]) + f_in[i] for i in range(n)], s


# -- examples on the reference geometry ---------------------------------------

def test_demand_examples(params):
    assert plant.demand(params, 0, 20.0) == 10.0
    assert plant.demand(params, 0, 0.0) == 0.0
    assert plant.demand(params, 0, 100.0) == pytest.approx(10.0, abs=1e-12)


def test_demand_constant_branch(params):
    from dataclasses import replace
    flat = replace(params, congested_shape=("constant",) * 3)
    assert plant.demand(flat, 0, 80.0) == 25.0


def test_demand_out_of_range(params):
    with pytest.raises(DomainError):
        plant.demand(params, 0, 100.5)
    with pytest.raises(DomainError):
        plant.demand(params, 0, -1.0)


def test_supply_examples(params):
    assert plant.supply(params, 0, 20.0) == 40.0
    assert plant.supply(params, 0, 100.0) == 0.0
    assert plant.supply(params, 0, 95.0) == 2.5


def test_priority_examples(params):
    # supply 2.5, on-ramp 5, upstream (1 - 0.2) * 10 = 8
    x = np.array([20.0, 95.0, 20.8])
    assert plant.priority_fraction(params, 1, x, 5.0, 1.0) == 0.3125
    assert plant.priority_fraction(params, 1, x, 5.0, 0.0) == 0.0


def test_priority_is_one_when_supply_suffices(params):
    x = np.array([20.0, 26.0, 20.8])
    for d in (0.0, 0.37, 1.0):
        assert plant.priority_fraction(params, 1, x, 5.0, d) == 1.0


def test_step_reference_example(params):
    x = np.array([20.0, 95.0, 20.8])
    x_next, y = plant.step(params, x, [10.0, 5.0, 0.0], [1.0, 1.0])
    f1 = 10.0
    assert y.q_link[0] + y.q_out[0] == pytest.approx(0.3125 * f1, abs=1e-12)
    # inflow into cell 2 is its supply; the mainline took 0.8 * 3.125 of it
    admitted = plant.onramp_inflows(params, x, y, x_next)
    assert admitted[1] + y.q_link[0] == pytest.approx(2.5, abs=1e-12)


def test_step_fixed_point(ref3):
    p, eq = ref3.params, ref3.eq
    rng = np.random.default_rng(0)
    for _ in range(100):
        x_next, _ = plant.step(p, eq.x_star, p.v_star, rng.uniform(size=2))
        np.testing.assert_allclose(x_next, eq.x_star, rtol=0, atol=1e-12)


def test_step_rejects_bad_arguments(params):
    with pytest.raises(DomainError):
        plant.step(params, [0.0, 10.0, 10.0], [1.0, 0.0, 0.0], [0.5, 0.5])
    with pytest.raises(DomainError):
        plant.step(params, [10.0, 10.0, 10.0], [0.0, 0.0, 0.0], [0.5, 0.5])
    with pytest.raises(DomainError):
        plant.step(params, [10.0, 10.0, 10.0], [1.0, 0.0, 0.0], [1.5, 0.5])


def test_params_validation(ref3_dict):
    from adaptive_ramp.config import params_from_dict
    bad = dict(ref3_dict["plant"], r=[0.2, 0.5, 0.5])
    with pytest.raises(DomainError):
        params_from_dict(bad)
    bad = dict(ref3_dict["plant"], v_star=[0, 5, 0])
    with pytest.raises(DomainError):
        params_from_dict(bad)
    bad = dict(ref3_dict["plant"], f_min=[30, 10, 10])
    with pytest.raises(DomainError):
        params_from_dict(bad)


# -- properties ------------------------------------------------------------------

def _admissible(p, data, scale=2.0):
    x = np.array([data.draw(st.floats(1e-9, 1.0)) for _ in range(p.n)]) * p.a
    v = np.array([data.draw(st.floats(0.0, 1.0)) for _ in range(p.n)]) * scale * p.q
    v[0] = max(v[0], 1e-9)
    d = np.array([data.draw(st.floats(0.0, 1.0)) for _ in range(p.n - 1)])
    return x, v, d


@settings(max_examples=300, deadline=None)
@given(k=st.integers(0, len(INSTANCES) - 1), data=st.data())
def test_step_matches_reference(k, data):
    p = INSTANCES[k].params
    x, v, d = _admissible(p, data)
    x_next, _ = plant.step(p, x, v, d)
    ref, _ = _reference_step(p, x, v, d)
    np.testing.assert_allclose(x_next, ref, rtol=0, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(k=st.integers(0, len(INSTANCES) - 1), data=st.data())
def test_state_space_invariance(k, data):
    p = INSTANCES[k].params
    x, v, d = _admissible(p, data)
    x_next, _ = plant.step(p, x, v, d)
    assert np.all(x_next > 0)
    assert np.all(x_next <= p.a)


@settings(max_examples=300, deadline=None)
@given(k=st.integers(0, len(INSTANCES) - 1), data=st.data())
def test_priority_share_in_unit_interval(k, data):
    p = INSTANCES[k].params
    x, v, d = _admissible(p, data)
    for i in range(1, p.n):
        s = plant.priority_fraction(p, i, x, v[i], d[i - 1])
        assert 0.0 <= s <= 1.0


@settings(max_examples=300, deadline=None)
@given(k=st.integers(0, len(INSTANCES) - 1), data=st.data())
def test_flow_consistency_and_conservation(k, data):
    p = INSTANCES[k].params
    x, v, d = _admissible(p, data)
    x_next, y = plant.step(p, x, v, d)
    f = plant.demand_vector(p, x)
    _, s = _reference_step(p, x, v, d)
    np.testing.assert_allclose(y.q_out[:-1] + y.q_link, np.array(s[:-1]) * f[:-1], atol=1e-12)
    admitted = plant.onramp_inflows(p, x, y, x_next)
    assert np.all(admitted >= -1e-9)
    assert np.all(admitted <= v + 1e-9)
    assert admitted[0] == pytest.approx(min(plant.supply(p, 0, x[0]), v[0]), abs=1e-9)
    assert x_next.sum() - x.sum() == pytest.approx(admitted.sum() - y.q_out.sum(), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(k=st.integers(0, len(INSTANCES) - 1), seed=st.integers(0, 2**32 - 1))
def test_free_flow_region_is_linear(k, seed):
    sc = INSTANCES[k]
    p = sc.params
    x, v = omega_sample(sc, np.random.default_rng(seed))
    lo, _ = plant.step(p, x, v, np.zeros(p.n - 1))
    hi, _ = plant.step(p, x, v, np.ones(p.n - 1))
    assert np.array_equal(lo, hi)
    np.testing.assert_allclose(lo, plant.linear_step(p, x, v), rtol=0, atol=1e-12)


def test_short_circuit_keeps_share_exact(params):
    # supply exactly equal to the total demand still gives s = 1
    x = np.array([20.0, 70.0, 20.8])  # supply of cell 2 is 15
    assert plant.priority_fraction(params, 1, x, 7.0, 0.5) == 1.0


def test_freeway_params_is_frozen(params):
    with pytest.raises(Exception):
        params.a = np.zeros(3)
    assert isinstance(params, FreewayParams)
