"""Scenario files and random instance generation.

A scenario file is JSON with four sections; cells are numbered from 1::

    {
      "id": "ref3",
      "plant":      {"a": [...], "q": [...], "c": [...], "delta": [...], "r": [...],
                     "f_min": [...], "congested_shape": "linear",
                     "P": [...], "v_star": [...], "R": [2], "epsilon": 0.4},
      "design":     {"mu": [...], "v_max": [...], "b": [1.0], "target_density": null},
      "controller": {"sigma": 0.5, "tau": null, "tau_fraction": 0.9},
      "run":        {"x0": [...], "theta_hat0": "center", "w0": "empty",
                     "horizon": 500, "seed": 0,
                     "disturbance": {"policy": "iid"}}
    }

Keys starting with ``_`` are ignored, so files can carry unit notes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .controller import DEFAULT_SIGMA, DEFAULT_TAU_FRACTION, ControllerConfig
from .equilibrium import InfeasibleError, build_equilibrium, check_feasibility
from .loop import Disturbance, Scenario, empty_window, warmup_window
from .plant import DomainError, FreewayParams, Output
from .theta import ThetaEstimate


class ConfigError(ValueError):
    """Malformed scenario or battery file."""


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return _strip(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def params_from_dict(d: Mapping[str, Any]) -> FreewayParams:
    try:
        shape = d.get("congested_shape", "linear")
        shapes = (shape,) if isinstance(shape, str) else tuple(shape)
        return FreewayParams(
            a=d["a"], q=d["q"], c=d["c"], delta=d["delta"], r=d["r"], f_min=d["f_min"],
            congested_shape=shapes, P=d["P"], v_star=d["v_star"],
            R=tuple(int(i) - 1 for i in d["R"]), epsilon=d["epsilon"],
        )
    except KeyError as exc:
        raise ConfigError(f"plant section missing {exc}") from exc


def _theta_from(spec, eq) -> ThetaEstimate:
    box = eq.theta_box
    if spec is None or spec == "center":
        return box.center()
    if isinstance(spec, Mapping):
        return ThetaEstimate(
            np.asarray(spec["P"], dtype=float),
            np.asarray(spec.get("v_uncontrolled", []), dtype=float),
            np.asarray(spec["r"], dtype=float),
        )
    raise ConfigError(f"theta_hat0 must be 'center' or an object, got {spec!r}")


def scenario_from_dict(d: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> Scenario:
    """Build and validate a :class:`Scenario`; raises on any violated constraint."""
    d = _strip(dict(d))
    for section in ("plant", "design"):
        if section not in d:
            raise ConfigError(f"scenario lacks a '{section}' section")
    params = params_from_dict(d["plant"])
    des = d["design"]
    try:
        eq = build_equilibrium(params, des["mu"], des["v_max"], des["b"],
                               des.get("target_density"))
    except KeyError as exc:
        raise ConfigError(f"design section missing {exc}") from exc
    c = d.get("controller", {})
    ctrl = ControllerConfig.build(eq, sigma=c.get("sigma", DEFAULT_SIGMA), tau=c.get("tau"),
                                  tau_fraction=c.get("tau_fraction", DEFAULT_TAU_FRACTION))
    run = dict(d.get("run", {}))
    run.update({k: v for k, v in (overrides or {}).items() if v is not None})
    seed = int(run.get("seed", 0))
    horizon = int(run.get("horizon", 500))
    dist = run.get("disturbance", {"policy": "iid"})
    disturbance = Disturbance(
        policy=dist.get("policy", "iid"),
        value=None if dist.get("value") is None else tuple(dist["value"]),
        sequence=None if dist.get("sequence") is None else tuple(map(tuple, dist["sequence"])),
    )
    if run.get("x0") is None:
        rng = np.random.default_rng([seed, 1])
        x0 = params.a * (1.0 - rng.uniform(size=params.n))
    else:
        x0 = np.asarray(run["x0"], dtype=float)
    theta0 = _theta_from(run.get("theta_hat0"), eq)
    w0_spec = run.get("w0", "empty")
    if w0_spec == "empty":
        w0 = empty_window(x0)
    elif w0_spec == "warmup":
        d0 = disturbance.generate(params.n, 1, np.random.default_rng([seed, 2]))[0]
        w0 = warmup_window(params, eq, ctrl, theta0, x0, d0)
    elif isinstance(w0_spec, Mapping):
        w0 = Output(np.asarray(w0_spec["x"], float), np.asarray(w0_spec["q_out"], float),
                    np.asarray(w0_spec["q_link"], float))
    else:
        raise ConfigError(f"w0 must be 'empty', 'warmup' or an object, got {w0_spec!r}")
    return Scenario(params=params, eq=eq, ctrl=ctrl, x0=x0, theta_hat0=theta0, w0=w0,
                    horizon=horizon, disturbance=disturbance, seed=seed,
                    id=str(d.get("id", "scenario")))


def load_scenario(path, **overrides) -> Scenario:
    data = read_json(path)
    data.setdefault("id", Path(path).stem)
    return scenario_from_dict(data, overrides)


def load_params(path) -> tuple[FreewayParams, dict]:
    data = read_json(path)
    if "plant" not in data:
        raise ConfigError("scenario lacks a 'plant' section")
    return params_from_dict(data["plant"]), data


def random_scenario_dict(rng: np.random.Generator, n: int, policy: str, horizon: int = 500,
                         seed: int = 0, epsilon: float = 0.1, max_tries: int = 10_000) -> dict:
    """Random valid instance with true parameters uniform in the parameter box.

    Geometry is drawn first, then ``(P, r)``. The inflow that keeps entering
    when every metered ramp sits at its minimum, ``sum_R b_i + sum_(not R)
    v_max_i``, is kept below the smallest congested demand ``min f_min`` so
    that no congested equilibrium can survive saturated metering. Uncontrolled
    nominal inflows are then uniform in ``[0, v_max_i]`` and the draw is
    rejected until every design inequality holds. The initial occupancy is
    uniform in S.
    """
    for _ in range(max_tries):
        a = rng.uniform(80.0, 120.0, n)
        delta = a * rng.uniform(0.45, 0.6, n)
        q = rng.uniform(30.0, 50.0, n)
        c = rng.uniform(0.5, 1.0, n)
        mu = delta * rng.uniform(0.75, 0.9, n)
        P = rng.uniform(0.0, 1.0 - epsilon, n - 1)
        r = rng.uniform(epsilon, 1.0 - epsilon, n)
        f_min = r * delta * rng.uniform(0.5, 1.0, n)
        shapes = [str(s) for s in rng.choice(["constant", "linear"], n)]
        sup = np.minimum(q, c * (a - mu))
        room = sup.copy()
        room[1:] -= (1.0 - P) * r[:-1] * mu[:-1]
        if np.any(room <= 0):
            continue
        size = int(rng.integers(1, n + 1))
        R = np.sort(rng.choice(n, size=size, replace=False))
        unc = np.setdiff1d(np.arange(n), R)
        v_max = room * rng.uniform(0.3, 0.95, n)
        budget = rng.uniform(0.3, 0.9) * f_min.min()
        shares = budget * rng.dirichlet(np.ones(n))
        b = np.minimum(shares[R], 0.1 * v_max[R])
        v_max[unc] = np.minimum(shares[unc], v_max[unc])
        if np.any(b + epsilon >= v_max[R]):
            continue
        v_star = rng.uniform(0.0, v_max)
        v_star[R] = rng.uniform(b + epsilon, v_max[R])
        if v_star[0] <= 0:
            continue
        plant = dict(a=a, q=q, c=c, delta=delta, r=r, f_min=f_min, congested_shape=shapes,
                     P=P, v_star=v_star, R=[int(i) + 1 for i in R], epsilon=epsilon)
        plant = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in plant.items()}
        try:
            params = params_from_dict(plant)
            if not check_feasibility(params, v_star).ok:
                continue
            build_equilibrium(params, mu, v_max, b)
        except (InfeasibleError, DomainError):
            continue
        x0 = a * (1.0 - rng.uniform(size=n))
        return {
            "id": f"rand-n{n}-{policy}-{seed}",
            "plant": plant,
            "design": {"mu": mu.tolist(), "v_max": v_max.tolist(), "b": b.tolist()},
            "controller": {"sigma": DEFAULT_SIGMA, "tau_fraction": DEFAULT_TAU_FRACTION},
            "run": {"x0": x0.tolist(), "theta_hat0": "center", "w0": "empty",
                    "horizon": horizon, "seed": seed, "disturbance": {"policy": policy}},
        }
    raise ConfigError(f"no valid random instance with n={n} after {max_tries} draws")
