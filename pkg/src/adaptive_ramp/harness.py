"""Run summaries, convergence fits, trajectory CSV files and scenario batteries."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .config import ConfigError, read_json, random_scenario_dict, scenario_from_dict
from .equilibrium import InfeasibleError
from .loop import (
    Scenario,
    Trajectory,
    composite_residual,
    contraction_check,
    first_hit,
    m_bound,
    recurrence_gaps,
    simulate,
)
from .plant import DomainError

log = logging.getLogger(__name__)

NUMERICAL_ZERO = 1e-14
MIN_FIT_POINTS = 10
LOCK_TOL = 1e-9
MIN_R2 = 0.9
FALLBACK_RATIO = 1e-6
FIT_PASS_SHARE = 0.95


@dataclass(frozen=True)
class FitResult:
    M: Optional[float]
    sigma: Optional[float]
    r_squared: Optional[float]
    points: int
    converged_exactly: bool = False

    @property
    def fitted(self) -> bool:
        return self.sigma is not None


def fit_exponential(t, residual, tail_start: int = 0, zero: float = NUMERICAL_ZERO) -> FitResult:
    """Least-squares fit of ``residual ~ M exp(-sigma t)`` over ``t >= tail_start``.

    Once the residual first drops to ``zero`` the run counts as converged and
    that point and everything after it is left out of the fit. Returns a
    result without a fit when fewer than ``MIN_FIT_POINTS`` usable points
    remain; ``converged_exactly`` tells whether numerical zero was reached.
    """
    t = np.asarray(t, dtype=float)
    res = np.asarray(residual, dtype=float)
    tail = (t >= tail_start) & np.isfinite(res)
    at_zero = np.logical_or.accumulate(tail & (res <= zero))
    keep = tail & ~at_zero
    reached_zero = bool(at_zero.any())
    k = int(keep.sum())
    if k < MIN_FIT_POINTS:
        return FitResult(None, None, None, k, converged_exactly=reached_zero)
    tt, ll = t[keep], np.log(res[keep])
    slope, intercept = np.polyfit(tt, ll, 1)
    pred = intercept + slope * tt
    ss_res = float(np.sum((ll - pred) ** 2))
    ss_tot = float(np.sum((ll - ll.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(math.exp(intercept)), float(-slope), r2, k, reached_zero)


def numerical_zero(scenario: Scenario) -> float:
    """Residual level indistinguishable from zero for this closed loop.

    A one-ulp overshoot of the estimated equilibrium moves the metered
    inflows by up to ``(v_max - b) / tau`` times that ulp, so residuals below
    ten such kicks are rounding noise.
    """
    R = list(scenario.params.R)
    gain = float(np.max(scenario.eq.v_max[R] - scenario.ctrl.b)) / scenario.ctrl.tau
    ulp = np.finfo(float).eps * float(np.max(scenario.params.a))
    return max(NUMERICAL_ZERO, 10.0 * gain * ulp)


def detect_deadbeat(theta_hat: np.ndarray, true_theta: np.ndarray, tol: float = LOCK_TOL) -> Optional[int]:
    """First time after which every logged estimate stays within ``tol`` of the truth."""
    err = np.max(np.abs(np.asarray(theta_hat) - np.asarray(true_theta)), axis=1)
    bad = np.flatnonzero(~(err <= tol))
    if bad.size == 0:
        return 0
    lock = int(bad[-1]) + 1
    return lock if lock < err.size else None


# -- trajectory CSV --------------------------------------------------------------

def csv_columns(scenario: Scenario) -> list[str]:
    p = scenario.params
    n = p.n
    cols = ["t"]
    cols += [f"x_{i}" for i in range(1, n + 1)]
    cols += [f"u_{i + 1}" for i in p.R]
    cols += [f"d_{i}" for i in range(2, n + 1)]
    cols += [f"qout_{i}" for i in range(1, n + 1)]
    cols += [f"qlink_{i}" for i in range(1, n)]
    cols += [f"Phat_{i}" for i in range(1, n)]
    cols += [f"rhat_{i}" for i in range(1, n + 1)]
    cols += [f"vhat_{i + 1}" for i in p.uncontrolled]
    cols += ["Xi", "inA"]
    return cols


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_rows(traj: Trajectory, scenario: Scenario) -> list[list[str]]:
    n = scenario.params.n
    m_unc = len(scenario.params.uncontrolled)
    H = traj.horizon
    rows = []
    for t in range(H + 1):
        step_cols = [traj.u, traj.d, traj.q_out, traj.q_link]
        per_step = []
        for arr in step_cols:
            per_step += list(arr[t]) if t < H else [math.nan] * arr.shape[1]
        th = traj.theta[t]
        P_hat, v_hat, r_hat = th[: n - 1], th[n - 1: n - 1 + m_unc], th[n - 1 + m_unc:]
        xi_t = traj.xi[t] if t < H else math.nan
        row = [str(t)] + [_fmt(v) for v in traj.x[t]] + [_fmt(v) for v in per_step]
        row += [_fmt(v) for v in (*P_hat, *r_hat, *v_hat)]
        row += [_fmt(xi_t), str(int(traj.in_A[t]))]
        rows.append(row)
    return rows


def write_trajectory_csv(path, traj: Trajectory, scenario: Scenario) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_columns(scenario))
        writer.writerows(trajectory_rows(traj, scenario))
    return path


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Column name -> array; ``t`` and ``inA`` come back as integers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [row for row in reader]
    out = {}
    for j, name in enumerate(header):
        col = [row[j] for row in data]
        out[name] = np.array(col, dtype=int if name in ("t", "inA") else float)
    return out


# -- run summaries -----------------------------------------------------------------

@dataclass
class RunSummary:
    scenario_id: str
    status: str
    deadbeat_lock_time: Optional[int]
    first_hit: Optional[int]
    sigma_fit: Optional[float]
    M_fit: Optional[float]
    r_squared: Optional[float]
    fit_points: int
    converged_exactly: bool
    residual_ratio: float
    max_theta_error_after_lock: Optional[float]
    state_violations: int
    max_gap: Optional[int]
    C: Optional[float]
    m_bound: Optional[int]
    m_bound_note: str
    wall_time: float
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def fit_pass(self) -> bool:
        if self.converged_exactly and self.sigma_fit is None:
            return True
        return bool(self.sigma_fit is not None and self.sigma_fit > 0
                    and self.r_squared is not None and self.r_squared >= MIN_R2)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def summarize(scenario: Scenario, traj: Trajectory, wall_time: float = 0.0,
              contraction_samples: int = 0) -> RunSummary:
    p = scenario.params
    truth = scenario.theta.as_vector()
    lock = detect_deadbeat(traj.theta, truth) if traj.status == "ok" else None
    res = composite_residual(traj, scenario)
    t = np.arange(res.size)
    fit = fit_exponential(t, res, lock, numerical_zero(scenario)) if lock is not None else FitResult(None, None, None, 0)
    ratio = float(res[-1] / res[0]) if res[0] > 0 else 0.0
    drift = None
    if lock is not None:
        drift = float(np.max(np.abs(traj.theta[lock:] - truth)))
    xs = traj.x[np.all(np.isfinite(traj.x), axis=1)]
    violations = int(np.sum(np.any((xs <= 0) | (xs > p.a), axis=1)))
    hits = traj.in_A
    gaps = recurrence_gaps(hits)
    C = m = None
    note = "not computed"
    if contraction_samples:
        C = contraction_check(p, scenario.eq.v_max, contraction_samples, scenario.seed).C
        try:
            m = m_bound(p, scenario.eq, C)
            note = "ok"
        except (InfeasibleError, DomainError) as exc:
            note = str(exc)
    summary = RunSummary(
        scenario_id=scenario.id, status=traj.status, deadbeat_lock_time=lock,
        first_hit=first_hit(hits), sigma_fit=fit.sigma, M_fit=fit.M, r_squared=fit.r_squared,
        fit_points=fit.points, converged_exactly=fit.converged_exactly, residual_ratio=ratio,
        max_theta_error_after_lock=drift, state_violations=violations,
        max_gap=int(gaps.max()) if gaps.size else None, C=C, m_bound=m, m_bound_note=note,
        wall_time=wall_time,
    )
    summary.checks = {
        "completed": traj.status == "ok",
        "deadbeat_lock": lock is not None and drift is not None and drift <= LOCK_TOL,
        "in_S": violations == 0,
        "converges": summary.fit_pass or ratio < FALLBACK_RATIO,
    }
    if m is not None:
        summary.checks["recurrence_gap"] = summary.max_gap is None or summary.max_gap <= m + 1
    return summary


def run_scenario(scenario: Scenario, out_dir=None, contraction_samples: int = 0,
                 svg: bool = False) -> tuple[RunSummary, Trajectory]:
    start = time.perf_counter()
    traj = simulate(scenario)
    elapsed = time.perf_counter() - start
    summary = summarize(scenario, traj, elapsed, contraction_samples)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_trajectory_csv(out_dir / f"{scenario.id}.csv", traj, scenario)
        if svg:
            from .plots import write_svgs
            write_svgs(out_dir, scenario, traj, summary)
    return summary, traj


# -- batteries ---------------------------------------------------------------------

SUMMARY_FIELDS = [
    "scenario_id", "status", "passed", "deadbeat_lock_time", "first_hit", "sigma_fit", "M_fit",
    "r_squared", "fit_points", "converged_exactly", "residual_ratio",
    "max_theta_error_after_lock", "state_violations", "max_gap", "C", "m_bound",
    "m_bound_note", "wall_time",
]


@dataclass
class BatteryResult:
    summaries: list[RunSummary]
    failures: dict[str, str]

    @property
    def fit_pass_share(self) -> float:
        ok = [s for s in self.summaries if s.status == "ok"]
        if not self.summaries:
            return 1.0
        return sum(s.fit_pass for s in ok) / len(self.summaries)

    @property
    def passed(self) -> bool:
        return (not self.failures and all(s.passed for s in self.summaries)
                and self.fit_pass_share >= FIT_PASS_SHARE)

    def table(self) -> list[dict[str, Any]]:
        rows = []
        for s in self.summaries:
            d = asdict(s)
            d["passed"] = s.passed
            rows.append({k: d[k] for k in SUMMARY_FIELDS})
        for sid, err in self.failures.items():
            rows.append({k: None for k in SUMMARY_FIELDS} | {"scenario_id": sid, "status": err,
                                                             "passed": False})
        return rows


def battery_scenarios(battery: Mapping[str, Any], base_dir=".") -> list[dict]:
    """Expand a battery description into scenario dictionaries.

    ``scenarios`` lists file paths (relative to ``base_dir``) or inline
    scenario objects; ``generate`` asks for random instances.
    """
    out: list[dict] = []
    for item in battery.get("scenarios", []):
        if isinstance(item, str):
            path = Path(base_dir) / item
            d = read_json(path)
            d.setdefault("id", path.stem)
            out.append(d)
        elif isinstance(item, Mapping):
            out.append(dict(item))
        else:
            raise ConfigError(f"battery entry must be a path or object, got {item!r}")
    gen = battery.get("generate")
    if gen:
        rng = np.random.default_rng(gen.get("seed", 0))
        n_values = gen.get("n_values", [3, 4, 5, 6])
        policies = gen.get("policies", ["constant", "iid", "sequence", "adversarial"])
        for k in range(int(gen.get("count", 0))):
            n = int(n_values[k % len(n_values)])
            policy = policies[(k // len(n_values)) % len(policies)]
            d = random_scenario_dict(rng, n, policy, horizon=int(gen.get("horizon", 500)),
                                     seed=int(gen.get("seed", 0)) * 100_003 + k,
                                     epsilon=float(gen.get("epsilon", 0.1)))
            d["id"] = f"gen{k:03d}-n{n}-{policy}"
            out.append(d)
    return out


def _run_one(args) -> tuple[str, Optional[RunSummary], Optional[str]]:
    d, out_dir, samples = args
    sid = str(d.get("id", "scenario"))
    try:
        scenario = scenario_from_dict(d)
    except (ConfigError, DomainError, KeyError, TypeError) as exc:
        return sid, None, f"invalid: {exc}"
    summary, _ = run_scenario(scenario, out_dir, samples)
    return sid, summary, None


def run_battery(battery: Mapping[str, Any], out_dir=None, base_dir=".",
                workers: Optional[int] = None) -> BatteryResult:
    """Run every scenario of a battery, isolating per-scenario failures."""
    dicts = battery_scenarios(battery, base_dir)
    samples = int(battery.get("contraction_samples", 0))
    jobs = [(d, out_dir, samples) for d in dicts]
    if workers == 1 or len(jobs) <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    summaries, failures = [], {}
    for sid, summary, err in results:
        if err is not None:
            failures[sid] = err
        else:
            summaries.append(summary)
    result = BatteryResult(summaries, failures)
    if out_dir is not None:
        write_summary_csv(Path(out_dir) / "summary.csv", result.table())
    return result


def write_summary_csv(path, rows: Sequence[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["scenario_id", "status", "passed"] + [
            f for f in SUMMARY_FIELDS if f not in ("scenario_id", "status", "passed")])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return path
