"""Closed-loop car-following scenario.

The world integrates at ``sim_rate`` with zero-order-hold ego commands. A
fused headway estimate is taken every ``estimate_spacing`` seconds into a
two-deep buffer, and the controller replans every ``replan_period`` seconds
from the two buffered estimates.
"""
from __future__ import annotations

import csv
import logging
import math
import sys
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import DomainError, ScenarioError
from ..kinematics import (
    A_MAX, A_MIN, V_MAX, V_MIN, ControlInput, SpeedTrajectory, VehicleGeometry,
    VehicleState, bumper_headway, lead_speed_at, step_kinematics,
)
from ..perception import Ensemble, SensorModel, synth_observe
from ..propagation import BeliefState, bootstrap_relative_speed
from ..smpc import MpcConfig, mpc_step
from .metrics import MetricsReport, compute_metrics
from .trajectories import check_accel_range, load_trajectories, synthetic_trajectory

log = logging.getLogger(__name__)

AUTO_MEAN = "auto-mean"


@dataclass(frozen=True)
class ScenarioConfig:
    # a SpeedTrajectory, {"file": path, "id": optional} or {"synthetic": {generator kwargs}}
    lead_trajectory: Union[SpeedTrajectory, dict] = field(default_factory=lambda: {"synthetic": {"seed": 0}})
    initial_headway: float = 5.0
    initial_speed_difference: float = 5.0  # ego speed minus lead speed at t = 0
    v_s: Union[float, str] = AUTO_MEAN
    mpc: MpcConfig = field(default_factory=MpcConfig)
    sensor: Optional[SensorModel] = None  # None: the sensor stored with the ensemble
    ensemble: Optional[str] = None
    sim_rate: float = 100.0
    replan_period: float = 0.5
    estimate_spacing: float = 1.0
    duration: float = 20.0
    ood: bool = False
    seed: int = 0
    warm_start: bool = True
    lead_length: float = 4.8
    ego_length: float = 4.8
    dump_qp: Optional[str] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise DomainError(f"duration must be positive, got {self.duration}")
        if not (self.sim_rate > 0 and self.replan_period > 0 and self.estimate_spacing > 0):
            raise DomainError("sim_rate, replan_period and estimate_spacing must be positive")
        if self.sim_rate < 1.0 / self.replan_period:
            raise DomainError("sim_rate must be at least one frame per replan period")
        if not math.isclose(self.estimate_spacing, self.mpc.dt, rel_tol=1e-12):
            raise DomainError(
                f"estimate_spacing {self.estimate_spacing} must equal the controller dt {self.mpc.dt}"
            )
        for name in ("replan_period", "estimate_spacing"):
            frames = getattr(self, name) * self.sim_rate
            if abs(frames - round(frames)) > 1e-9:
                raise DomainError(f"{name} must be a whole number of simulation frames")
        if not self.initial_headway > 0:
            raise DomainError("initial_headway must be positive")
        if isinstance(self.v_s, str) and self.v_s != AUTO_MEAN:
            raise DomainError(f"v_s must be a number or {AUTO_MEAN!r}, got {self.v_s!r}")


@dataclass(frozen=True)
class StepRecord:
    t: float
    x_lead: float
    v_lead: float
    x_ego: float
    v_ego: float
    d_true: float
    p_est: float
    var_est: float
    a_cmd: float
    deltas: tuple
    plan_id: int
    pred_err: float

    @property
    def lead(self) -> VehicleState:
        return VehicleState(self.x_lead, self.v_lead)

    @property
    def ego(self) -> VehicleState:
        return VehicleState(self.x_ego, self.v_ego)

    @property
    def dv(self) -> float:
        """Lead minus ego speed."""
        return self.v_lead - self.v_ego


def resolve_lead(cfg: ScenarioConfig) -> SpeedTrajectory:
    src = cfg.lead_trajectory
    if isinstance(src, SpeedTrajectory):
        return src
    if "file" in src:
        trajs = load_trajectories(src["file"])
        want = src.get("id")
        if want is None:
            return trajs[0]
        for tr in trajs:
            if tr.name == str(want):
                return tr
        raise DomainError(f"trajectory id {want!r} not found in {src['file']}")
    if "synthetic" in src:
        return synthetic_trajectory(**src["synthetic"])
    raise DomainError("lead_trajectory needs a 'file' or 'synthetic' entry")


def resolve_set_speed(cfg: ScenarioConfig, lead: SpeedTrajectory) -> float:
    if cfg.v_s == AUTO_MEAN:
        return lead.mean_speed
    return float(cfg.v_s)


_ENSEMBLE_CACHE: dict = {}


def resolve_ensemble(cfg: ScenarioConfig) -> Ensemble:
    if cfg.ensemble is not None:
        return Ensemble.load(cfg.ensemble)
    # no file given: train the default ensemble in-process (deterministic, cached per sensor)
    from ..perception import build_ensemble, generate_training_set

    sensor = cfg.sensor or SensorModel()
    key = repr(sensor)
    if key not in _ENSEMBLE_CACHE:
        log.info("no ensemble file configured; training the default ensemble in-process")
        data = generate_training_set(sensor, 20706, seed=sensor.seed)
        _ENSEMBLE_CACHE[key] = Ensemble(build_ensemble(data), sensor)
    return _ENSEMBLE_CACHE[key]


def run_scenario(cfg: ScenarioConfig, ensemble: Optional[Ensemble] = None,
                 lead: Optional[SpeedTrajectory] = None) -> tuple[list[StepRecord], MetricsReport]:
    """Simulate one scenario; deterministic in ``(cfg, ensemble)``.

    Any failure raises :class:`ScenarioError` carrying the frames recorded so far.
    """
    records: list[StepRecord] = []
    try:
        lead = lead or resolve_lead(cfg)
        ensemble = ensemble or resolve_ensemble(cfg)
        v_s = resolve_set_speed(cfg, lead)
        mpc = replace(cfg.mpc, v_s=v_s)
        _simulate(cfg, mpc, ensemble, lead, records)
    except ScenarioError:
        raise
    except Exception as exc:
        raise ScenarioError(f"scenario aborted at frame {len(records)}: {exc}", records) from exc
    report = compute_metrics(records, mpc.d_s, mpc.T_s, v_s, cfg.replan_period)
    return records, report


def _simulate(cfg: ScenarioConfig, mpc: MpcConfig, ensemble: Ensemble,
              lead_traj: SpeedTrajectory, records: list) -> None:
    sensor = cfg.sensor or ensemble.sensor
    rng = np.random.default_rng(cfg.seed)
    h = 1.0 / cfg.sim_rate
    n_frames = int(round(cfg.duration * cfg.sim_rate))
    est_every = int(round(cfg.estimate_spacing * cfg.sim_rate))
    plan_every = int(round(cfg.replan_period * cfg.sim_rate))
    g_lead, g_ego = VehicleGeometry(cfg.lead_length), VehicleGeometry(cfg.ego_length)
    check_accel_range(lead_traj)

    v_lead0 = lead_speed_at(lead_traj, 0.0)
    v_ego0 = v_lead0 + cfg.initial_speed_difference
    if not (V_MIN <= v_ego0 <= V_MAX):
        log.warning("initial ego speed %.3f clipped to [%g, %g]", v_ego0, V_MIN, V_MAX)
        v_ego0 = min(max(v_ego0, V_MIN), V_MAX)
    lead = VehicleState(cfg.initial_headway + 0.5 * (g_lead.length + g_ego.length), v_lead0)
    ego = VehicleState(0.0, v_ego0)

    def observe(d_true: float):
        obs = synth_observe(sensor, max(d_true, 1e-3), cfg.ood, rng)
        return ensemble.estimate(obs)

    buf: deque = deque(maxlen=2)  # (t, p, var, v_ego)
    if cfg.warm_start:
        # constant-speed history: one estimate spacing earlier the gap was wider by the closing speed
        d_back = cfg.initial_headway + (v_ego0 - v_lead0) * cfg.estimate_spacing
        est = observe(d_back)
        buf.append((-cfg.estimate_spacing, est.p, est.var, v_ego0))

    cmd = 0.0
    plan_id = -1
    deltas = tuple([math.nan] * mpc.N)
    origin = None  # (t_est, p, p_rel, a0) of the active plan
    p_est = var_est = math.nan
    n_clipped = 0
    dump_dir = Path(cfg.dump_qp) if cfg.dump_qp else None
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)

    for k in range(n_frames + 1):
        t = k * h
        d_true = bumper_headway(lead, ego, g_lead, g_ego)
        if k % est_every == 0:
            est = observe(d_true)
            p_est, var_est = est.p, est.var
            buf.append((t, est.p, est.var, ego.v))
        if k % plan_every == 0 and len(buf) == 2:
            (t0, p0, var0, ve0), (t1, p1, var1, ve1) = buf
            belief = BeliefState(p0, var0, p1, var1, (ve1 - ve0) / mpc.dt, mpc.dt)
            plan_id += 1
            dump = dump_dir / f"qp_{plan_id:05d}.txt" if dump_dir is not None else None
            sol = mpc_step(mpc, belief, ego.v, a_prev=cmd, prev_command=cmd, dump_path=dump)
            cmd = sol.command
            deltas = tuple(float(x) for x in sol.slacks)
            origin = (t1, p1, bootstrap_relative_speed(belief)[0], float(sol.accelerations[0]))
        pred_err = math.nan
        if origin is not None:
            tau = t - origin[0]
            pred_err = d_true - (origin[1] + origin[2] * tau - 0.5 * origin[3] * tau * tau)
        records.append(StepRecord(t, lead.x, lead.v, ego.x, ego.v, d_true, p_est, var_est,
                                  cmd, deltas, plan_id, pred_err))
        if k == n_frames:
            break
        a_lead = (lead_speed_at(lead_traj, t + h) - lead.v) / h
        if not (A_MIN <= a_lead <= A_MAX):
            n_clipped += 1
            a_lead = min(max(a_lead, A_MIN), A_MAX)
        lead = step_kinematics(lead, ControlInput(a_lead), h)
        ego = step_kinematics(ego, ControlInput(cmd), h)
    if n_clipped:
        log.warning("lead acceleration clipped to [%g, %g] on %d frames", A_MIN, A_MAX, n_clipped)


# --- records CSV -------------------------------------------------------------

_BASE = ["t", "x_lead", "v_lead", "x_ego", "v_ego", "d_true", "p_est", "var_est", "a_cmd"]


def records_header(n: int) -> list[str]:
    return _BASE + [f"delta{i}" for i in range(1, n + 1)] + ["plan_id", "pred_err"]


def write_records(records: list[StepRecord], path) -> None:
    n = len(records[0].deltas) if records else 0
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(records_header(n))
        for r in records:
            w.writerow([repr(float(getattr(r, c))) for c in _BASE]
                       + [repr(float(x)) for x in r.deltas] + [r.plan_id, repr(float(r.pred_err))])


def read_records(path) -> list[StepRecord]:
    path = Path(path)
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    if not rows:
        raise DomainError(f"{path}: empty records file")
    header = rows[0]
    n = sum(1 for c in header if c.startswith("delta"))
    if header != records_header(n):
        raise DomainError(f"{path}:1: unexpected records header")
    out = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DomainError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(x) for x in row[:len(_BASE)]]
            deltas = tuple(float(x) for x in row[len(_BASE):len(_BASE) + n])
            plan_id = int(row[len(_BASE) + n])
            pred_err = float(row[-1])
        except ValueError as exc:
            raise DomainError(f"{path}:{line}: {exc}") from None
        out.append(StepRecord(*vals, deltas, plan_id, pred_err))
    return out


# --- config file -------------------------------------------------------------

_TOP_KEYS = {
    "initial_headway", "initial_speed_difference", "v_s", "ensemble", "sim_rate",
    "replan_period", "estimate_spacing", "duration", "ood", "seed", "warm_start",
    "lead_length", "ego_length", "dump_qp",
}


def scenario_from_dict(data: dict, base_dir=None) -> ScenarioConfig:
    data = dict(data)
    base = Path(base_dir) if base_dir is not None else None

    def rel(p):
        p = Path(p)
        return str(p if p.is_absolute() or base is None else base / p)

    kw = {}
    mpc = data.pop("mpc", {})
    if "eps" in mpc:
        mpc["eps"] = tuple(mpc["eps"])
    kw["mpc"] = MpcConfig.from_dict(mpc)
    sensor = data.pop("sensor", None)
    if sensor is not None:
        kw["sensor"] = SensorModel.from_dict(sensor)
    lead = data.pop("lead_trajectory", None)
    if lead is not None:
        lead = dict(lead)
        if "file" in lead:
            lead["file"] = rel(lead["file"])
        elif "synthetic" in lead:
            lead["synthetic"] = dict(lead["synthetic"])
        else:
            raise DomainError("[lead_trajectory] needs 'file' or a [lead_trajectory.synthetic] table")
        kw["lead_trajectory"] = lead
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise DomainError(f"unknown scenario settings: {sorted(unknown)}")
    for key, val in data.items():
        if key in ("ensemble", "dump_qp"):
            val = rel(val)
        kw[key] = val
    return ScenarioConfig(**kw)


def load_scenario_config(path) -> ScenarioConfig:
    path = Path(path)
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise DomainError(f"{path}: {exc}") from None
    return scenario_from_dict(data, base_dir=path.parent)
