"""Run one scenario per lead trace and aggregate the metrics."""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from ..errors import DomainError, ScenarioError
from ..kinematics import SpeedTrajectory
from ..perception import Ensemble
from .metrics import ACCEL_EDGES, JERK_EDGES, TOC_EDGES, TTS_EDGES, histogram, jerk_series, time_to_collision
from .scenario import AUTO_MEAN, ScenarioConfig, resolve_ensemble, run_scenario, write_records
from .trajectories import filter_trajectories

log = logging.getLogger(__name__)

SUMMARY_FIELDS = [
    "name", "status", "v_s", "min_headway", "collision", "min_toc", "time_to_safety",
    "safety_reached", "max_abs_jerk", "max_abs_accel", "mean_speed", "speed_rms_error",
    "n_frames", "error",
]


@dataclass
class BatchResult:
    rows: list
    out_dir: Path

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["status"] != "ok")


def _fmt(val) -> str:
    if val is None:
        return ""
    if isinstance(val, float):
        return repr(val)
    return str(val)


def batch_run(template: ScenarioConfig, trajectories: Sequence[SpeedTrajectory], out_dir,
              min_std: float = 4.0, ensemble: Optional[Ensemble] = None) -> BatchResult:
    """Filter the traces, run one scenario each (``v_s`` = trace mean) and write outputs.

    Layout of ``out_dir``::

        <name>/records.csv, <name>/metrics.json   one pair per scenario
        summary.csv                                one row per scenario
        histograms.csv                             panel,lo,hi,count for toc/tts/accel/jerk

    A failing scenario is logged, keeps its partial records and gets a
    ``failed`` summary row; the batch carries on.
    """
    kept = filter_trajectories(trajectories, min_std)
    if not kept:
        raise DomainError(
            f"no trajectories left after the variability filter (speed std > {min_std:g} m/s); "
            f"{len(trajectories)} supplied"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ensemble = ensemble or resolve_ensemble(template)
    template = replace(template, v_s=AUTO_MEAN)

    rows, tocs, ttss, accels, jerks = [], [], [], [], []
    for k, traj in enumerate(kept):
        safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", traj.name)
        name = f"{k:03d}_{safe}" if safe else f"{k:03d}"
        sub = out_dir / name
        sub.mkdir(exist_ok=True)
        cfg = replace(template, lead_trajectory=traj)
        row = {"name": name, "v_s": traj.mean_speed}
        try:
            records, report = run_scenario(cfg, ensemble=ensemble, lead=traj)
        except ScenarioError as exc:
            log.error("scenario %s failed: %s", name, exc)
            write_records(exc.records, sub / "records.csv")
            row.update(status="failed", error=str(exc))
            rows.append(row)
            continue
        write_records(records, sub / "records.csv")
        (sub / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
        row.update(status="ok", error="", **{f: getattr(report, f) for f in SUMMARY_FIELDS
                                             if hasattr(report, f)})
        rows.append(row)
        tocs.extend(x for x in (time_to_collision(r) for r in records) if x is not None)
        ttss.append(report.time_to_safety)
        accels.extend(r.a_cmd for r in records)
        jerks.extend(jerk_series(records, cfg.replan_period))

    with (out_dir / "summary.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in rows:
            w.writerow([_fmt(row.get(f)) for f in SUMMARY_FIELDS])

    panels = (("toc", tocs, TOC_EDGES), ("tts", ttss, TTS_EDGES),
              ("accel", accels, ACCEL_EDGES), ("jerk", jerks, JERK_EDGES))
    with (out_dir / "histograms.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["panel", "lo", "hi", "count"])
        for panel, values, edges in panels:
            h = histogram(values, edges)
            for lo, hi, c in zip(h["edges"], h["edges"][1:], h["counts"]):
                w.writerow([panel, repr(lo), repr(hi), c])
    (out_dir / "batch.json").write_text(json.dumps({
        "n_supplied": len(trajectories), "n_kept": len(kept), "min_std": min_std,
        "n_failed": sum(1 for r in rows if r["status"] != "ok"),
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return BatchResult(rows, out_dir)
