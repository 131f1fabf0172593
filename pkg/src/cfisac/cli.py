"""Batch experiment runner.

``cfisac run`` loads a scenario, sweeps one configuration parameter over a list
of values, runs the allocation for every mode and detector on every random drop,
optionally measures the detection probability, and writes CSV files:

* ``results.csv``: one row per (sweep value, drop, mode, detector)
* ``energy_breakdown.csv``: per-row energy components
* ``availability.csv``: fraction of feasible drops per (sweep value, mode, detector)
* ``timing.csv``: wall-clock times, kept apart so the other files are reproducible

Every file starts with one ``#`` metadata line. Exit status is 0 on success,
2 when some sweep point has no feasible row and 1 on error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime
import json
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .detection import DetectorError, evaluate_detectors
from .energy import EnergyReport
from .kinds import DetectorKind, Mode
from .moments import DEFAULT_N_MC, estimate_moments
from .optimizer import AlgorithmOptions, run_algorithm1
from .scenario import PRESETS, ScenarioError, build_scenario, load_config

RESULT_COLUMNS = (
    "sweep_param", "sweep_value", "drop", "mode", "detector", "feasible", "L_max", "L_opt",
    "refresh_rate", "rho", "p_total_tx", "e_total", "e_transmit", "eps_ub", "sensing_sinr_db",
    "c_cloud_gops", "n_gpp", "p_d", "p_d_stderr", "threshold", "iterations", "converged",
)
BREAKDOWN_COLUMNS = (
    "sweep_param", "sweep_value", "drop", "mode", "detector", "e_tx_aps", "e_rx_aps",
    "e_comm_proc", "e_sensing_proc", "e_others", "e_total",
)
AVAILABILITY_COLUMNS = ("sweep_param", "sweep_value", "mode", "detector", "n_drops", "n_feasible",
                        "availability")
TIMING_COLUMNS = ("sweep_value", "drop", "mode", "detector", "wall_time_s")

# alternative spellings accepted at a sweep path's leaf
_ALIASES = {"sinr_threshold": "sinr_threshold_db", "noise_power": "noise_power_dbm"}


class CliError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    param: str | None
    values: tuple
    modes: tuple[Mode, ...]
    detectors: tuple[DetectorKind, ...]
    n_drops: int
    seed: int


@dataclass(frozen=True)
class RunSettings:
    n_mc: int = DEFAULT_N_MC
    n_trials: int = 0
    options: AlgorithmOptions = AlgorithmOptions()
    jobs: int = 1


def parse_sweep(text: str | None) -> tuple[str | None, tuple]:
    """``"sensing.sinr_threshold_db=-4,0,4"`` -> ``("sensing.sinr_threshold_db", (-4.0, 0.0, 4.0))``."""
    if not text:
        return None, (None,)
    if "=" not in text:
        raise CliError(f"sweep must look like param=v1,v2,...: {text!r}")
    param, vals = text.split("=", 1)
    items = [v.strip() for v in vals.replace(";", ",").split(",") if v.strip()]
    if not items:
        raise CliError(f"sweep {param!r} has no values")
    out = []
    for v in items:
        try:
            out.append(json.loads(v))
        except json.JSONDecodeError:
            out.append(v)
    return param.strip(), tuple(out)


def set_path(doc: dict, path: str, value) -> dict:
    """Copy of ``doc`` with the dotted ``path`` set; the path must resolve."""
    out = copy.deepcopy(doc)
    keys = path.split(".")
    node = out
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node or not isinstance(node[k], dict):
            raise CliError(f"sweep path {path!r} does not resolve in the scenario schema")
        node = node[k]
    leaf = keys[-1]
    if leaf not in node:
        if leaf in _ALIASES and _ALIASES[leaf] in node:
            node.pop(_ALIASES[leaf])
        else:
            raise CliError(f"sweep path {path!r} does not resolve in the scenario schema")
    node[leaf] = value
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_fmt(x) for x in v)
    return "" if v is None else str(v)


def _db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else -math.inf


def _run_point(args):
    """One (sweep value, drop): all modes and detectors on shared statistics."""
    doc, param, value, drop, spec, settings = args
    scenario = build_scenario(doc, master_seed=spec.seed, drop=drop)
    stats = estimate_moments(scenario, settings.n_mc)
    rows, parts, times = [], [], []
    for mode in spec.modes:
        for kind in spec.detectors:
            res = run_algorithm1(scenario, stats, mode, settings.options, kind)
            p_d = stderr = thr = math.nan
            if res.feasible and mode.has_sensing and settings.n_trials > 0:
                try:
                    det = evaluate_detectors(scenario, res.rho_opt, res.plan.L_d, (kind,),
                                             n_calibrate=settings.n_trials, n_trials=settings.n_trials)
                    p_d, stderr, thr = det[kind].pd.value, det[kind].pd.stderr, det[kind].threshold
                except DetectorError:
                    pass
            e: EnergyReport | None = res.energy
            ver = res.verification
            key = (_fmt(param), _fmt(value), drop, mode.value, kind.value)
            rows.append(dict(zip(RESULT_COLUMNS, key + (
                res.feasible, res.L_max, res.L_opt,
                scenario.radio.bandwidth / res.L_opt if res.L_opt else math.nan,
                res.rho_opt if res.rho_opt.size else math.nan,
                float(np.sum(res.rho_opt)) if res.rho_opt.size else math.nan,
                res.objective, e.e_transmit if e else math.nan,
                ver.dep_ub if ver else math.nan,
                _db(ver.sensing_sinr) if ver and mode.has_sensing else math.nan,
                e.c_cloud if e else math.nan, e.n_gpp if e else 0,
                p_d, stderr, thr, res.iterations, res.converged))))
            if e is not None:
                parts.append(dict(zip(BREAKDOWN_COLUMNS, key + (
                    e.e_tx_aps, e.e_rx_aps, e.e_comm_proc, e.e_sensing_proc, e.e_others, e.e_total))))
            times.append((_fmt(value), drop, mode.value, kind.value, round(res.wall_time, 3)))
    return rows, parts, times


def run_experiment(config: str | Path | dict | None, spec: SweepSpec, out: str | Path,
                   settings: RunSettings = RunSettings(), preset: str | None = None) -> dict:
    """Run the sweep and write the CSV files into ``out``.

    Returns a summary with the row lists and the sweep values without any
    feasible row.
    """
    doc = _document(config, preset)
    tasks = []
    for value in spec.values:
        point_doc = doc if spec.param is None else set_path(doc, spec.param, value)
        # validate before spending time on the run
        build_scenario(point_doc, master_seed=spec.seed, drop=0)
        for drop in range(spec.n_drops):
            tasks.append((point_doc, spec.param, value, drop, spec, settings))
    if settings.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(settings.jobs) as pool:
            outputs = list(pool.map(_run_point, tasks))
    else:
        outputs = [_run_point(t) for t in tasks]
    rows = [r for o in outputs for r in o[0]]
    parts = [p for o in outputs for p in o[1]]
    times = [t for o in outputs for t in o[2]]

    avail = []
    infeasible_points = []
    for value in spec.values:
        sv = _fmt(value)
        point_rows = [r for r in rows if r["sweep_value"] == sv]
        if not any(r["feasible"] for r in point_rows):
            infeasible_points.append(value)
        for mode in spec.modes:
            for kind in spec.detectors:
                sel = [r for r in point_rows if r["mode"] == mode.value and r["detector"] == kind.value]
                nf = sum(bool(r["feasible"]) for r in sel)
                avail.append(dict(zip(AVAILABILITY_COLUMNS, (
                    _fmt(spec.param), sv, mode.value, kind.value, len(sel), nf,
                    nf / len(sel) if sel else math.nan))))

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _metadata(spec, doc["preset"])
    _write(out / "results.csv", RESULT_COLUMNS, rows, meta)
    _write(out / "energy_breakdown.csv", BREAKDOWN_COLUMNS, parts, meta)
    _write(out / "availability.csv", AVAILABILITY_COLUMNS, avail, meta)
    _write(out / "timing.csv", TIMING_COLUMNS, [dict(zip(TIMING_COLUMNS, t)) for t in times],
           meta + f" created={datetime.datetime.now(datetime.timezone.utc).isoformat()}")
    return {"rows": rows, "breakdown": parts, "availability": avail,
            "infeasible_points": infeasible_points}


def _document(config, preset: str | None) -> dict:
    """Merged config document; ``preset`` overrides the config's own base."""
    if config is None:
        raw: dict = {}
    elif isinstance(config, dict):
        raw = dict(config)
    else:
        path = Path(config)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ScenarioError(f"config parse failure in {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ScenarioError("config root must be an object")
    if preset:
        raw["preset"] = preset
    name = raw.get("preset", "paper-default")
    doc = load_config(raw)
    doc["preset"] = name
    return doc


def energy_breakdown(rows: Sequence) -> list[dict]:
    """Per-row energy components (J) from allocation results.

    ``rows`` holds :class:`~cfisac.optimizer.AllocationResult` objects; rows
    without an energy report are skipped.
    """
    out = []
    for res in rows:
        e = res.energy
        if e is None:
            continue
        out.append({"mode": res.mode.value, "detector": res.kind.value, "e_tx_aps": e.e_tx_aps,
                    "e_rx_aps": e.e_rx_aps, "e_comm_proc": e.e_comm_proc,
                    "e_sensing_proc": e.e_sensing_proc, "e_others": e.e_others,
                    "e_total": e.e_total})
    return out


def _git_hash() -> str:
    try:
        res = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _metadata(spec: SweepSpec, preset: str) -> str:
    return (f"# cfisac {__version__} git={_git_hash()} seed={spec.seed} preset={preset} "
            f"sweep={spec.param or 'none'} drops={spec.n_drops}")


def _write(path: Path, columns, rows, meta: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(meta + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfisac", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an allocation sweep and write CSV files")
    r.add_argument("--config", help="JSON config file (fields override the preset)")
    r.add_argument("--preset", choices=sorted(PRESETS), default=None)
    r.add_argument("--sweep", help="param=v1,v2,... (dotted config path)")
    r.add_argument("--modes", default=",".join(m.value for m in Mode))
    r.add_argument("--detectors", default=",".join(k.value for k in DetectorKind))
    r.add_argument("--drops", type=int, default=1)
    r.add_argument("--seed", type=int, default=42)
    r.add_argument("--out", required=True)
    r.add_argument("--n-mc", type=int, default=DEFAULT_N_MC, help="Monte Carlo realizations for statistics")
    r.add_argument("--trials", type=int, default=0, help="detection trials per row (0 skips)")
    r.add_argument("--epsilon", type=float, default=AlgorithmOptions.epsilon)
    r.add_argument("--eps-chi", type=float, default=AlgorithmOptions.eps_chi)
    r.add_argument("--penalty", type=float, default=AlgorithmOptions.penalty, help="slack penalty lambda")
    r.add_argument("--c-max", type=int, default=AlgorithmOptions.c_max)
    r.add_argument("--fixed-L", type=int, default=None, help="fix the blocklength instead of optimising it")
    r.add_argument("--jobs", type=int, default=1)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        param, values = parse_sweep(args.sweep)
        if args.drops < 1:
            raise CliError("--drops must be >= 1")
        spec = SweepSpec(param, values, tuple(Mode.parse(m) for m in _csv_list(args.modes)),
                         tuple(DetectorKind.parse(k) for k in _csv_list(args.detectors)),
                         args.drops, args.seed)
        opts = AlgorithmOptions(epsilon=args.epsilon, eps_chi=args.eps_chi, penalty=args.penalty,
                                c_max=args.c_max, fixed_L=args.fixed_L)
        settings = RunSettings(args.n_mc, args.trials, opts, max(1, args.jobs))
        summary = run_experiment(args.config, spec, args.out, settings, args.preset)
    except (CliError, ScenarioError, ValueError, OSError) as exc:
        print(f"cfisac: error: {exc}", file=sys.stderr)
        return 1
    if summary["infeasible_points"]:
        print("cfisac: no feasible allocation at sweep value(s) "
              + ", ".join(_fmt(v) for v in summary["infeasible_points"]), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
