"""Command-line pipeline: calibrate, learn, train, simulate, evaluate, gradcheck, report.

Every command writes its outputs plus a ``manifest.json`` under the output
root (``--out``, else ``$IMPRSL_OUT``, else ``./runs``). Outputs are a pure
function of (command, resolved config, seed); only the manifest timestamp
varies between reruns.

Exit codes: 0 success, 2 validation error (bad config, missing artifact,
bad data), 3 numeric failure (divergence, failed closed-loop run).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

from . import regnet
from .datamodel import (TABLE_I, ValidationError, load_record, rng_for, save_record,
                        save_schedule)
from .harness import learning, scenario, synth, tasks
from .interaction import IntegrationBlowupError
from .stiffness import calibrate
from .tpgmm import load_model, save_model
from .wbc import passivity_check

log = logging.getLogger("imprsl")

ENV_OUT = "IMPRSL_OUT"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
AXES = ("x", "y", "z")

DEFAULTS = {
    "seed": 0,
    "plant": "reduced",
    "jobs": 1,
    "scenario": "transport",
    "calibrate": {"subject": "S2", "noise": 0.0, "n_starts": 5, "trials": 18},
    "learn": {"n_demos": 24, "n_components": 6, "em_reg": 1e-4, "lqt_r": 1e-4},
    "train": {"hidden": 32, "window": 64, "burn_in": 8, "batch": 16, "epochs": 60,
              "batches_per_epoch": 20, "lr": 5e-3, "lr_decay": 0.97, "clip": 1.0, "held_out": 4},
    "simulate": {"method": "HI-ImpRSL", "seeds": [0]},
    "evaluate": {"methods": list(scenario.METHODS), "seeds": [0, 1, 2, 3, 4]},
    "report": {"check_trend": False},
}


class NumericFailure(RuntimeError):
    pass


# ---------------------------------------------------------------- config

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(command: str, args) -> tuple[dict, str | None]:
    """Defaults < config file < command-line flags. Returns the command's
    resolved view and the SHA-256 of the config file bytes (if any)."""
    cfg = copy.deepcopy(DEFAULTS)
    file_hash = None
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file {path} not found")
        raw = path.read_bytes()
        file_hash = hashlib.sha256(raw).hexdigest()
        doc = yaml.safe_load(raw) or {}
        if not isinstance(doc, dict):
            raise ValidationError("config file must hold a mapping")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg = _merge(cfg, doc)
    for key in ("seed", "plant", "jobs", "scenario"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    section = dict(cfg.get(command, {}))
    if getattr(args, "method", None):
        if command == "simulate":
            section["method"] = args.method
        elif command == "evaluate":
            section["methods"] = [args.method]
    if getattr(args, "seeds", None):
        section["seeds"] = list(args.seeds)
    if command == "report" and getattr(args, "check_trend", False):
        section["check_trend"] = True
    view = {k: cfg[k] for k in ("seed", "plant", "jobs", "scenario")}
    view[command] = section
    if view["scenario"] not in tasks.SCENARIOS:
        raise ValidationError(f"unknown scenario {view['scenario']!r}; expected one of {tasks.SCENARIOS}")
    if view["plant"] not in ("reduced", "full"):
        raise ValidationError(f"unknown plant {view['plant']!r}")
    if int(view["jobs"]) < 1:
        raise ValidationError("jobs must be >= 1")
    return view, file_hash


def output_root(args) -> Path:
    return Path(args.out or os.environ.get(ENV_OUT) or "runs")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def write_manifest(directory: Path, command: str, view: dict, file_hash, inputs, outputs):
    resolved = json.dumps(view, sort_keys=True)
    doc = {
        "command": command,
        "config_sha256": file_hash,
        "resolved_config_sha256": hashlib.sha256(resolved.encode()).hexdigest(),
        "config": view,
        "seed": view["seed"],
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "tool_version": _version(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (directory / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _num(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- artifacts

def _paths(root: Path, scen: str) -> dict:
    return {
        "demos": root / "demos" / scen,
        "skill": root / "skill" / scen,
        "regnet": root / "regnet" / scen,
    }


def _require(path: Path, producer: str):
    if not path.exists():
        raise ValidationError(f"missing artifact {path}; produce it with `imprsl {producer}`")


def load_demos(root: Path, scen: str):
    d = _paths(root, scen)["demos"]
    _require(d, f"learn --scenario {scen}")
    files = sorted(d.glob("demo_*.csv"))
    if len(files) < 2:
        raise ValidationError(f"{d} holds {len(files)} demonstrations; rerun `imprsl learn --scenario {scen}`")
    return [load_record(f) for f in files]


def load_skill(root: Path, scen: str) -> learning.Skill:
    d = _paths(root, scen)["skill"]
    _require(d / "skill.json", f"learn --scenario {scen}")
    meta = json.loads((d / "skill.json").read_text())
    params = TABLE_I[meta["subject"]]
    return learning.Skill(load_model(d / "model.json"), scen, params, float(meta["dt"]), int(meta["n"]))


def load_regulator(root: Path, scen: str) -> learning.Regulator:
    d = _paths(root, scen)["regnet"]
    _require(d / "checkpoint.json", f"train --scenario {scen}")
    doc = json.loads((d / "checkpoint.json").read_text())
    meta = doc["meta"]
    return learning.Regulator(regnet.load_checkpoint(d / "checkpoint.json"), float(meta["baseline_activation"]),
                              TABLE_I[meta["subject"]])


# ---------------------------------------------------------------- commands

def cmd_calibrate(view, root: Path):
    c = view["calibrate"]
    subject = c["subject"]
    if subject not in TABLE_I:
        raise ValidationError(f"unknown subject row {subject!r}")
    obs = synth.perturbation_protocol(TABLE_I[subject], float(c["noise"]), view["seed"])[:int(c["trials"])]
    res = calibrate(obs, seed=view["seed"], n_starts=int(c["n_starts"]))
    out = root / "calibration" / subject
    out.mkdir(parents=True, exist_ok=True)
    truth = TABLE_I[subject]
    params = {k: getattr(res.params, k) for k in ("a1", "a2", "b1", "b2", "delta")}
    (out / "params.json").write_text(json.dumps({"subject": subject, "params": params,
                                                 "residual": res.residual}, indent=1, sort_keys=True) + "\n")
    _write_csv(out / "residuals.csv", ["trial", "A", "frobenius_error"],
               [[i, _num(o[1]), _num(e)] for i, (o, e) in enumerate(zip(obs, res.per_observation))])
    for k in ("a1", "a2", "b1", "b2"):
        print(f"{k}: {params[k]:.6f}  (generating {getattr(truth, k):.6f}, rel err {abs(params[k] / getattr(truth, k) - 1):.2e})")
    return out, [], [out / "params.json", out / "residuals.csv"]


def cmd_learn(view, root: Path):
    c = view["learn"]
    scen = view["scenario"]
    p = _paths(root, scen)
    demos = synth.synth_demos(scen, int(c["n_demos"]), view["seed"])
    p["demos"].mkdir(parents=True, exist_ok=True)
    for old in p["demos"].glob("demo_*.csv"):
        old.unlink()
    for i, r in enumerate(demos):
        save_record(r, p["demos"] / f"demo_{i:03d}.csv")
    cfg = learning.LearnConfig(int(c["n_components"]), float(c["em_reg"]), view["seed"], float(c["lqt_r"]))
    skill = learning.fit_skill(demos, TABLE_I[synth.COLLABORATOR_ROW], cfg)
    p["skill"].mkdir(parents=True, exist_ok=True)
    save_model(skill.model, p["skill"] / "model.json")
    (p["skill"] / "skill.json").write_text(json.dumps(
        {"scenario": scen, "subject": synth.COLLABORATOR_ROW, "dt": skill.dt, "n": skill.n}, indent=1) + "\n")
    spec = tasks.task_spec(scen)
    sched, sol, _ = learning.plan(skill, spec.start, spec.goal, cfg)
    save_schedule(sched, p["skill"] / "schedule.csv")
    trace = skill.model.objective_trace
    report = passivity_check(sched)
    print(f"EM: {len(trace)} iterations, objective {trace[0]:.4g} -> {trace[-1]:.4g}, "
          f"{len(skill.model.priors)} components")
    print(f"LQT: KKT residual {sol.kkt_residual:.2e}; endpoint error "
          f"{np.linalg.norm(sol.position[-1] - spec.goal):.4f} m")
    print(f"passivity: {'PASS' if report.passed else 'FAIL'} (min relative margin {report.min_relative_margin:.3f})")
    outs = [p["skill"] / "model.json", p["skill"] / "skill.json", p["skill"] / "schedule.csv"]
    return p["skill"], [], outs + sorted(p["demos"].glob("demo_*.csv"))


def cmd_train(view, root: Path):
    c = dict(view["train"])
    scen = view["scenario"]
    demos = load_demos(root, scen)
    k = int(c.pop("held_out"))
    if not 1 <= k < len(demos):
        raise ValidationError("held_out must leave at least one training demonstration")
    train_d, val_d = demos[:-k], demos[-k:]
    config = regnet.TrainConfig(seed=view["seed"], **c)
    reg, result = learning.train_regulator(train_d, TABLE_I[synth.COLLABORATOR_ROW], config, val_d)
    out = _paths(root, scen)["regnet"]
    out.mkdir(parents=True, exist_ok=True)
    regnet.save_checkpoint(out / "checkpoint.json", reg.params,
                           {"baseline_activation": reg.baseline_activation, "subject": synth.COLLABORATOR_ROW,
                            "scenario": scen})
    regnet.write_report(out / "loss.csv", result)
    rows = []
    for split, recs in (("train", train_d), ("held_out", val_d)):
        xs, ys = synth.regnet_dataset(recs)
        pred = np.concatenate([regnet.predict(reg.params, x)[:, 0] for x in xs])
        truth = np.concatenate([y[:, 0] for y in ys])
        rmse, r = regnet.metrics(pred, truth)
        rows.append([split, len(recs), _num(rmse), _num(r)])
        print(f"{split:9s} RMSE {rmse:.4f}  Pearson {r:.4f}")
    _write_csv(out / "metrics.csv", ["split", "n_demos", "rmse", "pearson"], rows)
    inputs = sorted(_paths(root, scen)["demos"].glob("demo_*.csv"))
    return out, inputs, [out / "checkpoint.json", out / "loss.csv", out / "metrics.csv"]


TRACE_HEADER = ["t", "fx", "fy", "fz", "x", "y", "z", "x_ref", "y_ref", "z_ref", "k1", "k2", "k3", "rho",
                "partner_cocontraction"]


def _run_one(job):
    root, scen, method, seed, plant = job
    root = Path(root)
    skill = load_skill(root, scen)
    reg = load_regulator(root, scen) if method == "HI-ImpRSL" else None
    trial = scenario.make_trial(scen, seed)
    n = int(round(trial.spec.duration / skill.dt)) + 1
    sched, _, _ = learning.plan(skill, trial.spec.start, trial.spec.goal, n=n)
    cfg = scenario.ScenarioConfig(plant=plant)
    return scenario.run_scenario(scen, method, seed, sched, reg, cfg, trial)


def _trace_rows(r: scenario.ScenarioResult):
    cols = np.column_stack([r.time, r.force, r.object_position, r.reference, r.stiffness, r.rho,
                            r.partner_activation])
    return [[_num(v) for v in row] for row in cols]


def _metric_rows(results):
    rows = []
    for r in results:
        if len(r.time) < 5:
            continue
        m = r.metrics()
        for a, axis in enumerate(AXES):
            rows.append([r.scenario, r.method, r.seed, axis, _num(m["force_mean"][a]),
                         _num(m["smoothness"][a]), int(r.failed)])
    return rows


METRIC_HEADER = ["scenario", "method", "seed", "axis", "force_mean", "smoothness", "failed"]


def _run_grid(view, root: Path, methods, seeds):
    scen = view["scenario"]
    load_skill(root, scen)
    if "HI-ImpRSL" in methods:
        load_regulator(root, scen)
    for m in methods:
        if m not in scenario.METHODS:
            raise ValidationError(f"unknown method {m!r}; expected one of {scenario.METHODS}")
    jobs = [(str(root), scen, m, int(s), view["plant"]) for m in methods for s in seeds]
    if int(view["jobs"]) > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(int(view["jobs"])) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return results


def _inputs(root: Path, scen: str, methods):
    p = _paths(root, scen)
    ins = [p["skill"] / "model.json", p["skill"] / "skill.json"]
    if "HI-ImpRSL" in methods:
        ins.append(p["regnet"] / "checkpoint.json")
    return ins


def cmd_simulate(view, root: Path):
    c = view["simulate"]
    scen = view["scenario"]
    results = _run_grid(view, root, [c["method"]], c["seeds"])
    out = root / "simulate" / scen / c["method"]
    out.mkdir(parents=True, exist_ok=True)
    outs = []
    for r in results:
        path = out / f"trace_seed{r.seed}.csv"
        _write_csv(path, TRACE_HEADER, _trace_rows(r))
        outs.append(path)
    _write_csv(out / "metrics.csv", METRIC_HEADER, _metric_rows(results))
    outs.append(out / "metrics.csv")
    for r in results:
        m = r.metrics()
        print(f"{r.method} seed {r.seed}: force mean {np.round(m['force_mean'], 3)} N, "
              f"smoothness {np.round(m['smoothness'], 2)} N/s^2" + ("  FAILED: " + r.message if r.failed else ""))
    if any(r.failed for r in results):
        raise NumericFailure("closed-loop run failed; partial traces written")
    return out, _inputs(root, scen, [c["method"]]), outs


def aggregate(metric_rows, methods):
    """Mean and SD over seeds: one row per (method, axis)."""
    rows = []
    for m in methods:
        for axis in AXES:
            sel = [r for r in metric_rows if r["method"] == m and r["axis"] == axis and not int(r["failed"])]
            if not sel:
                continue
            f = np.array([float(r["force_mean"]) for r in sel])
            s = np.array([float(r["smoothness"]) for r in sel]) * 1e3  # reported in 1e-3 N/s^2
            rows.append({"method": m, "axis": axis, "n": len(sel),
                         "force_mean": f.mean(), "force_sd": f.std(ddof=1) if len(f) > 1 else 0.0,
                         "smoothness": s.mean(), "smoothness_sd": s.std(ddof=1) if len(s) > 1 else 0.0})
    return rows


AGG_HEADER = ["method", "axis", "n_seeds", "force_mean_N", "force_sd_N", "smoothness_1e-3_N_per_s2",
              "smoothness_sd_1e-3_N_per_s2", "force_cell", "smoothness_cell"]


def _write_aggregate(path: Path, agg):
    _write_csv(path, AGG_HEADER, [[a["method"], a["axis"], a["n"], _num(a["force_mean"]), _num(a["force_sd"]),
                                   _num(a["smoothness"]), _num(a["smoothness_sd"]),
                                   f"{a['force_mean']:.2f} ± {a['force_sd']:.2f}",
                                   f"{a['smoothness']:.0f} ± {a['smoothness_sd']:.0f}"] for a in agg])


def cmd_evaluate(view, root: Path):
    c = view["evaluate"]
    scen = view["scenario"]
    methods = list(c["methods"])
    results = _run_grid(view, root, methods, c["seeds"])
    out = root / "evaluate" / scen
    (out / "runs").mkdir(parents=True, exist_ok=True)
    outs = []
    for r in results:
        path = out / "runs" / f"{r.method}_seed{r.seed}.csv"
        _write_csv(path, TRACE_HEADER, _trace_rows(r))
        outs.append(path)
    rows = _metric_rows(results)
    _write_csv(out / "metrics.csv", METRIC_HEADER, rows)
    tidy = [[r.method, r.seed, _num(t), axis, _num(r.force[i, a])]
            for r in results for i, t in enumerate(r.time) for a, axis in enumerate(AXES)]
    _write_csv(out / "forces_tidy.csv", ["method", "seed", "t", "axis", "force"], tidy)
    agg = aggregate([dict(zip(METRIC_HEADER, map(str, row))) for row in rows], methods)
    _write_aggregate(out / "aggregate.csv", agg)
    outs += [out / "metrics.csv", out / "forces_tidy.csv", out / "aggregate.csv"]
    print_table(agg)
    failed = [f"{r.method}/seed{r.seed}" for r in results if r.failed]
    if failed:
        raise NumericFailure(f"failed runs: {', '.join(failed)}")
    return out, _inputs(root, scen, methods), outs


def print_table(agg):
    print(f"{'method':10s} {'axis':4s} {'force mean (N)':>16s} {'smoothness (1e-3 N/s^2)':>26s}")
    for a in agg:
        print(f"{a['method']:10s} {a['axis']:4s} {a['force_mean']:8.3f} ± {a['force_sd']:5.3f} "
              f"{a['smoothness']:14.0f} ± {a['smoothness_sd']:7.0f}")


def trend_check(agg) -> dict:
    """HI-ImpRSL force mean on X and Y no larger than FIC's and the ablation's;
    its smoothness lowest among FIC, EMG-VIC, ABLATION, HI-ImpRSL on >= 2 axes."""
    get = {(a["method"], a["axis"]): a for a in agg}
    need = ["FIC", "EMG-VIC", "ABLATION", "HI-ImpRSL"]
    if any((m, ax) not in get for m in need for ax in AXES):
        raise ValidationError("trend check needs FIC, EMG-VIC, ABLATION and HI-ImpRSL results")
    force = all(get["HI-ImpRSL", ax]["force_mean"] <= get[m, ax]["force_mean"]
                for ax in ("x", "y") for m in ("FIC", "ABLATION"))
    lowest = sum(all(get["HI-ImpRSL", ax]["smoothness"] <= get[m, ax]["smoothness"] for m in need)
                 for ax in AXES)
    return {"force": force, "smoothness_axes": lowest, "passed": force and lowest >= 2}


def cmd_report(view, root: Path):
    scen = view["scenario"]
    src = root / "evaluate" / scen / "metrics.csv"
    _require(src, f"evaluate --scenario {scen}")
    with open(src, newline="") as f:
        rows = list(csv.DictReader(f))
    methods = [m for m in scenario.METHODS if any(r["method"] == m for r in rows)]
    agg = aggregate(rows, methods)
    out = root / "report" / scen
    out.mkdir(parents=True, exist_ok=True)
    _write_aggregate(out / "aggregate.csv", agg)
    print_table(agg)
    if view["report"].get("check_trend"):
        t = trend_check(agg)
        print(f"trend: force X/Y {'PASS' if t['force'] else 'FAIL'}; smoothness lowest on "
              f"{t['smoothness_axes']}/3 axes -> {'PASS' if t['passed'] else 'FAIL'}")
    return out, [src], [out / "aggregate.csv"]


def cmd_gradcheck(view, root: Path):
    rng = rng_for(view["seed"], "gradcheck")
    params = regnet.init_params(3, hidden=2, n_out=1, seed=view["seed"])
    x = rng.uniform(0, 1, (5, 3))
    y = rng.uniform(0, 1, (5, 1))
    err = regnet.gradcheck(params, x, y)
    print(f"max relative error {err:.3e}")
    out = root / "gradcheck"
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_text(json.dumps({"max_relative_error": err, "threshold": 1e-5}) + "\n")
    if not err < 1e-5:
        raise NumericFailure(f"gradient check failed: {err:.3e} >= 1e-5")
    return out, [], [out / "gradcheck.json"]


COMMANDS = {
    "calibrate": cmd_calibrate, "learn": cmd_learn, "train": cmd_train, "simulate": cmd_simulate,
    "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imprsl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML config with per-command sections")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./runs)")
        s.add_argument("--jobs", type=int)
        s.add_argument("--plant", choices=["reduced", "full"])
        s.add_argument("--scenario", choices=list(tasks.SCENARIOS))
        s.add_argument("--method", choices=list(scenario.METHODS))
        if name in ("simulate", "evaluate"):
            s.add_argument("--seeds", type=int, nargs="+", help="scenario seeds")
        if name == "report":
            s.add_argument("--check-trend", action="store_true")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        view, file_hash = resolve_config(args.command, args)
        root = output_root(args)
        out, inputs, outputs = COMMANDS[args.command](view, root)
        write_manifest(out, args.command, view, file_hash, inputs, outputs)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericFailure, regnet.TrainingDivergedError, IntegrationBlowupError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
