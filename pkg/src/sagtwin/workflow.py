"""Batch stages reproducing the full study workflow: data generation,
ingest, identification, training, detector calibration, horizon-error
evaluation and disturbance scenarios.

Every stage reads its inputs from and writes its outputs to the run
directory, so stages are individually re-runnable; ``run_all`` chains
them.  Stage metric chunks land in ``metrics/<stage>.json`` and
``report`` merges them into a canonical, byte-reproducible
``metrics.json`` (sorted keys, no timestamps, no absolute paths).
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import detector as det
from . import narx, pipeline, plant, statespace, svgplot, twin as twin_mod
from .config import RunConfig
from .errors import SagTwinError
from .session import (EngineConfig, SessionEngine, clean_error_stream,
                      scenario_disturbance, scenario_seed_offset)
from .timeseries import CV_IDS, Series

RAW_FILE = "raw.csv"
TRAIN_FILE = "train.csv"
TEST_FILE = "test.csv"
REG_MODEL_FILE = "reg_model.txt"
NARX_MODEL_FILE = "narx_model.txt"
DETECTOR_FILE = "detector.json"
REFERENCE_FILE = "reference_errors.txt"
METRICS_FILE = "metrics.json"


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row) + "\n")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def stage_generate(cfg: RunConfig) -> dict:
    """Run the closed-loop synthetic plant long enough that the ingest
    pipeline yields the configured train/test sizes, with decoy segments
    and flagged-down gaps in between."""
    out = _outdir(cfg)
    gen = cfg.generation
    gap = int(gen["gap_steps"])
    decoys = [int(x) for x in gen["decoy_steps"]]
    blocks = []
    if decoys:
        blocks.append(("decoy0", decoys[0]))
    blocks += [("gap", gap), ("train", int(gen["train_steps"])), ("gap", gap),
               ("test", int(gen["test_steps"])), ("gap", gap)]
    for i, d in enumerate(decoys[1:], start=1):
        blocks.append((f"decoy{i}", d))
        blocks.append(("gap", gap))
    total = sum(n for _, n in blocks)
    table = plant.run_real_system(
        cfg.plant, cfg.rules, cfg.membership, cfg.ylim,
        horizon=total, excitation=cfg.excitation, rate_limits=cfg.rate_limits,
        slope_window=cfg.slope_window,
    )
    # flag the gap blocks as SAG-down so the filter splits there
    step = 0
    for name, n in blocks:
        if name == "gap":
            lo = step * plant.SUBSTEPS
            hi = (step + n) * plant.SUBSTEPS
            table.sag_on[lo:hi] = False
        step += n
    pipeline.write_raw_csv(out / RAW_FILE, table)
    chunk = {"total_steps": total, "raw_rows": len(table),
             "blocks": [[name, n] for name, n in blocks]}
    _write_json(out / "metrics" / "generate.json", chunk)
    return chunk


# ---------------------------------------------------------------------------
# prepare (filter + downsample + split)
# ---------------------------------------------------------------------------

def stage_prepare(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    table = pipeline.read_raw_csv(out / RAW_FILE)
    criteria = pipeline.FilterCriteria(
        min_feed=float(cfg.pipeline["min_feed"]),
        min_solids=float(cfg.pipeline["min_solids"]),
    )
    train, test, all_segments = pipeline.prepare(table, criteria)
    pipeline.write_series_csv(out / TRAIN_FILE, train)
    pipeline.write_series_csv(out / TEST_FILE, test)
    chunk = {
        "train_len": len(train),
        "test_len": len(test),
        "segment_lengths": sorted((len(s) for s in all_segments), reverse=True),
    }
    _write_json(out / "metrics" / "prepare.json", chunk)
    return chunk


# ---------------------------------------------------------------------------
# identify
# ---------------------------------------------------------------------------

def stage_identify(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    train = pipeline.read_series_csv(out / TRAIN_FILE)
    order = statespace.select_order(train, cfg.id_orders, threshold=cfg.id_threshold)
    model = statespace.identify(train, order)
    statespace.save_model(out / REG_MODEL_FILE, model)
    chunk = {
        "order_per_loop": order,
        "total_order": model.order,
        "nrmse": [float(v) for v in model.fit_nrmse],
        "spectral_radius": model.spectral_radius(),
    }
    _write_json(out / "metrics" / "identify.json", chunk)
    return chunk


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def stage_train(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    train = pipeline.read_series_csv(out / TRAIN_FILE)
    hyper = cfg.narx_hyper
    grid_lags, grid_hidden = cfg.narx_grid
    if grid_lags and grid_hidden:
        hyper = narx.select_hyperparams(train, list(grid_lags), list(grid_hidden), base=hyper)
    model = narx.train(train, hyper)
    narx.save_model(out / NARX_MODEL_FILE, model)
    chunk = {
        "lags": model.hyper.m,
        "hidden": model.hyper.hidden,
        "epochs": model.hyper.epochs,
        "train_nrmse": [float(v) for v in model.train_nrmse],
        "val_nrmse": model.val_nrmse,
    }
    _write_json(out / "metrics" / "train.json", chunk)
    return chunk


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def stage_calibrate(cfg: RunConfig) -> dict:
    """Threshold calibration over clean operation: the held-out test stream
    plus a disturbance-free replica of every scenario campaign (same seeds),
    so the scenario clean phases are covered by construction."""
    out = _outdir(cfg)
    train = pipeline.read_series_csv(out / TRAIN_FILE)
    test = pipeline.read_series_csv(out / TEST_FILE)
    reg = statespace.load_model(out / REG_MODEL_FILE)
    model = narx.load_model(out / NARX_MODEL_FILE)
    n_d = int(cfg.detector["n_d"])
    alpha = float(cfg.detector["alpha"])

    train_err = narx.one_step_errors(model, train)
    n_params = model.params().size
    references = {
        "y1": det.ErrorReference.from_fit_residuals(train_err[:, 0], n_params),
        "y2": det.ErrorReference.from_fit_residuals(train_err[:, 1], n_params),
    }
    streams: dict[str, np.ndarray] = {"test": narx.one_step_errors(model, test)}
    engine_cfg = EngineConfig(run=cfg, n_e=int(cfg.twin_cfg_template["n_e"]),
                              m_d={"y1": 10**9, "y2": 10**9})
    extra = int(cfg.detector["calibration_extra_streams"])
    for name, spec in sorted(cfg.scenarios.items()):
        for rep in range(extra + 1):
            key = name if rep == 0 else f"{name}#{rep}"
            streams[key] = clean_error_stream(
                engine_cfg, reg, model, references,
                n_steps=spec.total_steps,
                seed_offset=scenario_seed_offset(name) + rep * 7777,
            )

    # exact Algorithm-1 thresholds per stream, then a configurable headroom
    # factor so marginal drifts cannot chain one extra rejection onto an
    # already-long clean run
    headroom = float(cfg.detector["m_d_headroom"])
    m_d = {}
    m_d_calibrated = {}
    max_m = {cv: {} for cv in ("y1", "y2")}
    for i, cv in enumerate(("y1", "y2")):
        candidates = []
        for name, errs in streams.items():
            trace = det.m_trace(references[cv], errs[:, i], n_d, alpha)
            max_m[cv][name] = int(trace.max(initial=0))
            candidates.append(det.calibrate_threshold(references[cv], errs[:, i], n_d, alpha))
        m_d_calibrated[cv] = max(candidates)
        m_d[cv] = int(np.ceil(headroom * m_d_calibrated[cv]))
    n_e = max(m_d.values()) + int(cfg.detector["n_e_extra"])

    # persisted errors already carry the in-sample inflation
    with open(out / REFERENCE_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("y1 y2\n")
        for e1, e2 in zip(references["y1"].errors, references["y2"].errors):
            fh.write(f"{float(e1)!r} {float(e2)!r}\n")
    chunk = {
        "n_d": n_d,
        "alpha": alpha,
        "m_d": m_d,
        "m_d_calibrated": m_d_calibrated,
        "m_d_headroom": headroom,
        "max_m_clean": max_m,
        "n_e": n_e,
        "reference_stats": {
            cv: {"mean": ref.mean, "var": ref.var, "r1": ref.r1, "n": ref.n}
            for cv, ref in references.items()
        },
    }
    _write_json(out / DETECTOR_FILE, chunk)
    _write_json(out / "metrics" / "calibrate.json", chunk)
    return chunk


def load_references(out: Path) -> dict[str, det.ErrorReference]:
    rows = np.loadtxt(out / REFERENCE_FILE, skiprows=1)
    return {
        "y1": det.ErrorReference.from_errors(rows[:, 0]),
        "y2": det.ErrorReference.from_errors(rows[:, 1]),
    }


def load_models(cfg: RunConfig):
    out = Path(cfg.output_dir)
    reg = statespace.load_model(out / REG_MODEL_FILE)
    nx = narx.load_model(out / NARX_MODEL_FILE)
    with open(out / DETECTOR_FILE, "r", encoding="utf-8") as fh:
        det_cfg = json.load(fh)
    return reg, nx, det_cfg


# ---------------------------------------------------------------------------
# evaluate (horizon errors on the clean test set)
# ---------------------------------------------------------------------------

def stage_evaluate(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    test = pipeline.read_series_csv(out / TEST_FILE)
    reg, nx, det_cfg = load_models(cfg)
    n_e = int(det_cfg["n_e"])
    twin = twin_mod.DigitalTwin(
        rules=cfg.rules, spec=cfg.membership, reg_model=reg, narx_model=nx,
        config=cfg.twin_config(n_e=n_e),
    )
    horizon = twin.config.horizon
    y_meas = test.select(CV_IDS)
    start = max(twin.min_history, n_e + 1)
    anchors = range(start, len(test) - horizon)
    if len(anchors) < 50:
        raise SagTwinError(f"test set leaves only {len(anchors)} anchors")

    rel_err = {i: [] for i in range(1, horizon + 1)}
    nowcasts = []
    for k in anchors:
        history = Series(start_time=test.start_time, dt=test.dt,
                         values=test.values[:k], ids=test.ids)
        traj = twin_mod.predict_horizon(twin, history, cfg.ylim)
        nowcasts.append(traj.y_hat[0])
        for i in range(1, horizon + 1):
            actual = y_meas[k + i]
            rel_err[i].append((traj.y_hat[i] - actual) / actual)

    chunk = {"anchors": len(list(anchors)), "horizon": horizon, "quantiles": {}}
    for i in range(1, horizon + 1):
        errs = np.array(rel_err[i])
        chunk["quantiles"][str(i)] = {
            cv: {
                "q005": float(np.quantile(errs[:, j], 0.005)),
                "q995": float(np.quantile(errs[:, j], 0.995)),
                "q25": float(np.quantile(errs[:, j], 0.25)),
                "q50": float(np.quantile(errs[:, j], 0.50)),
                "q75": float(np.quantile(errs[:, j], 0.75)),
                "mean": float(np.mean(errs[:, j])),
                "std": float(np.std(errs[:, j])),
            }
            for j, cv in enumerate(("y1", "y2"))
        }
    test_err = narx.one_step_errors(nx, test)
    den = np.linalg.norm(y_meas[max(nx.hyper.m, nx.hyper.n - 1):] -
                         y_meas[max(nx.hyper.m, nx.hyper.n - 1):].mean(axis=0), axis=0)
    chunk["test_one_step_nrmse"] = [
        float(np.linalg.norm(test_err[:, j]) / den[j]) for j in range(2)
    ]
    _write_json(out / "metrics" / "evaluate.json", chunk)
    _evaluate_artifacts(out, cfg, test, anchors, nowcasts, rel_err, horizon)
    return chunk


def _evaluate_artifacts(out, cfg, test, anchors, nowcasts, rel_err, horizon):
    """Fig. 2 analogues: traces, error histograms, per-horizon intervals."""
    anchors = list(anchors)
    y_meas = test.select(CV_IDS)
    nowcasts = np.array(nowcasts)
    rows = [(k, y_meas[k][0], y_meas[k][1], nowcasts[j][0], nowcasts[j][1])
            for j, k in enumerate(anchors)]
    _write_csv(out / "figures" / "test_predictions.csv",
               "step,y1,y2,yhat1,yhat2", rows)
    for j, cv in enumerate(("y1", "y2")):
        p = svgplot.LinePlot(title=f"{cv}: test data vs twin nowcast",
                             xlabel="step (30 s)", ylabel=cv)
        p.add_line("measured", anchors, [r[1 + j] for r in rows])
        p.add_line("twin", anchors, [r[3 + j] for r in rows])
        p.save(out / "figures" / f"test_predictions_{cv}.svg")

    for j, cv in enumerate(("y1", "y2")):
        hist_rows = []
        for i in range(1, horizon + 1):
            errs = [e[j] for e in rel_err[i]]
            hist_rows += [(i, v) for v in errs]
        _write_csv(out / "figures" / f"errors_{cv}.csv", "horizon,rel_error", hist_rows)
        with open(out / "figures" / f"errors_hist_{cv}.svg", "w", encoding="utf-8") as fh:
            fh.write(svgplot.histogram_svg(
                f"{cv}: relative error at horizon {horizon}",
                [e[j] for e in rel_err[horizon]], xlabel="relative error"))

    interval_rows = []
    for i in range(1, horizon + 1):
        errs = np.array(rel_err[i])
        for j, cv in enumerate(("y1", "y2")):
            interval_rows.append((i, cv,
                                  float(np.quantile(errs[:, j], 0.005)),
                                  float(np.quantile(errs[:, j], 0.995))))
    with open(out / "figures" / "error_intervals.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("horizon,cv,q005,q995\n")
        for r in interval_rows:
            fh.write(f"{r[0]},{r[1]},{r[2]!r},{r[3]!r}\n")
    for j, cv in enumerate(("y1", "y2")):
        p = svgplot.LinePlot(title=f"{cv}: 99% error interval vs horizon",
                             xlabel="horizon (steps)", ylabel="relative error")
        xs = list(range(1, horizon + 1))
        lo = [r[2] for r in interval_rows if r[1] == cv]
        hi = [r[3] for r in interval_rows if r[1] == cv]
        p.add_band("99%", xs, lo, hi)
        p.add_line("lower", xs, lo)
        p.add_line("upper", xs, hi)
        p.save(out / "figures" / f"error_intervals_{cv}.svg")


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

def stage_scenario(cfg: RunConfig, name: str) -> dict:
    out = _outdir(cfg)
    if name not in cfg.scenarios:
        raise SagTwinError(f"unknown scenario {name!r}; have {sorted(cfg.scenarios)}")
    spec = cfg.scenarios[name]
    reg, nx, det_cfg = load_models(cfg)
    references = load_references(out)
    engine_cfg = EngineConfig(
        run=cfg, n_e=int(det_cfg["n_e"]),
        m_d={k: int(v) for k, v in det_cfg["m_d"].items()},
    )
    engine = SessionEngine(engine_cfg, reg, nx, references,
                           seed_offset=scenario_seed_offset(name))
    disturbance, onset_step = scenario_disturbance(spec, engine.warmup_steps)
    engine.inject_disturbance(disturbance)
    snapshots = engine.advance(spec.total_steps)

    retrain_steps = {"y1": [], "y2": []}
    for ev in engine.detector.retrain_events:
        for cv in ev["cv"].split(","):
            retrain_steps[cv].append(ev["step"])
    chunk = {
        "scenario": name,
        "kind": spec.kind.value,
        "magnitude": spec.magnitude,
        "onset_step": onset_step,
        "warmup_steps": engine.warmup_steps,
        "total_steps": spec.total_steps,
        "retrains": {cv: len(steps) for cv, steps in retrain_steps.items()},
        "retrain_steps": retrain_steps,
    }
    _write_json(out / "metrics" / f"scenario_{name}.json", chunk)
    _scenario_artifacts(out, name, snapshots, onset_step, retrain_steps)
    return chunk


def _scenario_artifacts(out, name, snapshots, onset_step, retrain_steps):
    """Fig. 3 analogue: proportional one-step error plus detector counter."""
    rows = []
    for s in snapshots:
        d = s["detector"]
        if not d.get("active"):
            continue
        rows.append((
            s["step"],
            d["errors"]["y1"] / s["y"][0],
            d["errors"]["y2"] / s["y"][1],
            d["y1"]["m"], d["y2"]["m"],
            int(bool(s["retrained"])),
        ))
    _write_csv(out / "figures" / f"scenario_{name}.csv",
               "step,rel_err_y1,rel_err_y2,m_y1,m_y2,retrain", rows)
    for j, cv in enumerate(("y1", "y2")):
        p = svgplot.LinePlot(title=f"{name}: {cv} proportional error and detector",
                             xlabel="step (30 s)", ylabel="relative error / M")
        p.add_line("rel_error", [r[0] for r in rows], [r[1 + j] for r in rows])
        m_scale = max(max((r[3 + j] for r in rows), default=1), 1)
        err_scale = max(max((abs(r[1 + j]) for r in rows), default=0.01), 1e-6)
        p.add_line("M (scaled)", [r[0] for r in rows],
                   [r[3 + j] / m_scale * err_scale for r in rows])
        p.add_vline("onset", onset_step)
        for step in retrain_steps[cv]:
            p.add_vline("retrain", step)
        p.save(out / "figures" / f"scenario_{name}_{cv}.svg")


# ---------------------------------------------------------------------------
# report / run
# ---------------------------------------------------------------------------

def stage_report(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    metrics: dict = {"seed": cfg.seed}
    stage_map = {
        "generate": "generate.json",
        "pipeline": "prepare.json",
        "identification": "identify.json",
        "narx": "train.json",
        "detector": "calibrate.json",
        "horizon_errors": "evaluate.json",
    }
    for key, fname in stage_map.items():
        path = out / "metrics" / fname
        if path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                metrics[key] = json.load(fh)
    scenarios = {}
    for path in sorted((out / "metrics").glob("scenario_*.json")):
        with open(path, "r", encoding="utf-8") as fh:
            chunk = json.load(fh)
        scenarios[chunk["scenario"]] = chunk
    if scenarios:
        metrics["scenarios"] = scenarios
    _write_json(out / METRICS_FILE, metrics)
    return metrics


def run_all(cfg: RunConfig, scenario_names: list[str] | None = None) -> dict:
    """All stages in order.  Wall-clock stage timings go to ``timings.json``
    (kept out of metrics.json, which must be byte-reproducible)."""
    timings = {}

    def _timed(name, fn, *args):
        t0 = time.perf_counter()
        fn(*args)
        timings[name] = round(time.perf_counter() - t0, 3)

    _timed("generate", stage_generate, cfg)
    _timed("prepare", stage_prepare, cfg)
    _timed("identify", stage_identify, cfg)
    _timed("train", stage_train, cfg)
    _timed("calibrate", stage_calibrate, cfg)
    _timed("evaluate", stage_evaluate, cfg)
    for name in scenario_names if scenario_names is not None else sorted(cfg.scenarios):
        _timed(f"scenario:{name}", stage_scenario, cfg, name)
    timings["total"] = round(sum(timings.values()), 3)
    _write_json(Path(cfg.output_dir) / "timings.json", timings)
    return stage_report(cfg)
