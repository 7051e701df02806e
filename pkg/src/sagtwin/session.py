"""Live closed-loop engine: synthetic plant, real expert system, digital
twin, drift detector and automatic retraining, advanced step by step.

One engine instance is single-owner (sessions serialize mutations); the
snapshots it emits are plain dicts, safe to fan out to subscribers.

Step order matches the supervisory loop: the twin re-anchors on measured
history and predicts the horizon *before* the plant produces the next
measurement, then the real expert moves the setpoints, the plant advances,
and the detector consumes the one-step error of the instant just measured.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import detector as det
from . import fuzzy, narx, plant, statespace, twin as twin_mod
from .config import RunConfig, ScenarioSpec
from .timeseries import DATASET_IDS, LagStack, Series


@dataclass
class EngineConfig:
    run: RunConfig
    n_e: int
    m_d: dict[str, int]
    optimize_ylim: bool = False
    ylim_grid_per_axis: int = 3
    twin_predictions: bool = True   # skip horizon rollouts (calibration replicas)


class SessionEngine:
    """Plant + twin + detector driven one 30 s control step at a time."""

    def __init__(
        self,
        cfg: EngineConfig,
        reg_model: statespace.StateSpaceModel,
        narx_model: narx.NarxModel,
        references: dict[str, det.ErrorReference],
        disturbances: list[plant.Disturbance] | None = None,
        seed_offset: int = 0,
    ):
        run = cfg.run
        self.cfg = cfg
        self.run_cfg = run
        plant_cfg = run.plant
        if seed_offset:
            from dataclasses import replace
            plant_cfg = replace(plant_cfg, seed=plant_cfg.seed + seed_offset)
        self.plant_cfg = plant_cfg
        self.plant_state = plant.init_state(plant_cfg, disturbances or [])
        self.twin = twin_mod.DigitalTwin(
            rules=run.rules, spec=run.membership, reg_model=reg_model,
            narx_model=narx_model, config=run.twin_config(n_e=cfg.n_e),
        )
        self.detector = det.DetectorState.create(
            references, m_d=cfg.m_d, n_d=int(run.detector["n_d"]),
            alpha=float(run.detector["alpha"]),
        )
        self.retrain_settings = det.RetrainSettings(
            epoch_fraction=float(run.detector["retrain_epoch_fraction"]),
            min_epochs=int(run.detector["retrain_min_epochs"]),
        )
        self.ylim = run.ylim
        self.usp = np.array(plant_cfg.u_nom, dtype=float)
        self.exc_offset = np.zeros(3)
        self.exc_rng = np.random.default_rng(np.random.PCG64(plant_cfg.seed + 991))
        self.step_index = 0
        self.rows: list[np.ndarray] = []      # measured (u, usp, y) at 30 s
        self.events: list[dict] = []
        self.error_log: list[tuple[int, float, float]] = []
        self.pending_ylim: fuzzy.YLim | None = None
        self.mode = "paused"
        self.speed = 2.0
        hp = narx_model.hyper
        self.warmup_steps = cfg.n_e + max(hp.m, hp.n, run.slope_window) + 2

    # -- histories ---------------------------------------------------------

    def _history_series(self) -> Series:
        vals = np.array(self.rows)
        return Series(start_time=0.0, dt=plant.CONTROL_DT, values=vals, ids=DATASET_IDS)

    @property
    def twin_active(self) -> bool:
        return self.step_index >= self.warmup_steps

    # -- control surface ---------------------------------------------------

    def set_ylim(self, ylim: fuzzy.YLim) -> None:
        if not self.twin.config.ylim_in_box(ylim):
            raise ValueError("ylim outside the configured box")
        self.pending_ylim = ylim
        self.events.append({"step": self.step_index, "event": "ylim_requested",
                            "y1_lim": ylim.y1, "y2_lim": ylim.y2})

    def inject_disturbance(self, d: plant.Disturbance) -> None:
        self.plant_state.disturbances.append(d)
        self.events.append({
            "step": self.step_index, "event": "disturbance",
            "kind": d.kind.value, "magnitude": d.magnitude,
            "onset": d.onset, "ramp": d.ramp,
        })

    # -- main loop ---------------------------------------------------------

    def advance(self, n_steps: int) -> list[dict]:
        return [self._step_once() for _ in range(n_steps)]

    def _step_once(self) -> dict:
        run = self.run_cfg
        if self.pending_ylim is not None:
            self.ylim = self.pending_ylim
            self.pending_ylim = None
            self.events.append({"step": self.step_index, "event": "ylim_applied",
                                "y1_lim": self.ylim.y1, "y2_lim": self.ylim.y2})

        trajectory = None
        nowcast = None
        if self.twin_active and self.cfg.twin_predictions:
            history = self._history_series()
            if self.cfg.optimize_ylim:
                candidates = twin_mod.ylim_grid(self.twin.config, self.cfg.ylim_grid_per_axis)
                best, _ = twin_mod.optimize_ylim(self.twin, history, candidates, run.objective)
                if (best.y1, best.y2) != (self.ylim.y1, self.ylim.y2):
                    self.events.append({"step": self.step_index, "event": "ylim_optimized",
                                        "y1_lim": best.y1, "y2_lim": best.y2})
                self.ylim = best
            traj = twin_mod.predict_horizon(self.twin, history, self.ylim)
            trajectory = traj
            nowcast = traj.y_hat[0]

        # real expert system acting on the 30 s medians
        mv_lo = np.array(self.plant_cfg.u_lo)
        mv_hi = np.array(self.plant_cfg.u_hi)
        if self.rows:
            last = self.rows[-1]
            values = {"y1": last[6], "y2": last[7], "u1": last[0], "u2": last[1], "u3": last[2]}
            slopes = self._real_slopes()
            delta = fuzzy.recommend(
                values, slopes, self.ylim, run.rules, run.membership,
                mv_lo, mv_hi, run.rate_limits, current_usp=self.usp,
            )
            self.usp = self.usp + delta
        if run.excitation.enabled:
            fire = self.exc_rng.random(3) < 1.0 / run.excitation.period
            draw = self.exc_rng.uniform(-1.0, 1.0, 3) * np.array(run.excitation.amplitude)
            self.exc_offset = np.where(fire, draw, self.exc_offset)
        usp_applied = np.clip(self.usp + self.exc_offset, mv_lo, mv_hi)

        u_med, y_med, _ = plant.step_plant(self.plant_cfg, self.plant_state, usp_applied)
        self.rows.append(np.concatenate([u_med, usp_applied, y_med]))

        # detector on the teacher-forced one-step error of the new instant
        detector_info = {"active": False}
        retrained_cvs: list[str] = []
        if self.twin_active:
            errors = self._one_step_error()
            self.error_log.append((self.step_index, float(errors[0]), float(errors[1])))
            flagged = self.detector.step({"y1": errors[0], "y2": errors[1]})
            if flagged:
                retrained_cvs = self._retrain(flagged)
            detector_info = self._detector_snapshot(errors, flagged)

        snapshot = self._snapshot(u_med, usp_applied, y_med, trajectory, nowcast,
                                  detector_info, retrained_cvs)
        self.step_index += 1
        return snapshot

    def _real_slopes(self) -> dict[str, float]:
        w = min(self.run_cfg.slope_window, len(self.rows))
        if w < 2:
            return {"y1": 0.0, "y2": 0.0}
        block = np.array(self.rows[-w:])[:, 6:8]
        t = np.arange(w, dtype=float) * plant.CONTROL_DT
        t = t - t.mean()
        sl = (t @ (block - block.mean(axis=0))) / float(t @ t)
        return {"y1": float(sl[0]), "y2": float(sl[1])}

    def _one_step_error(self) -> np.ndarray:
        """Teacher-forced error of the instant just measured (measured lags
        in, measured value out) -- the quantity the reference was built on."""
        model = self.twin.narx_model
        hp = model.hyper
        rows = np.array(self.rows)
        y_hist = rows[:-1, 6:8]
        u_all = rows[:, 0:3]
        cv_stack = LagStack(entries=y_hist[-hp.m:][::-1].copy())
        mv_stack = LagStack(entries=u_all[-hp.n:][::-1].copy())
        y_pred = narx.predict_one(model, cv_stack, mv_stack)
        return rows[-1, 6:8] - y_pred

    def _retrain(self, flagged: list[str]) -> list[str]:
        history = self._history_series()
        result = det.retrain(self.twin.narx_model, history,
                             self.cfg.n_e, self.retrain_settings)
        if result is None:
            self.events.append({"step": self.step_index, "event": "retrain_deferred",
                                "cv": ",".join(flagged)})
            return []
        new_model, references = result
        self.twin.narx_model = new_model
        for cv, ref in references.items():
            self.detector.detectors[cv].reset_after_retrain(ref)
        event = {"step": self.step_index, "event": "retrain", "cv": ",".join(flagged)}
        self.events.append(event)
        self.detector.retrain_events.append(event)
        return flagged

    def _detector_snapshot(self, errors: np.ndarray, flagged: list[str]) -> dict:
        out: dict[str, Any] = {"active": True, "errors": {"y1": float(errors[0]), "y2": float(errors[1])}}
        for cv, d in self.detector.detectors.items():
            o = d.last_outcome
            out[cv] = {
                "m": d.m,
                "m_d": d.m_d,
                "window_fill": len(d.window),
                "rejects": {k: bool(v) for k, v in o.rejects.items()} if o else None,
                "retrain_flagged": cv in flagged,
            }
        return out

    def _snapshot(self, u, usp, y, trajectory, nowcast, detector_info, retrained) -> dict:
        factors = self.plant_state.factors
        snap = {
            "step": self.step_index,
            "time_s": (self.step_index + 1) * plant.CONTROL_DT,
            "u": [float(v) for v in u],
            "usp": [float(v) for v in usp],
            "y": [float(v) for v in y],
            "ylim": {"y1": self.ylim.y1, "y2": self.ylim.y2},
            "twin": None,
            "detector": detector_info,
            "retrained": retrained,
            "disturbance_factors": [float(factors[0]), float(factors[1])],
            "mode": self.mode,
        }
        if trajectory is not None:
            snap["twin"] = {
                "y_hat": [[float(x) for x in row] for row in trajectory.y_hat],
                "u_hat": [[float(x) for x in row] for row in trajectory.u_hat],
                "usp_hat": [[float(x) for x in row] for row in trajectory.usp_hat],
                "nowcast": [float(x) for x in nowcast],
            }
        return snap


def scenario_disturbance(spec: ScenarioSpec, warmup_steps: int) -> tuple[plant.Disturbance, int]:
    """Build the scenario's disturbance; returns it plus the onset step."""
    onset_step = warmup_steps + spec.onset_offset
    d = plant.Disturbance(
        kind=spec.kind,
        magnitude=spec.magnitude,
        onset=onset_step * plant.CONTROL_DT,
        ramp=spec.ramp_steps * plant.CONTROL_DT,
    )
    return d, onset_step


def scenario_seed_offset(name: str) -> int:
    """Deterministic per-scenario plant seed offset, shared by the scenario
    run and its disturbance-free calibration replica."""
    return 1000 + sum(map(ord, name))


def clean_error_stream(
    cfg: EngineConfig,
    reg_model: statespace.StateSpaceModel,
    narx_model: narx.NarxModel,
    references: dict[str, det.ErrorReference],
    n_steps: int,
    seed_offset: int,
) -> np.ndarray:
    """One-step error stream of a disturbance-free run with the given seed:
    the measured loop is independent of the twin, so this exactly matches
    the clean phase a scenario with the same seed will produce."""
    from dataclasses import replace
    quiet = replace(cfg, twin_predictions=False,
                    m_d={cv: np.iinfo(np.int32).max for cv in references})
    engine = SessionEngine(quiet, reg_model, narx_model, references, seed_offset=seed_offset)
    engine.advance(n_steps)
    return np.array([(e[1], e[2]) for e in engine.error_log])
