"""Run configuration: one YAML file (comments welcome) drives every stage;
CLI flags override individual keys through dotted paths.

``RunConfig.from_dict`` validates types and ranges and reports the dotted
path of any offending field.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .fuzzy import (MembershipSpec, RuleBase, YLim, default_membership_spec,
                    default_rule_base, membership_spec_from_dict, rule_base_from_list)
from .narx import NarxHyper
from .plant import Disturbance, DisturbanceKind, ExcitationConfig, PlantConfig
from .twin import Objective, TwinConfig

DEFAULTS: dict = {
    "seed": 20240011,
    "output_dir": "runs/default",
    "plant": {
        "u_nom": [3000.0, 72.0, 9.5],
        "y_nom": [5000.0, 12000.0],
        "u_lo": [1500.0, 60.0, 7.5],
        "u_hi": [4500.0, 80.0, 11.0],
        "gains": [[0.9, 50.0, -40.0], [2.0, 120.0, 800.0]],
        "quad_speed_power": 60.0,
        "tau_y": [1800.0, 1200.0],
        "delay_y": [[60.0, 30.0, 30.0], [30.0, 30.0, 5.0]],
        "tau_u": [90.0, 60.0, 45.0],
        "noise_std": [0.0015, 0.0015],
        "actuation_noise_std": 0.0005,
        "cv_drift_std": [0.008, 0.008],
        "cv_drift_tau": 4800.0,
        "cv_walk_std": [0.012, 0.012],
        "cv_walk_tau": 86400.0,
    },
    "excitation": {"period": 50, "amplitude": [60.0, 0.8, 0.25], "enabled": True},
    "generation": {
        "train_steps": 8156,
        "test_steps": 1013,
        "decoy_steps": [120, 60],
        "gap_steps": 2,
    },
    "pipeline": {"min_feed": 1000.0, "min_solids": 60.0},
    "expert": {
        "ylim": [5500.0, 13300.0],
        "rate_limits": [75.0, 0.75, 0.20],
        "slope_window": 4,
        "membership": None,   # optional inline membership spec
        "rules": None,        # optional inline rule list
    },
    "identification": {"orders": [1, 2], "threshold": 0.02},
    "narx": {
        "lags": 12,
        "hidden": 3,
        "epochs": 9000,
        "lr": 0.1,
        "batch": 512,
        "momentum": 0.9,
        "plateau_patience": 3500,
        "min_lr": 1.0e-6,
        "grid_lags": None,
        "grid_hidden": None,
    },
    "detector": {"n_d": 30, "alpha": 0.05, "n_e_extra": 180,
                 "calibration_extra_streams": 2, "m_d_headroom": 1.3,
                 "retrain_epoch_fraction": 0.1, "retrain_min_epochs": 40},
    "twin": {
        "horizon": 5,
        "n_e": 160,
        "ylim_box": [[4950.0, 6050.0], [11970.0, 14630.0]],
        "cv_bounds": [[0.0, 6000.0], [0.0, 15000.0]],
        "objective": {"throughput_reward": 0.01, "limit_penalty": 5000.0,
                      "move_penalty": 1.0, "margin": 0.98},
    },
    "scenarios": {
        "wear-1mo": {"kind": "liner_wear", "magnitude": 1.0,
                     "onset_offset": 120, "ramp_steps": 900, "total_steps": 1500},
        "wear-5mo": {"kind": "liner_wear", "magnitude": 5.0,
                     "onset_offset": 120, "ramp_steps": 900, "total_steps": 1500},
        "hardness-10pct": {"kind": "ore_hardness", "magnitude": 0.10,
                           "onset_offset": 120, "ramp_steps": 300, "total_steps": 1500},
    },
    "service": {"port": 8080},
}


#: free-form maps replaced wholesale on override instead of key-merged
_REPLACE_KEYS = {"scenarios", "membership", "rules"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"unknown config key: {here}")
        if key in _REPLACE_KEYS:
            out[key] = copy.deepcopy(val)
        elif isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val, here)
        else:
            out[key] = val
    return out


def apply_override(data: dict, dotted: str) -> None:
    """Apply one ``a.b.c=value`` override in place (value parsed as YAML)."""
    if "=" not in dotted:
        raise ConfigError(f"override must look like key.path=value, got {dotted!r}")
    path, raw_val = dotted.split("=", 1)
    keys = path.strip().split(".")
    node = data
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config path: {path}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config path: {path}")
    node[keys[-1]] = yaml.safe_load(raw_val)


@dataclass
class ScenarioSpec:
    name: str
    kind: DisturbanceKind
    magnitude: float
    onset_offset: int     # control steps after warmup
    ramp_steps: int
    total_steps: int


@dataclass
class RunConfig:
    raw: dict
    seed: int
    output_dir: Path
    plant: PlantConfig
    excitation: ExcitationConfig
    generation: dict
    pipeline: dict
    ylim: YLim
    rate_limits: np.ndarray
    slope_window: int
    membership: MembershipSpec
    rules: RuleBase
    id_orders: list[int]
    id_threshold: float
    narx_hyper: NarxHyper
    narx_grid: tuple[list[int] | None, list[int] | None]
    detector: dict
    twin_cfg_template: dict
    objective: Objective
    scenarios: dict[str, ScenarioSpec]
    service_port: int

    @classmethod
    def from_dict(cls, data: dict | None = None) -> "RunConfig":
        data = _merge(DEFAULTS, data or {})
        try:
            plant = PlantConfig(
                u_nom=tuple(float(x) for x in data["plant"]["u_nom"]),
                y_nom=tuple(float(x) for x in data["plant"]["y_nom"]),
                u_lo=tuple(float(x) for x in data["plant"]["u_lo"]),
                u_hi=tuple(float(x) for x in data["plant"]["u_hi"]),
                gains=tuple(tuple(float(x) for x in row) for row in data["plant"]["gains"]),
                quad_speed_power=float(data["plant"]["quad_speed_power"]),
                tau_y=tuple(float(x) for x in data["plant"]["tau_y"]),
                delay_y=tuple(tuple(float(x) for x in row) for row in data["plant"]["delay_y"]),
                tau_u=tuple(float(x) for x in data["plant"]["tau_u"]),
                noise_std=tuple(float(x) for x in data["plant"]["noise_std"]),
                actuation_noise_std=float(data["plant"]["actuation_noise_std"]),
                cv_drift_std=tuple(float(x) for x in data["plant"]["cv_drift_std"]),
                cv_drift_tau=float(data["plant"]["cv_drift_tau"]),
                cv_walk_std=tuple(float(x) for x in data["plant"]["cv_walk_std"]),
                cv_walk_tau=float(data["plant"]["cv_walk_tau"]),
                seed=int(data["seed"]),
            )
        except ConfigError as exc:
            raise ConfigError(f"plant: {exc}") from exc
        exc_cfg = ExcitationConfig(
            period=float(data["excitation"]["period"]),
            amplitude=tuple(float(x) for x in data["excitation"]["amplitude"]),
            enabled=bool(data["excitation"]["enabled"]),
        )
        ylim_vals = data["expert"]["ylim"]
        ylim = YLim(y1=float(ylim_vals[0]), y2=float(ylim_vals[1]))
        membership = (
            membership_spec_from_dict(data["expert"]["membership"])
            if data["expert"]["membership"] else default_membership_spec()
        )
        rules = (
            rule_base_from_list(data["expert"]["rules"])
            if data["expert"]["rules"] else default_rule_base()
        )
        nx = data["narx"]
        hyper = NarxHyper(
            m=int(nx["lags"]), n=int(nx["lags"]), hidden=int(nx["hidden"]),
            epochs=int(nx["epochs"]), lr=float(nx["lr"]), batch=int(nx["batch"]),
            momentum=float(nx["momentum"]), plateau_patience=int(nx["plateau_patience"]),
            min_lr=float(nx["min_lr"]),
            seed=int(data["seed"]) + 7,
        )
        scenarios = {}
        for name, sc in data["scenarios"].items():
            try:
                kind = DisturbanceKind(sc["kind"])
            except ValueError as exc:
                raise ConfigError(f"scenarios.{name}.kind: {sc['kind']!r}") from exc
            scenarios[name] = ScenarioSpec(
                name=name, kind=kind, magnitude=float(sc["magnitude"]),
                onset_offset=int(sc["onset_offset"]), ramp_steps=int(sc["ramp_steps"]),
                total_steps=int(sc["total_steps"]),
            )
        obj = data["twin"]["objective"]
        det = data["detector"]
        if int(det["n_d"]) < 3:
            raise ConfigError("detector.n_d must be >= 3")
        if not data["identification"]["orders"]:
            raise ConfigError("identification.orders must be nonempty")
        return cls(
            raw=data,
            seed=int(data["seed"]),
            output_dir=Path(data["output_dir"]),
            plant=plant,
            excitation=exc_cfg,
            generation=dict(data["generation"]),
            pipeline=dict(data["pipeline"]),
            ylim=ylim,
            rate_limits=np.array([float(x) for x in data["expert"]["rate_limits"]]),
            slope_window=int(data["expert"]["slope_window"]),
            membership=membership,
            rules=rules,
            id_orders=[int(n) for n in data["identification"]["orders"]],
            id_threshold=float(data["identification"]["threshold"]),
            narx_hyper=hyper,
            narx_grid=(nx["grid_lags"], nx["grid_hidden"]),
            detector=dict(det),
            twin_cfg_template=dict(data["twin"]),
            objective=Objective(
                throughput_reward=float(obj["throughput_reward"]),
                limit_penalty=float(obj["limit_penalty"]),
                move_penalty=float(obj["move_penalty"]),
                margin=float(obj["margin"]),
            ),
            scenarios=scenarios,
            service_port=int(data["service"]["port"]),
        )

    def twin_config(self, n_e: int | None = None) -> TwinConfig:
        t = self.twin_cfg_template
        return TwinConfig(
            mv_lo=np.array(self.plant.u_lo),
            mv_hi=np.array(self.plant.u_hi),
            rate_limits=self.rate_limits,
            u_nom=np.array(self.plant.u_nom),
            slope_window=self.slope_window,
            n_e=int(n_e if n_e is not None else t["n_e"]),
            horizon=int(t["horizon"]),
            ylim_box=tuple(tuple(float(x) for x in pair) for pair in t["ylim_box"]),
            cv_bounds=tuple(tuple(float(x) for x in pair) for pair in t["cv_bounds"]),
        )


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
        data = loaded
    data = _merge(DEFAULTS, data)
    for item in overrides or []:
        apply_override(data, item)
    return RunConfig.from_dict(data)


def dump_default_config(path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# sagtwin run configuration (defaults; edit freely)\n")
        yaml.safe_dump(DEFAULTS, fh, sort_keys=True, default_flow_style=None)
