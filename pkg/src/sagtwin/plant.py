"""Synthetic closed-loop SAG process used as the data oracle and as the
live "real system" in sessions.

The plant is intentionally simple: each MV tracks its setpoint through a
first-order regulatory loop, each CV responds to delayed MV deviations
through a first-order filter with configurable gains, and motor power
carries a mild quadratic speed term so the process is genuinely nonlinear.
Slow disturbances (liner wear, ore hardness) multiply the noiseless CV
outputs.  Internally the plant advances on a 5-second grid and exposes
30-second control steps whose logged CV values are 6-point block medians,
matching the historian pipeline downstream.

All randomness comes from one PCG64 generator seeded in the config.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import fuzzy
from .errors import ConfigError
from .pipeline import RawTable
from .timeseries import DATASET_IDS, Series

RAW_DT = 5.0          # seconds, internal integration/logging grid
CONTROL_DT = 30.0     # seconds, expert/control step
SUBSTEPS = int(CONTROL_DT / RAW_DT)


class DisturbanceKind(str, Enum):
    LINER_WEAR = "liner_wear"
    ORE_HARDNESS = "ore_hardness"


@dataclass(frozen=True)
class Disturbance:
    """Multiplicative CV disturbance.

    ``magnitude`` is months of wear for liner wear (2 %/month) or the
    fractional increase for ore hardness.  The factor ramps linearly from
    0 to full over ``ramp`` seconds starting at ``onset`` seconds.
    """

    kind: DisturbanceKind
    magnitude: float
    onset: float = 0.0
    ramp: float = 0.0

    def __post_init__(self):
        if self.magnitude < 0:
            raise ConfigError("disturbance magnitude must be >= 0")
        if self.ramp < 0 or self.onset < 0:
            raise ConfigError("onset and ramp must be >= 0")


@dataclass(frozen=True)
class PlantConfig:
    # nominal operating point
    u_nom: tuple[float, float, float] = (3000.0, 72.0, 9.5)     # t/h, %, rpm
    y_nom: tuple[float, float] = (5000.0, 12000.0)              # kPa, kW
    # actuator range (also the fuzzy MV universe)
    u_lo: tuple[float, float, float] = (1500.0, 60.0, 7.5)
    u_hi: tuple[float, float, float] = (4500.0, 80.0, 11.0)
    # steady-state gains d y_i / d u_j  (rows: y1, y2)
    gains: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.9, 50.0, -40.0),
        (2.0, 120.0, 800.0),
    )
    quad_speed_power: float = 60.0   # kW per rpm^2, power's curvature in speed
    # CV first-order time constants (s) and per-channel transport delays (s)
    tau_y: tuple[float, float] = (1800.0, 1200.0)
    delay_y: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (60.0, 30.0, 30.0),
        (30.0, 30.0, 5.0),
    )
    # regulatory loop time constants (s)
    tau_u: tuple[float, float, float] = (90.0, 60.0, 45.0)
    # noise, as std fractions of nominal
    noise_std: tuple[float, float] = (0.0015, 0.0015)
    actuation_noise_std: float = 0.0005     # fraction of actuator range, per 5 s step
    # slow unmeasured output drift (ore variability): OU process per CV,
    # stationary std as a fraction of nominal
    cv_drift_std: tuple[float, float] = (0.008, 0.008)
    cv_drift_tau: float = 4800.0            # seconds
    # day-scale level wander (feed composition): near-non-reverting within a
    # campaign, teaching the process model to track sustained level shifts
    cv_walk_std: tuple[float, float] = (0.012, 0.012)
    cv_walk_tau: float = 86400.0            # seconds
    seed: int = 20240011

    def __post_init__(self):
        if any(t <= 0 for t in self.tau_y + self.tau_u) or self.cv_drift_tau <= 0 or self.cv_walk_tau <= 0:
            raise ConfigError("time constants must be > 0")
        if (any(s < 0 for s in self.noise_std + self.cv_drift_std + self.cv_walk_std)
                or self.actuation_noise_std < 0):
            raise ConfigError("noise stds must be >= 0")
        if not all(np.isfinite(np.asarray(self.gains).ravel())):
            raise ConfigError("gains must be finite")
        if any(lo >= hi for lo, hi in zip(self.u_lo, self.u_hi)):
            raise ConfigError("actuator bounds must satisfy lo < hi")


def ramp_fraction(d: Disturbance, t: float) -> float:
    """0 -> 1 progress of the disturbance at time t (seconds)."""
    if t < d.onset:
        return 0.0
    if d.ramp <= 0.0:
        return 1.0
    return min(1.0, (t - d.onset) / d.ramp)


def disturbance_factors(d: Disturbance, t: float, u3: float, u3_nom: float) -> tuple[float, float]:
    """Multiplicative factors (f1 on pressure, f2 on power) at time t.

    Liner wear adds 2 % per month to pressure and the same speed-weighted
    amount to power; ore hardness scales both CVs by the magnitude.
    """
    r = ramp_fraction(d, t)
    if d.kind is DisturbanceKind.LINER_WEAR:
        f1 = 1.0 + 0.02 * d.magnitude * r
        f2 = 1.0 + 0.02 * d.magnitude * r * (u3 / u3_nom)
        return f1, f2
    f = 1.0 + d.magnitude * r
    return f, f


def combined_factors(
    disturbances: list[Disturbance], t: float, u3: float, u3_nom: float
) -> tuple[float, float]:
    f1 = f2 = 1.0
    for d in disturbances:
        a, b = disturbance_factors(d, t, u3, u3_nom)
        f1 *= a
        f2 *= b
    return f1, f2


@dataclass
class PlantState:
    """Mutable simulation state; single-owner."""

    u: np.ndarray                 # current MV values
    cv_filter: np.ndarray         # first-order CV filter states (noiseless)
    cv_drift: np.ndarray          # slow OU output drift per CV
    cv_walk: np.ndarray           # day-scale level wander per CV
    u_delay: np.ndarray           # ring buffer of past u rows [depth, 3]
    delay_pos: int
    t: float                      # seconds since start
    rng: np.random.Generator
    disturbances: list[Disturbance] = field(default_factory=list)
    factors: tuple[float, float] = (1.0, 1.0)

    def delayed_u(self, delay_steps: int) -> np.ndarray:
        idx = (self.delay_pos - delay_steps) % self.u_delay.shape[0]
        return self.u_delay[idx]


def init_state(config: PlantConfig, disturbances: list[Disturbance] | None = None) -> PlantState:
    max_delay = int(max(max(row) for row in config.delay_y) / RAW_DT) + 1
    u0 = np.array(config.u_nom)
    return PlantState(
        u=u0.copy(),
        cv_filter=np.array(config.y_nom, dtype=float),
        cv_drift=np.zeros(2),
        cv_walk=np.zeros(2),
        u_delay=np.tile(u0, (max_delay + 1, 1)),
        delay_pos=0,
        t=0.0,
        rng=np.random.default_rng(np.random.PCG64(config.seed)),
        disturbances=list(disturbances or []),
    )


def _raw_substep(config: PlantConfig, state: PlantState, usp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Advance one 5 s step; returns the logged (u, y) row."""
    u_lo = np.array(config.u_lo)
    u_hi = np.array(config.u_hi)
    # regulatory loops: first-order tracking of the setpoints
    alpha = 1.0 - np.exp(-RAW_DT / np.array(config.tau_u))
    act_noise = state.rng.standard_normal(3) * config.actuation_noise_std * (u_hi - u_lo)
    state.u = state.u + alpha * (usp - state.u) + act_noise
    state.u = np.clip(state.u, u_lo, u_hi)
    state.delay_pos = (state.delay_pos + 1) % state.u_delay.shape[0]
    state.u_delay[state.delay_pos] = state.u

    # CV targets from delayed MV deviations
    u_nom = np.array(config.u_nom)
    gains = np.array(config.gains)
    target = np.array(config.y_nom, dtype=float)
    for i in range(2):
        for j in range(3):
            du = state.delayed_u(int(config.delay_y[i][j] / RAW_DT))[j] - u_nom[j]
            target[i] += gains[i, j] * du
    du3 = state.delayed_u(int(config.delay_y[1][2] / RAW_DT))[2] - u_nom[2]
    target[1] += config.quad_speed_power * du3 * du3

    beta = 1.0 - np.exp(-RAW_DT / np.array(config.tau_y))
    state.cv_filter = state.cv_filter + beta * (target - state.cv_filter)

    # slow unmeasured level drift (ore variability), OU with stationary std
    # cv_drift_std * y_nom
    rho = np.exp(-RAW_DT / config.cv_drift_tau)
    innov_std = np.array(config.cv_drift_std) * np.array(config.y_nom) * np.sqrt(1.0 - rho**2)
    state.cv_drift = rho * state.cv_drift + state.rng.standard_normal(2) * innov_std
    rho_w = np.exp(-RAW_DT / config.cv_walk_tau)
    walk_std = np.array(config.cv_walk_std) * np.array(config.y_nom) * np.sqrt(1.0 - rho_w**2)
    state.cv_walk = rho_w * state.cv_walk + state.rng.standard_normal(2) * walk_std

    state.t += RAW_DT
    f1, f2 = combined_factors(state.disturbances, state.t, state.u[2], config.u_nom[2])
    state.factors = (f1, f2)
    noise = state.rng.standard_normal(2) * np.array(config.noise_std) * np.array(config.y_nom)
    y = (state.cv_filter + state.cv_drift + state.cv_walk) * np.array([f1, f2]) + noise
    return state.u.copy(), np.maximum(y, 0.0)


def step_plant(config: PlantConfig, state: PlantState, usp: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance one 30 s control step (six 5 s substeps).

    Returns ``(u_med, y_med, raw_rows)``: the 6-point medians the 30 s world
    sees, plus the raw 5 s rows ``[6, 5]`` (u1..u3, y1, y2) for historians.
    """
    usp = np.asarray(usp, dtype=float)
    rows = np.empty((SUBSTEPS, 5))
    for s in range(SUBSTEPS):
        u_row, y_row = _raw_substep(config, state, usp)
        rows[s, :3] = u_row
        rows[s, 3:] = y_row
    med = np.median(rows, axis=0)
    return med[:3], med[3:], rows


@dataclass
class ExcitationConfig:
    """Operator-style pseudo-random setpoint offsets layered on the expert
    output so the data is identifiable.  Each MV independently re-draws its
    offset from uniform(-amplitude, amplitude) with mean interval ``period``
    control steps, so excursions stay bounded instead of random-walking."""

    period: float = 80.0
    amplitude: tuple[float, float, float] = (40.0, 0.5, 0.15)
    enabled: bool = True


def run_real_system(
    config: PlantConfig,
    rules: fuzzy.RuleBase,
    spec: fuzzy.MembershipSpec,
    ylim: fuzzy.YLim,
    horizon: int,
    disturbances: list[Disturbance] | None = None,
    excitation: ExcitationConfig | None = None,
    rate_limits: np.ndarray | None = None,
    start_time: float = 0.0,
    slope_window: int = 4,
) -> RawTable:
    """Closed-loop generation: real expert system + regulatory loops + plant.

    Produces ``horizon`` control steps of raw 5 s rows.  The expert model
    consumes the 6-point medians of the previous control step, mirroring
    what every 30 s consumer of the data sees.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    excitation = excitation or ExcitationConfig()
    rate_limits = np.array([75.0, 0.75, 0.20]) if rate_limits is None else rate_limits
    state = init_state(config, disturbances)
    mv_lo = np.array(config.u_lo)
    mv_hi = np.array(config.u_hi)
    usp = np.array(config.u_nom, dtype=float)

    exc_rng = np.random.default_rng(np.random.PCG64(config.seed + 991))
    exc_offset = np.zeros(3)
    ts = np.empty(horizon * SUBSTEPS, dtype=np.int64)
    values = np.empty((horizon * SUBSTEPS, 8))
    med_hist: list[np.ndarray] = []   # rows (u1..u3, y1, y2) at 30 s

    for k in range(horizon):
        if len(med_hist) >= 1:
            values_now = {
                "y1": med_hist[-1][3], "y2": med_hist[-1][4],
                "u1": med_hist[-1][0], "u2": med_hist[-1][1], "u3": med_hist[-1][2],
            }
            slopes_now = _median_slopes(med_hist, slope_window)
            delta = fuzzy.recommend(
                values_now, slopes_now, ylim, rules, spec,
                mv_lo, mv_hi, rate_limits, current_usp=usp,
            )
            usp = usp + delta
        if excitation.enabled:
            fire = exc_rng.random(3) < 1.0 / excitation.period
            draw = exc_rng.uniform(-1.0, 1.0, size=3) * np.array(excitation.amplitude)
            exc_offset = np.where(fire, draw, exc_offset)
        usp_applied = np.clip(usp + exc_offset, mv_lo, mv_hi)

        u_med, y_med, raw = step_plant(config, state, usp_applied)
        med_hist.append(np.concatenate([u_med, y_med]))
        base = k * SUBSTEPS
        for s in range(SUBSTEPS):
            ts[base + s] = int(start_time + (base + s + 1) * RAW_DT)
            values[base + s, 0:3] = raw[s, :3]
            values[base + s, 3:6] = usp_applied
            values[base + s, 6:8] = raw[s, 3:]
    return RawTable(
        ts=ts,
        values=values,
        sag_on=np.ones(horizon * SUBSTEPS, dtype=bool),
        expert_online=np.ones(horizon * SUBSTEPS, dtype=bool),
    )


def _median_slopes(med_hist: list[np.ndarray], window: int) -> dict[str, float]:
    """Least-squares CV slopes (units/s) over the trailing control steps."""
    w = min(window, len(med_hist))
    if w < 2:
        return {"y1": 0.0, "y2": 0.0}
    block = np.array(med_hist[-w:])[:, 3:5]
    t = np.arange(w, dtype=float) * CONTROL_DT
    t = t - t.mean()
    denom = float(t @ t)
    sl = (t @ (block - block.mean(axis=0))) / denom
    return {"y1": float(sl[0]), "y2": float(sl[1])}


def raw_table_to_series(table: RawTable) -> Series:
    """Interpret a raw table's rows as an already-sampled series (no
    filtering or downsampling); used by tests."""
    dt = float(table.ts[1] - table.ts[0]) if len(table) > 1 else RAW_DT
    return Series(start_time=float(table.ts[0]), dt=dt, values=table.values, ids=DATASET_IDS)
