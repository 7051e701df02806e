"""Serial composition of the three component models (expert rules,
regulatory state space, NARX) into the moving-horizon digital twin, plus
the operating-limit optimizer.

At every invocation the twin re-anchors on measured history: the
regulatory initial state and constant disturbance are re-estimated over a
trailing window, then the three models roll forward together.  For step i
the expert model consumes the newest values and slopes available at that
predicted instant (measured tails first, its own predictions afterwards),
the regulatory model turns the resulting setpoints into MV estimates, and
the NARX predicts the CVs from the mixed measured/predicted lag stacks.
Plant truth never leaks into the horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fuzzy, narx, statespace
from .errors import InfeasibleYlimError, StateError
from .timeseries import CV_IDS, MV_IDS, SP_IDS, LagStack, Series


@dataclass
class TwinConfig:
    mv_lo: np.ndarray
    mv_hi: np.ndarray
    rate_limits: np.ndarray
    u_nom: np.ndarray
    slope_window: int = 4
    n_e: int = 160                      # regulatory estimation window
    horizon: int = 5
    ylim_box: tuple[tuple[float, float], tuple[float, float]] = ((4950.0, 6050.0), (11970.0, 14630.0))
    cv_bounds: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 6000.0), (0.0, 15000.0))

    def ylim_in_box(self, ylim: fuzzy.YLim) -> bool:
        (lo1, hi1), (lo2, hi2) = self.ylim_box
        return lo1 <= ylim.y1 <= hi1 and lo2 <= ylim.y2 <= hi2


@dataclass
class DigitalTwin:
    rules: fuzzy.RuleBase
    spec: fuzzy.MembershipSpec
    reg_model: statespace.StateSpaceModel
    narx_model: narx.NarxModel
    config: TwinConfig

    @property
    def min_history(self) -> int:
        hp = self.narx_model.hyper
        return max(hp.m, hp.n, self.config.slope_window, self.config.n_e) + 1


@dataclass
class TwinTrajectory:
    y_hat: np.ndarray     # [N+1, 2]
    u_hat: np.ndarray     # [N+1, 3]
    usp_hat: np.ndarray   # [N+1, 3]

    def __post_init__(self):
        n = self.y_hat.shape[0]
        if self.u_hat.shape[0] != n or self.usp_hat.shape[0] != n:
            raise ValueError("trajectory blocks have inconsistent lengths")
        for block in (self.y_hat, self.u_hat, self.usp_hat):
            if not np.all(np.isfinite(block)):
                raise ValueError("trajectory contains non-finite values")


@dataclass
class TwinState:
    """Per-session twin bookkeeping (buffers live in the session history)."""

    expert: fuzzy.ExpertState
    estimate: statespace.RegulatoryEstimate | None
    estimate_anchor: int
    ylim: fuzzy.YLim
    horizon: int
    lags: tuple[int, int]


@dataclass
class Objective:
    """Minimization objective over a twin trajectory.

    ``f = -throughput_reward * sum(u1_hat)  (t/h)
         + limit_penalty * sum(relu(y_hat - margin * y_lim)^2 / y_lim^2)
         + move_penalty * sum(||d usp / rate_limits||^2)``
    """

    throughput_reward: float = 0.01
    limit_penalty: float = 5000.0
    move_penalty: float = 1.0
    margin: float = 0.98

    def __post_init__(self):
        if self.limit_penalty < 0 or self.move_penalty < 0:
            raise ValueError("penalty weights must be >= 0")


def reanchor(twin: DigitalTwin, history: Series) -> statespace.RegulatoryEstimate:
    """Refresh the regulatory estimate (initial state + constant
    disturbance) over the trailing estimation window of measured data."""
    u = history.select(MV_IDS)
    usp = history.select(SP_IDS)
    return statespace.estimate_state(twin.reg_model, u, usp, twin.config.n_e)


def _slopes_from(rows: list[np.ndarray], window: int, dt: float) -> dict[str, float]:
    w = min(window, len(rows))
    if w < 2:
        return {"y1": 0.0, "y2": 0.0}
    block = np.array(rows[-w:])
    t = np.arange(w, dtype=float) * dt
    t = t - t.mean()
    denom = float(t @ t)
    sl = (t @ (block - block.mean(axis=0))) / denom
    return {"y1": float(sl[0]), "y2": float(sl[1])}


def predict_horizon(
    twin: DigitalTwin,
    history: Series,
    ylim: fuzzy.YLim,
    n_steps: int | None = None,
    estimate: statespace.RegulatoryEstimate | None = None,
) -> TwinTrajectory:
    """Closed-loop twin rollout: N+1 predicted instants from the anchor.

    ``history`` holds measured data through the instant before the anchor.
    A fresh regulatory estimate is computed unless one anchored at this
    call is passed in.
    """
    cfg = twin.config
    n_steps = cfg.horizon if n_steps is None else n_steps
    if n_steps < 0:
        raise ValueError("horizon must be >= 0")
    hp = twin.narx_model.hyper
    need = max(hp.m, hp.n, cfg.slope_window)
    if len(history) < max(need, cfg.n_e):
        raise StateError(
            f"history has {len(history)} rows; twin needs {max(need, cfg.n_e)}"
        )
    est = estimate if estimate is not None else reanchor(twin, history)

    u_meas = history.select(MV_IDS)
    usp_meas = history.select(SP_IDS)
    y_meas = history.select(CV_IDS)
    x = statespace.propagate(twin.reg_model, est, usp_meas)

    tail = max(need, 1)
    y_seq = [row.copy() for row in y_meas[-tail:]]
    u_seq = [row.copy() for row in u_meas[-tail:]]
    usp_prev = usp_meas[-1].copy()

    y_hat = np.empty((n_steps + 1, 2))
    u_hat = np.empty((n_steps + 1, 3))
    usp_hat = np.empty((n_steps + 1, 3))
    for i in range(n_steps + 1):
        values = {
            "y1": y_seq[-1][0], "y2": y_seq[-1][1],
            "u1": u_seq[-1][0], "u2": u_seq[-1][1], "u3": u_seq[-1][2],
        }
        slopes = _slopes_from(y_seq, cfg.slope_window, history.dt)
        delta = fuzzy.recommend(
            values, slopes, ylim, twin.rules, twin.spec,
            cfg.mv_lo, cfg.mv_hi, cfg.rate_limits, current_usp=usp_prev,
        )
        usp_i = np.clip(usp_prev + delta, cfg.mv_lo, cfg.mv_hi)
        u_i = statespace.output(twin.reg_model, x, usp_i, est.e)
        x = statespace.advance_state(twin.reg_model, x, usp_i, est.e)
        cv_stack = LagStack(entries=np.array(y_seq[-hp.m:])[::-1].copy())
        mv_rows = u_seq[-(hp.n - 1):] + [u_i] if hp.n > 1 else [u_i]
        mv_stack = LagStack(entries=np.array(mv_rows)[::-1].copy())
        y_i = narx.predict_one(twin.narx_model, cv_stack, mv_stack)

        y_hat[i], u_hat[i], usp_hat[i] = y_i, u_i, usp_i
        y_seq.append(y_i)
        u_seq.append(u_i)
        usp_prev = usp_i
    return TwinTrajectory(y_hat=y_hat, u_hat=u_hat, usp_hat=usp_hat)


def nowcast(twin: DigitalTwin, history: Series, ylim: fuzzy.YLim) -> np.ndarray:
    """The twin's prediction of the instant about to be measured."""
    return predict_horizon(twin, history, ylim, n_steps=0).y_hat[0]


def evaluate_objective(
    traj: TwinTrajectory,
    ylim: fuzzy.YLim,
    objective: Objective,
    usp_before: np.ndarray,
    rate_limits: np.ndarray,
) -> float:
    """Scalar cost of a trajectory (minimization sense)."""
    lim = ylim.as_array()
    reward = objective.throughput_reward * float(np.sum(traj.u_hat[:, 0]))
    over = np.maximum(0.0, traj.y_hat - objective.margin * lim) / lim
    limit_pen = objective.limit_penalty * float(np.sum(over**2))
    moves = np.diff(np.vstack([usp_before, traj.usp_hat]), axis=0) / rate_limits
    move_pen = objective.move_penalty * float(np.sum(moves**2))
    return -reward + limit_pen + move_pen


def optimize_ylim(
    twin: DigitalTwin,
    history: Series,
    candidates: list[fuzzy.YLim],
    objective: Objective,
    n_steps: int | None = None,
) -> tuple[fuzzy.YLim, float]:
    """Exhaustively evaluate the candidate operating limits and return the
    feasible argmin; ties break toward the smallest (most conservative)
    limits.  Candidates whose predicted CVs leave the hard bounds are
    rejected; if every candidate is rejected the infeasibility signal
    carries per-candidate diagnostics."""
    if not candidates:
        raise ValueError("candidate set is empty")
    cfg = twin.config
    for cand in candidates:
        if not cfg.ylim_in_box(cand):
            raise ValueError(f"candidate {cand} outside the y_lim box {cfg.ylim_box}")
    est = reanchor(twin, history)
    usp_before = history.select(SP_IDS)[-1]
    (lo1, hi1), (lo2, hi2) = cfg.cv_bounds
    best: tuple[float, tuple[float, float], fuzzy.YLim] | None = None
    diagnostics = []
    for cand in candidates:
        traj = predict_horizon(twin, history, cand, n_steps=n_steps, estimate=est)
        y = traj.y_hat
        violations = []
        if np.any(y[:, 0] < lo1) or np.any(y[:, 0] > hi1):
            violations.append("y1")
        if np.any(y[:, 1] < lo2) or np.any(y[:, 1] > hi2):
            violations.append("y2")
        if violations:
            diagnostics.append({"ylim": (cand.y1, cand.y2), "violates": violations})
            continue
        f = evaluate_objective(traj, cand, objective, usp_before, cfg.rate_limits)
        key = (f, (cand.y1, cand.y2))
        if best is None or key < (best[0], best[1]):
            best = (f, (cand.y1, cand.y2), cand)
    if best is None:
        raise InfeasibleYlimError("every y_lim candidate is infeasible", diagnostics)
    return best[2], best[0]


def ylim_grid(config: TwinConfig, per_axis: int = 5) -> list[fuzzy.YLim]:
    """Default exhaustive candidate grid spanning the y_lim box."""
    (lo1, hi1), (lo2, hi2) = config.ylim_box
    g1 = np.linspace(lo1, hi1, per_axis)
    g2 = np.linspace(lo2, hi2, per_axis)
    return [fuzzy.YLim(y1=float(a), y2=float(b)) for a in g1 for b in g2]


def trajectory_csv_rows(traj: TwinTrajectory, ylim: fuzzy.YLim) -> list[str]:
    """CSV export rows: step, yhat1, yhat2, uhat1..3, usphat1..3, y1_lim, y2_lim."""
    rows = ["step,yhat1,yhat2,uhat1,uhat2,uhat3,usphat1,usphat2,usphat3,y1_lim,y2_lim"]
    for i in range(traj.y_hat.shape[0]):
        vals = [i, *traj.y_hat[i], *traj.u_hat[i], *traj.usp_hat[i], ylim.y1, ylim.y2]
        rows.append(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in vals))
    return rows
