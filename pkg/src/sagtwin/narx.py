"""NARX neural network for the SAG mill controlled variables.

One hidden tanh layer, identity output.  Inputs are min-max-scaled lag
stacks of the two CVs (m past values each) and the three MVs (the current
value plus n-1 past values each), giving 2m + 3n features.  Training is
one-step-ahead (teacher forced) mini-batch gradient descent with momentum,
plateau-halved learning rate and early stopping on a held-out 10 % tail.
Closed-loop evaluation feeds the network its own predictions, newest-first,
exactly as the moving-horizon twin consumes it.

Everything is deterministic given the seed (PCG64, the generator used
repo-wide).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import StateError, TrainingError
from .timeseries import CV_IDS, MV_IDS, LagStack, Scaler, Series

#: Variable order of the NARX scaler: the two CVs then the three MVs.
NARX_VARS = CV_IDS + MV_IDS


@dataclass(frozen=True)
class NarxHyper:
    m: int = 12                 # CV lag count
    n: int = 12                 # MV lag count (includes the current value)
    hidden: int = 2
    epochs: int = 9000
    lr: float = 1e-1
    batch: int = 128
    momentum: float = 0.9
    plateau_patience: int = 3500  # epochs without material val improvement before halving lr
    min_lr: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.hidden < 1:
            raise ValueError("m, n and hidden must all be >= 1")

    @property
    def n_features(self) -> int:
        return 2 * self.m + 3 * self.n


@dataclass
class NarxModel:
    hyper: NarxHyper
    w_in: np.ndarray    # [H, 2m+3n]
    b_h: np.ndarray     # [H]
    w_out: np.ndarray   # [2, H]
    b_out: np.ndarray   # [2]
    scaler: Scaler      # over NARX_VARS = (y1, y2, u1, u2, u3)
    train_nrmse: np.ndarray | None = None  # one-step, per CV
    val_nrmse: float | None = None
    val_checkpoints: list = field(default_factory=list)

    def params(self) -> np.ndarray:
        return np.concatenate([self.w_in.ravel(), self.b_h, self.w_out.ravel(), self.b_out])

    def set_params(self, theta: np.ndarray) -> None:
        h, f = self.w_in.shape
        i = h * f
        self.w_in = theta[:i].reshape(h, f).copy()
        self.b_h = theta[i : i + h].copy()
        i += h
        self.w_out = theta[i : i + 2 * h].reshape(2, h).copy()
        i += 2 * h
        self.b_out = theta[i : i + 2].copy()


def _forward_scaled(model: NarxModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hidden activations and scaled outputs for a batch of scaled features."""
    hid = np.tanh(x @ model.w_in.T + model.b_h)
    return hid, hid @ model.w_out.T + model.b_out


def loss_and_gradient(model: NarxModel, x: np.ndarray, y_scaled: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum-of-squared-errors loss over the batch (0.5 * sum ||r||^2) and its
    gradient with respect to the flattened parameters.  The loss is a plain
    sum, so duplicating a sample exactly doubles its gradient."""
    hid, out = _forward_scaled(model, x)
    r = out - y_scaled
    loss = 0.5 * float(np.sum(r * r))
    d_wout = r.T @ hid
    d_bout = r.sum(axis=0)
    d_hid = r @ model.w_out
    d_z = d_hid * (1.0 - hid * hid)
    d_win = d_z.T @ x
    d_bh = d_z.sum(axis=0)
    grad = np.concatenate([d_win.ravel(), d_bh, d_wout.ravel(), d_bout])
    return loss, grad


def build_dataset(series: Series, m: int, n: int, scaler: Scaler) -> tuple[np.ndarray, np.ndarray]:
    """Scaled feature matrix and targets for one-step teacher-forced training.

    Row t predicts y(t) from y(t-1..t-m) and u(t..t-n+1)."""
    data = series.select(NARX_VARS)
    scaled = scaler.transform(data)
    ys = scaled[:, :2]
    us = scaled[:, 2:]
    t_min = max(m, n - 1)
    total = len(series)
    rows = total - t_min
    if rows < 1:
        raise ValueError(f"series too short for lags m={m}, n={n}")
    feats = np.empty((rows, 2 * m + 3 * n))
    for r, t in enumerate(range(t_min, total)):
        feats[r] = assemble_features(ys[t - m : t], us[t - n + 1 : t + 1], m, n)
    return feats, ys[t_min:]


def assemble_features(cv_block: np.ndarray, mv_block: np.ndarray, m: int, n: int) -> np.ndarray:
    """Fixed feature layout: y1 lags, y2 lags (newest first), then u1, u2, u3
    lags (current value first).  Blocks arrive oldest-first."""
    cv = cv_block[::-1]
    mv = mv_block[::-1]
    return np.concatenate([cv[:, 0], cv[:, 1], mv[:, 0], mv[:, 1], mv[:, 2]])


def predict_one(model: NarxModel, cv_lags: LagStack, mv_lags: LagStack) -> np.ndarray:
    """One prediction (y1 kPa, y2 kW) from unscaled newest-first lag stacks;
    the MV stack's first entry is the current-instant MV vector."""
    m, n = model.hyper.m, model.hyper.n
    if cv_lags.depth != m or mv_lags.depth != n:
        raise StateError(
            f"lag buffers not full: need {m} CV / {n} MV rows, "
            f"got {cv_lags.depth} / {mv_lags.depth}"
        )
    cv = model.scaler.transform(np.column_stack([cv_lags.entries, np.zeros((m, 3))]))[:, :2]
    mv_pad = np.column_stack([np.zeros((n, 2)), mv_lags.entries])
    mv = model.scaler.transform(mv_pad)[:, 2:]
    x = np.concatenate([cv[:, 0], cv[:, 1], mv[:, 0], mv[:, 1], mv[:, 2]])
    _, out = _forward_scaled(model, x[None, :])
    lo, hi = model.scaler.lo[:2], model.scaler.hi[:2]
    return out[0] * (hi - lo) + lo


def predict_closed_loop(
    model: NarxModel,
    y_history: np.ndarray,
    u_history: np.ndarray,
    planned_u: np.ndarray,
    n_steps: int,
) -> np.ndarray:
    """Closed-loop rollout: N+1 predictions with the CV lag stack filled by
    the model's own predictions once measurements run out.

    ``y_history``/``u_history`` are measured rows (oldest first) through the
    anchor instant; ``planned_u`` rows are the MVs applied at the anchor and
    each predicted step (N+1 rows).
    """
    m, n = model.hyper.m, model.hyper.n
    planned_u = np.asarray(planned_u, dtype=float)
    if planned_u.shape[0] < n_steps + 1:
        raise ValueError(f"planned MV sequence has {planned_u.shape[0]} rows, need {n_steps + 1}")
    if len(y_history) < m or len(u_history) < max(n - 1, 0):
        raise StateError(f"history too shallow: need {m} CV / {n - 1} MV rows")
    ys = [row for row in np.asarray(y_history, dtype=float)[-m:]]
    us = [row for row in np.asarray(u_history, dtype=float)[-(n - 1) :]] if n > 1 else []
    preds = np.empty((n_steps + 1, 2))
    for i in range(n_steps + 1):
        us.append(planned_u[i])
        cv_stack = LagStack(entries=np.array(ys[-m:])[::-1].copy())
        mv_stack = LagStack(entries=np.array(us[-n:])[::-1].copy())
        preds[i] = predict_one(model, cv_stack, mv_stack)
        ys.append(preds[i])
    return preds


def _init_model(hyper: NarxHyper, scaler: Scaler, rng: np.random.Generator) -> NarxModel:
    f = hyper.n_features
    h = hyper.hidden
    w_in = rng.uniform(-1.0, 1.0, size=(h, f)) / np.sqrt(f)
    b_h = np.zeros(h)
    w_out = rng.uniform(-1.0, 1.0, size=(2, h)) / np.sqrt(h)
    b_out = np.zeros(2)
    return NarxModel(hyper=hyper, w_in=w_in, b_h=b_h, w_out=w_out, b_out=b_out, scaler=scaler)


def train(train_series: Series, hyper: NarxHyper, init: NarxModel | None = None) -> NarxModel:
    """Fit the network one-step-ahead on the training series.

    The last 10 % of samples form a validation tail used for plateau
    detection and early stopping; the returned model carries the best
    validation parameters seen.  Pass ``init`` to warm-start (retraining);
    the scaler is then reused unchanged so the feature space stays fixed.
    """
    rng = np.random.default_rng(np.random.PCG64(hyper.seed))
    if init is None:
        scaler = Scaler.fit(train_series.select(NARX_VARS))
        model = _init_model(hyper, scaler, rng)
    else:
        scaler = init.scaler
        model = NarxModel(
            hyper=hyper, w_in=init.w_in.copy(), b_h=init.b_h.copy(),
            w_out=init.w_out.copy(), b_out=init.b_out.copy(), scaler=scaler,
        )
    x_all, y_all = build_dataset(train_series, hyper.m, hyper.n, scaler)
    n_val = max(1, len(x_all) // 10)
    x_tr, y_tr = x_all[:-n_val], y_all[:-n_val]
    x_val, y_val = x_all[-n_val:], y_all[-n_val:]
    if len(x_tr) < 1:
        raise ValueError("not enough samples to train")

    theta = model.params()
    velocity = np.zeros_like(theta)
    lr = hyper.lr
    best_theta = theta.copy()
    best_val = np.inf
    sig_val = np.inf   # last val loss that counted as a significant improvement
    stale = 0
    model.val_checkpoints = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(x_tr))
        for start in range(0, len(x_tr), hyper.batch):
            idx = order[start : start + hyper.batch]
            loss, grad = loss_and_gradient(model, x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    "training diverged (non-finite loss)",
                    diagnostics={"epoch": epoch, "lr": lr},
                )
            velocity = hyper.momentum * velocity - lr * grad / len(idx)
            theta = theta + velocity
            model.set_params(theta)
        _, val_out = _forward_scaled(model, x_val)
        val_loss = float(np.mean((val_out - y_val) ** 2))
        if val_loss < best_val:
            best_val = val_loss
            best_theta = theta.copy()
            model.val_checkpoints.append(best_val)
        # plateau bookkeeping needs a *material* improvement, otherwise the
        # mini-batch noise floor keeps the schedule from ever annealing;
        # each halved rate gets a fresh patience window
        if val_loss < sig_val * (1.0 - 1e-3):
            sig_val = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= hyper.plateau_patience:
                if lr <= hyper.min_lr:
                    break
                lr *= 0.5
                stale = 0
    model.set_params(best_theta)
    model.train_nrmse = _one_step_nrmse(model, x_all, y_all)
    model.val_nrmse = float(np.sqrt(best_val))
    return model


def _one_step_nrmse(model: NarxModel, x: np.ndarray, y_scaled: np.ndarray) -> np.ndarray:
    _, out = _forward_scaled(model, x)
    resid = out - y_scaled
    num = np.linalg.norm(resid, axis=0)
    den = np.linalg.norm(y_scaled - y_scaled.mean(axis=0), axis=0)
    return num / np.maximum(den, 1e-12)


def one_step_errors(model: NarxModel, series: Series) -> np.ndarray:
    """Teacher-forced one-step prediction errors (unscaled, per CV) for every
    predictable instant of the series."""
    x, y_scaled = build_dataset(series, model.hyper.m, model.hyper.n, model.scaler)
    _, out = _forward_scaled(model, x)
    lo, hi = model.scaler.lo[:2], model.scaler.hi[:2]
    return (y_scaled - out) * (hi - lo)


def select_hyperparams(
    train_series: Series,
    lag_grid: list[int],
    neuron_grid: list[int],
    base: NarxHyper | None = None,
    tolerance: float = 0.02,
) -> NarxHyper:
    """Grid search over (lags, hidden neurons) with m = n = lags.

    Picks the lexicographically smallest cell (lags first) whose validation
    NRMSE is within ``tolerance`` relative of the grid best."""
    if not lag_grid or not neuron_grid:
        raise ValueError("hyperparameter grids must be nonempty")
    base = base or NarxHyper()
    results = {}
    for i, lags in enumerate(sorted(lag_grid)):
        for j, h in enumerate(sorted(neuron_grid)):
            hyper = replace(base, m=lags, n=lags, hidden=h, seed=base.seed + 1000 * (10 * i + j))
            model = train(train_series, hyper)
            results[(lags, h)] = (model.val_nrmse, hyper)
    best = min(v[0] for v in results.values())
    for key in sorted(results):
        val, hyper = results[key]
        if val <= best * (1.0 + tolerance):
            return hyper
    raise AssertionError("unreachable: grid best not found")


def gradient_check(model: NarxModel, x: np.ndarray, y_scaled: np.ndarray, h: float = 1e-5) -> float:
    """Max relative disagreement between the analytic gradient and central
    finite differences, normalized by the gradient's max magnitude."""
    if len(x) == 0:
        raise ValueError("gradient check needs a nonempty batch")
    _, grad = loss_and_gradient(model, x, y_scaled)
    theta = model.params()
    fd = np.empty_like(theta)
    probe = NarxModel(
        hyper=model.hyper, w_in=model.w_in.copy(), b_h=model.b_h.copy(),
        w_out=model.w_out.copy(), b_out=model.b_out.copy(), scaler=model.scaler,
    )
    for i in range(len(theta)):
        bumped = theta.copy()
        bumped[i] = theta[i] + h
        probe.set_params(bumped)
        lp, _ = loss_and_gradient(probe, x, y_scaled)
        bumped[i] = theta[i] - h
        probe.set_params(bumped)
        lm, _ = loss_and_gradient(probe, x, y_scaled)
        fd[i] = (lp - lm) / (2.0 * h)
    scale = max(float(np.max(np.abs(grad))), float(np.max(np.abs(fd))), 1e-12)
    return float(np.max(np.abs(grad - fd)) / scale)


# ---------------------------------------------------------------------------
# Plain-text persistence
# ---------------------------------------------------------------------------

def save_model(path, model: NarxModel) -> None:
    hp = model.hyper
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sagtwin-narx 1\n")
        fh.write(
            f"hyper m={hp.m} n={hp.n} hidden={hp.hidden} epochs={hp.epochs} "
            f"lr={hp.lr!r} batch={hp.batch} momentum={hp.momentum!r} "
            f"plateau={hp.plateau_patience} "
            f"min_lr={hp.min_lr!r} seed={hp.seed}\n"
        )
        fh.write("activation tanh identity\n")
        for name, mat in (("w_in", model.w_in), ("b_h", model.b_h[None, :]),
                          ("w_out", model.w_out), ("b_out", model.b_out[None, :])):
            fh.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n")
            for row in mat:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write("scaler_lo " + " ".join(repr(float(v)) for v in model.scaler.lo) + "\n")
        fh.write("scaler_hi " + " ".join(repr(float(v)) for v in model.scaler.hi) + "\n")


def load_model(path) -> NarxModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("sagtwin-narx"):
        raise ValueError("not a sagtwin NARX model file")
    kv = dict(item.split("=") for item in lines[1].split()[1:])
    hyper = NarxHyper(
        m=int(kv["m"]), n=int(kv["n"]), hidden=int(kv["hidden"]), epochs=int(kv["epochs"]),
        lr=float(kv["lr"]), batch=int(kv["batch"]), momentum=float(kv["momentum"]),
        plateau_patience=int(kv["plateau"]),
        min_lr=float(kv["min_lr"]), seed=int(kv["seed"]),
    )
    idx = 3
    mats = {}
    for name in ("w_in", "b_h", "w_out", "b_out"):
        head = lines[idx].split(); idx += 1
        rows, cols = int(head[1]), int(head[2])
        mat = np.array([[float(v) for v in lines[idx + r].split()] for r in range(rows)])
        idx += rows
        mats[name] = mat.reshape(rows, cols)
    lo = np.array([float(v) for v in lines[idx].split()[1:]]); idx += 1
    hi = np.array([float(v) for v in lines[idx].split()[1:]])
    return NarxModel(
        hyper=hyper, w_in=mats["w_in"], b_h=mats["b_h"][0], w_out=mats["w_out"],
        b_out=mats["b_out"][0], scaler=Scaler(lo=lo, hi=hi),
    )
