"""Discrete state-space model of the three MV regulatory loops.

The loops are physically independent, so identification fits one SISO
output-error model per MV (setpoint -> actual value), each in controllable
canonical form, and assembles the result block-diagonally.  Fitting
minimizes the *simulation* error with the disturbance held at zero:
an equation-error least-squares estimate seeds a damped Gauss-Newton
refinement, with a few fixed pole multi-starts as fallback.

The disturbance input matrix K comes from a one-step innovation
regression on the simulation residuals, and the constant disturbance
``e`` together with the initial state is re-estimated by linear least
squares over a trailing window each time the twin runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, lfiltic

from .errors import IdentificationError, InsufficientDataError
from .timeseries import MV_IDS, SP_IDS, Series


@dataclass
class StateSpaceModel:
    a: np.ndarray   # [n, n]
    b: np.ndarray   # [n, 3]
    c: np.ndarray   # [3, n]
    d: np.ndarray   # [3, 3]
    k: np.ndarray   # [n, 3]
    order: int      # n, total state count
    dt: float = 30.0
    loop_orders: tuple[int, ...] = ()
    fit_nrmse: np.ndarray | None = None

    def __post_init__(self):
        n = self.order
        shapes = {"a": (n, n), "b": (n, 3), "c": (3, n), "d": (3, 3), "k": (n, 3)}
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"matrix {name} has shape {got}, expected {want}")

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.a)))) if self.order else 0.0


@dataclass
class RegulatoryEstimate:
    """Initial state and constant disturbance fitted over a trailing window."""

    x0: np.ndarray
    e: np.ndarray
    n_e: int
    objective: float = 0.0


def simulate(
    model: StateSpaceModel,
    usp: np.ndarray,
    x0: np.ndarray | None = None,
    e: np.ndarray | None = None,
) -> np.ndarray:
    """Run  x+ = A x + B usp + K e,  u = C x + D usp + e  over a setpoint
    sequence, returning the simulated MV sequence [T, 3]."""
    usp = np.asarray(usp, dtype=float)
    if usp.ndim != 2 or usp.shape[1] != 3:
        raise ValueError(f"usp must be [T, 3], got {usp.shape}")
    if usp.shape[0] < 1:
        raise ValueError("setpoint sequence must have length >= 1")
    x = np.zeros(model.order) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (model.order,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({model.order},)")
    ev = np.zeros(3) if e is None else np.asarray(e, dtype=float)
    if ev.shape != (3,):
        raise ValueError(f"e has shape {ev.shape}, expected (3,)")
    out = np.empty_like(usp)
    ke = model.k @ ev
    for t in range(usp.shape[0]):
        out[t] = model.c @ x + model.d @ usp[t] + ev
        x = model.a @ x + model.b @ usp[t] + ke
    return out


def advance_state(model: StateSpaceModel, x: np.ndarray, usp_t: np.ndarray, e: np.ndarray) -> np.ndarray:
    """One state update  x+ = A x + B usp + K e."""
    return model.a @ x + model.b @ usp_t + model.k @ e


def output(model: StateSpaceModel, x: np.ndarray, usp_t: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Instantaneous output  u = C x + D usp + e."""
    return model.c @ x + model.d @ usp_t + e


# ---------------------------------------------------------------------------
# SISO output-error machinery
# ---------------------------------------------------------------------------

def _ar_filter(a: np.ndarray, x: np.ndarray, ic: np.ndarray | None = None) -> np.ndarray:
    """y(k) = x(k) + sum_j a_j y(k-j), with optional pre-sample outputs
    ``ic`` = [y(-1), ..., y(-n)] (zero when omitted)."""
    den = np.concatenate(([1.0], -np.asarray(a, dtype=float)))
    if ic is None:
        return lfilter([1.0], den, x)
    zi = lfiltic([1.0], den, y=ic)
    out, _ = lfilter([1.0], den, x, zi=zi)
    return out


def _shifted_input(usp: np.ndarray, i: int) -> np.ndarray:
    """usp(k-i) with the record constant-extended into the past."""
    if i == 0:
        return usp
    out = np.empty_like(usp)
    out[:i] = usp[0]
    out[i:] = usp[:-i]
    return out


def _free_response_basis(a: np.ndarray, length: int) -> np.ndarray:
    """Column j is the output response to a unit pre-sample y(-j-1)."""
    n = len(a)
    basis = np.zeros((length, n))
    for j in range(n):
        ic = np.zeros(n)
        ic[j] = 1.0
        basis[:, j] = _ar_filter(a, np.zeros(length), ic=ic)
    return basis


def _oe_simulate(a: np.ndarray, b: np.ndarray, usp: np.ndarray, ic: np.ndarray | None = None) -> np.ndarray:
    """Simulate u(k) = sum a_j u(k-j) + sum b_i usp(k-i) with estimated
    pre-sample outputs and constant-extended pre-sample inputs, so records
    that start away from zero carry no artificial startup transient."""
    forced = np.zeros_like(usp)
    for i in range(len(b)):
        forced += b[i] * _shifted_input(usp, i)
    return _ar_filter(a, forced, ic=ic) if len(a) else forced


def _stabilize(a: np.ndarray) -> np.ndarray:
    """Reflect unstable poles of 1 - a1 z^-1 - ... inside the unit disk."""
    if len(a) == 0:
        return a
    poly = np.concatenate(([1.0], -a))
    roots = np.roots(poly)
    mags = np.abs(roots)
    if np.all(mags < 0.999):
        return a
    roots = np.where(mags >= 0.999, roots / np.maximum(mags, 1e-12) ** 2 * 0.998, roots)
    new_poly = np.real(np.poly(roots))
    return -new_poly[1:]


def _fit_b_given_a(a: np.ndarray, usp: np.ndarray, u: np.ndarray, nb: int) -> tuple[np.ndarray, np.ndarray]:
    """The simulated output is linear in (b, pre-sample ICs) for fixed a;
    solve both exactly."""
    n = len(a)
    basis = np.zeros((len(u), nb + n))
    for i in range(nb):
        basis[:, i] = _ar_filter(a, _shifted_input(usp, i))
    basis[:, nb:] = _free_response_basis(a, len(u))
    sol, *_ = np.linalg.lstsq(basis, u, rcond=None)
    return sol[:nb], sol[nb:]


def _nrmse(u: np.ndarray, u_hat: np.ndarray) -> float:
    """RMS error normalized by the RMS deviation from the mean."""
    num = float(np.linalg.norm(u - u_hat))
    den = float(np.linalg.norm(u - u.mean()))
    if den < 1e-12 * max(1.0, float(np.abs(u).max(initial=0.0))):
        return 0.0 if num < 1e-9 * max(1.0, float(np.abs(u).max(initial=0.0))) else np.inf
    return num / den


def _gauss_newton(
    a: np.ndarray, b: np.ndarray, ic: np.ndarray, usp: np.ndarray, u: np.ndarray, iters: int = 40
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Damped Gauss-Newton on the simulation error over (a, b, ICs)."""
    n, nb = len(a), len(b)
    lam = 1e-3
    u_hat = _oe_simulate(a, b, usp, ic=ic)
    cost = float(np.sum((u - u_hat) ** 2))
    for _ in range(iters):
        # d u_hat / d a_j = (1/A) u_hat(k-j);  d/d b_i = (1/A) usp(k-i);
        # d/d ic_j = free-response basis of A
        jac = np.zeros((len(u), n + nb + n))
        for j in range(1, n + 1):
            shifted = np.empty_like(u_hat)
            shifted[:j] = ic[:j][::-1] if j <= len(ic) else 0.0
            shifted[j:] = u_hat[:-j]
            jac[:, j - 1] = _ar_filter(a, shifted)
        for i in range(nb):
            jac[:, n + i] = _ar_filter(a, _shifted_input(usp, i))
        jac[:, n + nb:] = _free_response_basis(a, len(u))
        resid = u - u_hat
        grad = jac.T @ resid
        hess = jac.T @ jac
        scale = np.maximum(np.diag(hess), 1e-12)
        improved = False
        for _ in range(8):
            try:
                step = np.linalg.solve(hess + lam * np.diag(scale), grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            a_try = _stabilize(a + step[:n])
            b_try = b + step[n : n + nb]
            ic_try = ic + step[n + nb :]
            u_try = _oe_simulate(a_try, b_try, usp, ic=ic_try)
            cost_try = float(np.sum((u - u_try) ** 2))
            if cost_try < cost:
                a, b, ic, u_hat, cost = a_try, b_try, ic_try, u_try, cost_try
                lam = max(lam * 0.3, 1e-9)
                improved = True
                break
            lam *= 10.0
        if not improved or cost < 1e-24 * max(1.0, float(np.sum(u**2))):
            break
    return a, b, ic, u_hat, cost


def _fit_siso(usp: np.ndarray, u: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Fit one setpoint->MV loop; returns (a, b, u_hat, nrmse)."""
    n = order
    t0 = n
    # equation-error initialization
    cols = [u[t0 - j : len(u) - j] for j in range(1, n + 1)]
    cols += [usp[t0 - i : len(usp) - i] for i in range(0, n + 1)]
    phi = np.column_stack(cols)
    target = u[t0:]
    theta, residuals, rank, sv = np.linalg.lstsq(phi, target, rcond=None)
    if rank < phi.shape[1]:
        pred = phi @ theta
        rel = np.linalg.norm(target - pred) / max(np.linalg.norm(target - target.mean()), 1e-12)
        if rel > 1e-6 and np.linalg.norm(target - pred) > 1e-9 * max(1.0, np.abs(target).max()):
            cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
            raise IdentificationError(
                f"rank-deficient regressor (rank {rank} of {phi.shape[1]})",
                diagnostics={"rank": int(rank), "cols": int(phi.shape[1]), "cond": cond,
                             "singular_values": sv.tolist()},
            )
    starts = [(_stabilize(theta[:n]), theta[n:].copy(), np.full(n, u[0]))]
    fixed_poles = {1: [(0.3,), (0.6,), (0.9,)], 2: [(0.6, 0.3), (0.9, 0.5), (0.95, 0.8)]}
    for poles in fixed_poles.get(n, [tuple(0.5 + 0.4 * np.cos(np.pi * (i + 1) / (n + 1)) for i in range(n))]):
        a_init = -np.poly(np.array(poles))[1:]
        b_init, ic_init = _fit_b_given_a(a_init, usp, u, n + 1)
        starts.append((a_init, b_init, ic_init))
    best = None
    for a0, b0, ic0 in starts:
        a_f, b_f, ic_f, u_hat, cost = _gauss_newton(
            a0.astype(float), b0.astype(float), ic0.astype(float), usp, u
        )
        if best is None or cost < best[-1]:
            best = (a_f, b_f, u_hat, cost)
    a_fit, b_fit, u_hat, _ = best
    return a_fit, b_fit, u_hat, _nrmse(u, u_hat)


def _tf2ss(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Controllable canonical realization of
    (b0 + b1 z^-1 + ... + bn z^-n) / (1 - a1 z^-1 - ... - an z^-n)."""
    n = len(a)
    if len(b) < n + 1:
        b = np.concatenate([b, np.zeros(n + 1 - len(b))])
    A = np.zeros((n, n))
    if n:
        A[0, :] = a
        A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    if n:
        B[0, 0] = 1.0
    d = b[0]
    C = (b[1 : n + 1] + a * d).reshape(1, n)
    return A, B, C, float(d)


def identify(train: Series, order: int) -> StateSpaceModel:
    """Fit the three-loop regulatory model of the given per-loop order."""
    u = train.select(MV_IDS)
    usp = train.select(SP_IDS)
    if len(train) < 10 * (2 * order + 1):
        raise InsufficientDataError(f"{len(train)} samples is too short for order {order}")
    blocks = []
    nrmse = np.empty(3)
    u_hat = np.empty_like(u)
    for j in range(3):
        a_j, b_j, u_hat_j, fit = _fit_siso(usp[:, j], u[:, j], order)
        nrmse[j] = fit
        u_hat[:, j] = u_hat_j
        blocks.append(_tf2ss(a_j, b_j))
    n_total = 3 * order
    A = np.zeros((n_total, n_total))
    B = np.zeros((n_total, 3))
    C = np.zeros((3, n_total))
    D = np.zeros((3, 3))
    for j, (Aj, Bj, Cj, dj) in enumerate(blocks):
        sl = slice(j * order, (j + 1) * order)
        A[sl, sl] = Aj
        B[sl, j] = Bj[:, 0]
        C[j, sl] = Cj[0]
        D[j, j] = dj
    model = StateSpaceModel(
        a=A, b=B, c=C, d=D, k=np.zeros((n_total, 3)), order=n_total,
        dt=train.dt, loop_orders=(order,) * 3, fit_nrmse=nrmse,
    )
    if model.spectral_radius() >= 1.0:
        raise IdentificationError(
            f"identified model unstable (spectral radius {model.spectral_radius():.4f})"
        )
    model.k = _innovation_k(model, u - u_hat)
    return model


def _innovation_k(model: StateSpaceModel, resid: np.ndarray) -> np.ndarray:
    """Regress the simulation residual of each loop onto the output response
    of candidate disturbance-injection directions (one-step innovation
    regression); near-perfect fits yield K ~ 0."""
    K = np.zeros((model.order, 3))
    for j, nj in enumerate(model.loop_orders):
        sl = slice(sum(model.loop_orders[:j]), sum(model.loop_orders[: j + 1]))
        Aj = model.a[sl, sl]
        Cj = model.c[j, sl]
        v = resid[:, j]
        basis = np.zeros((len(v), nj))
        for i in range(nj):
            x = np.zeros(nj)
            col = np.zeros(len(v))
            for t in range(len(v)):
                col[t] = Cj @ x
                x = Aj @ x
                x[i] += v[t]
            basis[:, i] = col
        sol, *_ = np.linalg.lstsq(basis, v, rcond=None)
        K[sl, j] = sol
    return K


def select_order(train: Series, candidates: list[int], threshold: float = 0.02) -> int:
    """Smallest candidate order whose fit the next one does not improve by
    more than ``threshold`` (relative NRMSE).  Near-zero fits short-circuit."""
    if not candidates:
        raise ValueError("candidate order list is empty")
    candidates = sorted(candidates)
    floor = 1e-7
    fits = []
    for n in candidates:
        model = identify(train, n)
        fits.append(float(np.mean(model.fit_nrmse)))
        if fits[-1] < floor:
            return n
    for i in range(len(candidates) - 1):
        improvement = (fits[i] - fits[i + 1]) / max(fits[i], 1e-300)
        if improvement < threshold:
            return candidates[i]
    return candidates[-1]


def estimate_state(
    model: StateSpaceModel,
    u_recent: np.ndarray,
    usp_recent: np.ndarray,
    n_e: int,
) -> RegulatoryEstimate:
    """Least-squares fit of (x0, e) over the trailing ``n_e`` samples with
    the model matrices frozen.  The window covers the most recent samples;
    x0 is the state at the start of that window."""
    u_recent = np.asarray(u_recent, dtype=float)
    usp_recent = np.asarray(usp_recent, dtype=float)
    if n_e < model.order:
        raise InsufficientDataError(
            f"window n_e={n_e} under-determines order {model.order}"
        )
    if len(u_recent) < n_e or len(usp_recent) < n_e:
        raise InsufficientDataError(f"need {n_e} recent samples, got {len(u_recent)}")
    u_w = u_recent[-n_e:]
    usp_w = usp_recent[-n_e:]
    zeros_usp = np.zeros_like(usp_w)
    f = simulate(model, usp_w)
    n = model.order
    cols = []
    for i in range(n):
        x0 = np.zeros(n)
        x0[i] = 1.0
        cols.append(simulate(model, zeros_usp, x0=x0).ravel())
    for j in range(3):
        ej = np.zeros(3)
        ej[j] = 1.0
        cols.append(simulate(model, zeros_usp, e=ej).ravel())
    M = np.column_stack(cols)
    rhs = (u_w - f).ravel()
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    x0, e = sol[:n], sol[n:]
    resid = rhs - M @ sol
    return RegulatoryEstimate(x0=x0, e=e, n_e=n_e, objective=float(np.sum(resid**2)))


def propagate(model: StateSpaceModel, est: RegulatoryEstimate, usp_window: np.ndarray) -> np.ndarray:
    """State at the end of the estimation window (the current instant),
    obtained by rolling x0 through the window's setpoints."""
    usp_window = np.asarray(usp_window, dtype=float)[-est.n_e :]
    x = est.x0.copy()
    ke = model.k @ est.e
    for t in range(usp_window.shape[0]):
        x = model.a @ x + model.b @ usp_window[t] + ke
    return x


# ---------------------------------------------------------------------------
# Plain-text persistence
# ---------------------------------------------------------------------------

def save_model(path, model: StateSpaceModel) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sagtwin-statespace 1\n")
        fh.write(f"order {model.order}\n")
        fh.write(f"loop_orders {' '.join(str(n) for n in model.loop_orders)}\n")
        fh.write(f"dt {model.dt!r}\n")
        for name in ("a", "b", "c", "d", "k"):
            mat = getattr(model, name)
            fh.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n")
            for row in mat:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
        nrmse = model.fit_nrmse if model.fit_nrmse is not None else np.zeros(3)
        fh.write("nrmse " + " ".join(repr(float(x)) for x in nrmse) + "\n")


def load_model(path) -> StateSpaceModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].split()[0] != "sagtwin-statespace":
        raise ValueError("not a sagtwin state-space model file")
    idx = 1
    order = int(lines[idx].split()[1]); idx += 1
    loop_orders = tuple(int(x) for x in lines[idx].split()[1:]); idx += 1
    dt = float(lines[idx].split()[1]); idx += 1
    mats = {}
    for name in ("a", "b", "c", "d", "k"):
        head = lines[idx].split(); idx += 1
        rows, cols = int(head[1]), int(head[2])
        mat = np.array([[float(x) for x in lines[idx + r].split()] for r in range(rows)])
        mat = mat.reshape(rows, cols)
        idx += rows
        mats[name] = mat
    nrmse = np.array([float(x) for x in lines[idx].split()[1:]])
    return StateSpaceModel(order=order, dt=dt, loop_orders=loop_orders, fit_nrmse=nrmse, **mats)
