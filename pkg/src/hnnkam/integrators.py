"""Dormand-Prince 5(4) and classical RK4 integration, and gradient datasets."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1


class IntegrationError(RuntimeError):
    pass


class StiffnessError(IntegrationError):
    pass


class DivergenceError(IntegrationError):
    pass


class DatasetError(RuntimeError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or len(self.states) != len(self.times):
            raise ValueError("states must be (len(times), dim)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th-order minus embedded 4th-order weights, over all seven stages (FSAL)
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + th) = y + h * (K^T P) [th, th^2, th^3, th^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
PI_ALPHA = 0.7 / 5
PI_BETA = 0.4 / 5
MIN_FACTOR, MAX_FACTOR = 0.1, 5.0


def _dp_step(f, t, y, h, k1):
    k = np.empty((7, y.size))
    k[0] = k1
    # trial stages may overflow; the step controller rejects them or raises
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, 6):
            k[i] = f(t + _C[i] * h, y + h * (np.asarray(_A[i]) @ k[:i]))
        y_new = y + h * (_B @ k[:6])
        k[6] = f(t + h, y_new)
    return y_new, k


def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"non-finite state at t = {t:.6g}")


def _initial_step(f, t0, y0, f0, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def dopri45(field_fn, u0, t_span, rtol=1e-8, atol=1e-10, dense_times=None, fixed_step=None):
    """Integrate ``du/dt = field_fn(u)`` with the Dormand-Prince 5(4) pair.

    Step size is set by a PI controller (exponents 0.7/5 and 0.4/5, safety
    0.9, per-step change clipped to [0.1, 5]). States are reported at
    ``dense_times`` (default: both ends of ``t_span``) using the 4th-order
    continuous extension. With ``fixed_step`` the error control is switched
    off and uniform steps of that size are taken (used for order checks).
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("t_span must be increasing")
    span = t1 - t0
    y = np.array(u0, dtype=float).ravel()
    out_t = np.array([t0, t1] if dense_times is None else dense_times, dtype=float)
    if np.any(out_t < t0 - 1e-12 * span) or np.any(out_t > t1 + 1e-12 * span):
        raise ValueError("dense_times must lie inside t_span")

    def f(t, v):
        return np.asarray(field_fn(v), dtype=float)

    out = np.empty((len(out_t), y.size))
    nxt = 0
    while nxt < len(out_t) and out_t[nxt] <= t0:
        out[nxt] = y
        nxt += 1

    t = t0
    k1 = f(t, y)
    _check_finite(k1, t)
    if fixed_step is not None:
        h = float(fixed_step)
    else:
        h = _initial_step(f, t, y, k1, rtol, atol, span)
    err_prev = 1e-4
    n_steps = n_rejected = 0
    while t < t1 and nxt < len(out_t):
        h = min(h, t1 - t)
        if fixed_step is None and h < 1e-14 * span:
            raise StiffnessError(f"step size underflow (h = {h:.3e}) at t = {t:.6g}")
        y_new, k = _dp_step(f, t, y, h, k1)
        _check_finite(y_new, t + h)
        if fixed_step is None:
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = np.sqrt(np.mean((h * (_E @ k) / scale) ** 2))
            if err > 1.0:
                n_rejected += 1
                h *= max(MIN_FACTOR, SAFETY * err ** (-1 / 5))
                continue
        t_new = t + h
        if nxt < len(out_t) and out_t[nxt] <= t_new:
            q = k.T @ _P
            while nxt < len(out_t) and out_t[nxt] <= t_new:
                x = (out_t[nxt] - t) / h
                out[nxt] = y + h * (q @ (x ** np.arange(1, 5)))
                nxt += 1
        t, y, k1 = t_new, y_new, k[6]
        n_steps += 1
        if fixed_step is None:
            if err == 0.0:
                fac = MAX_FACTOR
            else:
                fac = SAFETY * err ** (-PI_ALPHA) * err_prev ** PI_BETA
                fac = min(MAX_FACTOR, max(MIN_FACTOR, fac))
            err_prev = max(err, 1e-4)
            h *= fac
        elif t1 - t < 1e-12 * span:
            t = t1
    while nxt < len(out_t):
        out[nxt] = y
        nxt += 1
    meta = {"method": "dopri45", "rtol": rtol, "atol": atol, "n_steps": n_steps, "n_rejected": n_rejected}
    if fixed_step is not None:
        meta["fixed_step"] = fixed_step
    return Trajectory(out_t, out, meta)


def rk4_fixed(field_fn, u0, dt, n_steps):
    """Classical fourth-order Runge-Kutta with a constant step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.array(u0, dtype=float).ravel()
    states = np.empty((n_steps + 1, y.size))
    states[0] = y
    for i in range(n_steps):
        k1 = field_fn(y)
        k2 = field_fn(y + 0.5 * dt * k1)
        k3 = field_fn(y + 0.5 * dt * k2)
        k4 = field_fn(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(y, (i + 1) * dt)
        states[i + 1] = y
    return Trajectory(dt * np.arange(n_steps + 1), states, {"method": "rk4", "dt": dt})


# ---------------------------------------------------------------------------
# datasets


@dataclass
class GradientDataset:
    """Sampled states ``u`` with their time derivatives ``dudt`` (rows)."""

    u: np.ndarray
    dudt: np.ndarray
    t: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.dudt = np.atleast_2d(np.asarray(self.dudt, dtype=float))
        if self.u.shape != self.dudt.shape:
            raise ValueError("u and dudt must have the same shape")
        self.t = np.zeros(len(self.u)) if self.t is None else np.asarray(self.t, dtype=float)

    def __len__(self):
        return len(self.u)

    def __getitem__(self, idx):
        return GradientDataset(self.u[idx], self.dudt[idx], self.t[idx], self.provenance)

    @property
    def dim(self):
        return self.u.shape[1]

    @property
    def input_radius(self):
        return float(np.linalg.norm(self.u, axis=1).max())


def standard_normal_sampler(rng, dim):
    return rng.standard_normal(dim)


def generate_dataset(system, n_traj=100, t_span=(0.0, 5.0), n_points=100, init_sampler=None,
                     seed=0, rtol=1e-8, atol=1e-10, initial_states=None):
    """Integrate ``n_traj`` initial conditions and record ``(u, field(u))`` at uniform times.

    ``init_sampler(rng, dim)`` draws one initial state (standard normal by
    default); ``initial_states`` overrides sampling entirely.
    """
    if n_traj < 1 or n_points < 1:
        raise ValueError("n_traj and n_points must be at least 1")
    rng = np.random.default_rng(seed)
    sampler = init_sampler or standard_normal_sampler
    if initial_states is not None:
        ics = np.atleast_2d(np.asarray(initial_states, dtype=float))
        n_traj = len(ics)
        sampler_name = "given"
    else:
        ics = np.array([sampler(rng, system.dim) for _ in range(n_traj)])
        sampler_name = getattr(sampler, "__name__", "custom")
    times = np.linspace(t_span[0], t_span[1], n_points) if n_points > 1 else np.array([float(t_span[0])])
    us, ts = [], []
    for i, u0 in enumerate(ics):
        if n_points == 1:
            states = u0[None, :]
        else:
            try:
                states = dopri45(system.field, u0, t_span, rtol, atol, dense_times=times).states
            except (IntegrationError, FloatingPointError) as exc:
                raise DatasetError(f"trajectory {i} (seed {seed}, u0 = {u0.tolist()}) failed: {exc}") from exc
        us.append(states)
        ts.append(times)
    u = np.concatenate(us)
    dudt = np.asarray(system.field(u), dtype=float)
    provenance = {
        "system": system.name,
        "params": dict(system.params),
        "n_traj": int(n_traj),
        "t_span": [float(t_span[0]), float(t_span[1])],
        "n_points": int(n_points),
        "sampler": sampler_name,
        "seed": seed,
        "rtol": rtol,
        "atol": atol,
    }
    return GradientDataset(u, dudt, np.concatenate(ts), provenance)


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_csv(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = [h.strip() for h in next(r)]
        data = np.array([[float(x) for x in row] for row in r if row])
    return header, data.reshape(-1, len(header))


def save_dataset(ds, path, extra_meta=None):
    """Write ``path`` (CSV) and ``path`` with a ``.json`` suffix (metadata)."""
    n = ds.dim
    header = ["t"] + [f"u_{i}" for i in range(n)] + [f"dudt_{i}" for i in range(n)]
    write_csv(path, header, np.column_stack([ds.t, ds.u, ds.dudt]))
    meta = {
        "schema_version": SCHEMA_VERSION,
        "n_samples": len(ds),
        "dim": n,
        "input_radius": ds.input_radius,
        "provenance": ds.provenance,
    }
    meta.update(extra_meta or {})
    with open(_sidecar(path), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_dataset(path):
    header, data = read_csv(path)
    n = (len(header) - 1) // 2
    if header[0] != "t" or header[1:n + 1] != [f"u_{i}" for i in range(n)]:
        raise DatasetError(f"{path}: unexpected header")
    try:
        with open(_sidecar(path)) as f:
            provenance = json.load(f).get("provenance", {})
    except FileNotFoundError:
        provenance = {}
    return GradientDataset(data[:, 1:n + 1], data[:, n + 1:], data[:, 0], provenance)


def save_trajectory(traj, path, extra_meta=None):
    n = traj.states.shape[1]
    write_csv(path, ["t"] + [f"u_{i}" for i in range(n)], np.column_stack([traj.times, traj.states]))
    meta = {"schema_version": SCHEMA_VERSION, "meta": traj.meta}
    meta.update(extra_meta or {})
    with open(_sidecar(path), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_trajectory(path):
    header, data = read_csv(path)
    return Trajectory(data[:, 0], data[:, 1:], {"source": str(path)})


def _sidecar(path):
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"
