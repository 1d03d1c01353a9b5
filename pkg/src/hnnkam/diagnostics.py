"""Empirical diagnostics: energy drift, recurrence, gradient error, Hamiltonian error."""

import numpy as np

from hnnkam import nn
from hnnkam.training import align_mean, pnorm_loss


def _batch_eval(fn, states):
    if isinstance(fn, nn.Network):
        return np.asarray(nn.forward(fn, states), dtype=float).reshape(len(states))
    return np.asarray(fn(states), dtype=float).reshape(len(states))


def energy_drift(traj, H_eval):
    """``H(u(t)) - H(u(0))`` along ``traj`` plus summary statistics.

    ``trend`` is the least-squares slope of the series against time.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    H = _batch_eval(H_eval, traj.states)
    series = H - H[0]
    a = np.abs(series)
    trend = float(np.polyfit(traj.times, series, 1)[0]) if len(traj) > 1 else 0.0
    return {"times": traj.times, "series": series, "max_abs": float(a.max()),
            "mean_abs": float(a.mean()), "trend": trend}


def recurrence_error(traj, reference_state, t_center, window):
    """Closest relative L2 return to ``reference_state`` within ``t_center +- window``."""
    ref = np.asarray(reference_state, dtype=float)
    if window < 0:
        raise ValueError("window must be nonnegative")
    t = traj.times
    lo, hi = t_center - window, t_center + window
    tol = 1e-9 * max(1.0, abs(t[-1]))
    if lo < t[0] - tol or hi > t[-1] + tol:
        raise ValueError(f"window [{lo:g}, {hi:g}] exceeds the trajectory span [{t[0]:g}, {t[-1]:g}]")
    sel = np.flatnonzero((t >= lo - tol) & (t <= hi + tol))
    if len(sel) == 0:
        raise ValueError("no samples inside the window")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ValueError("reference state must be nonzero")
    err = np.linalg.norm(traj.states[sel] - ref, axis=1) / denom
    i = int(np.argmin(err))
    return {"t_best": float(t[sel[i]]), "min_error": float(err[i])}


def gradient_test_error(model, dataset, p=2.0, structure=None):
    """Per-sample ``sum |f(u) - du/dt|^p`` statistics.

    ``model`` is either a Hamiltonian network (prediction ``S grad H_NN``;
    plain ``grad H_NN`` when ``structure`` is None) or any callable mapping a
    batch of states to predicted time derivatives.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if isinstance(model, nn.Network):
        pred = nn.input_gradient(model, dataset.u)
        if structure is not None:
            pred = pred @ structure.matrix.T
    else:
        pred = np.asarray(model(dataset.u), dtype=float)
    per = pnorm_loss(pred, dataset.dudt, p)
    return {"mean": float(per.mean()), "max": float(per.max()), "per_sample": per}


def hamiltonian_value_error(h_nn, h_true, grid, align=True):
    """``|H_true - H_NN|`` statistics on ``grid`` after fixing the additive gauge."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    f_nn = (lambda x: _batch_eval(h_nn, x))
    f_true = (lambda x: _batch_eval(h_true, x))
    c = align_mean(f_nn, f_true, grid) if align else 0.0
    err = np.abs(f_true(grid) - (f_nn(grid) + c))
    return {"mean_abs": float(err.mean()), "max_abs": float(err.max()), "offset": c}
