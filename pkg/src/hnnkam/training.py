"""Gradient-matching training with Adam.

Three model families share one loop:

* ``hnn``: ``du/dt = S grad H_NN(u)``
* ``transformed``: ``dx/dt = J^{-1} S J^{-T} grad_x H_NN(x)`` with ``J = du_NN/dx``
* ``neural_ode``: ``du/dt = f_NN(u)`` (baseline without structure)
"""

import time
from dataclasses import dataclass, field

import numpy as np

from hnnkam import nn, tape
from hnnkam.dynamics import MAX_CONDITION


class TrainingDivergenceError(FloatingPointError):
    def __init__(self, iteration, checkpoint, message="non-finite loss"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
        self.checkpoint = checkpoint


@dataclass
class LossConfig:
    """``p``-norm gradient loss.

    ``target="raw_gradient"`` compares ``grad H_NN`` with ``S^{-1} du/dt``;
    ``target="symplectic_gradient"`` compares ``S grad H_NN`` with ``du/dt``.
    """

    p: float = 2.0
    target: str = "symplectic_gradient"
    structure: object = None
    reduction: str = "mean"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.target not in ("raw_gradient", "symplectic_gradient"):
            raise ValueError(f"unknown loss target {self.target!r}")
        if self.reduction != "mean":
            raise ValueError("only mean reduction is supported")
        self._inverse = None

    def prediction(self, grad):
        if self.target == "raw_gradient" or self.structure is None:
            return grad
        return tape.matmul(grad, self.structure.matrix.T)

    def target_values(self, dudt):
        dudt = np.asarray(dudt, dtype=float)
        if self.target == "symplectic_gradient" or self.structure is None:
            return dudt
        if self._inverse is None:
            S = self.structure.matrix
            if np.linalg.cond(S) > MAX_CONDITION:
                raise ValueError("raw_gradient targets need an invertible structure matrix")
            self._inverse = np.linalg.inv(S)
        return dudt @ self._inverse.T


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 10000
    batch_size: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainReport:
    loss_history: list
    final_train_loss: float
    max_batch_loss: float
    wall_time: float
    skipped_samples: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "loss_history": list(map(float, self.loss_history)),
            "final_train_loss": float(self.final_train_loss),
            "max_batch_loss": float(self.max_batch_loss),
            "wall_time": float(self.wall_time),
            "skipped_samples": int(self.skipped_samples),
            **self.extra,
        }


def pnorm_loss(pred_grad, target_grad, p):
    """``sum_i |pred_i - target_i|^p`` (per row for 2-D input)."""
    pred_grad, target_grad = np.asarray(pred_grad, dtype=float), np.asarray(target_grad, dtype=float)
    if pred_grad.shape != target_grad.shape:
        raise ValueError("shape mismatch")
    if p < 1:
        raise ValueError("p must be >= 1")
    return np.sum(np.abs(pred_grad - target_grad) ** p, axis=-1)


class Adam:
    """Adam over a flat list of arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# objectives: each returns (loss Var, n_skipped) for a batch of states / targets


def _hnn_objective(hnet, loss):
    def objective(pv, u, dudt):
        t = nn.trace(hnet, pv[0], u)
        grad = nn.trace_input_gradient(hnet, t)
        return nn.batch_loss(loss.prediction(grad) - loss.target_values(dudt), loss.p), 0
    return objective


def _neural_ode_objective(fnet, loss):
    def objective(pv, u, dudt):
        pred = nn.trace(fnet, pv[0], u)["value"]
        return nn.batch_loss(pred - dudt, loss.p), 0
    return objective


def _transformed_objective(hnet, cmap_net, S, loss):
    def objective(pv, x, dxdt):
        n = len(x)
        th = nn.trace(hnet, pv[0], x)
        g = tape.reshape(nn.trace_input_gradient(hnet, th), (n, -1, 1))
        tc = nn.trace(cmap_net, pv[1], x)
        J = nn.trace_jacobian(cmap_net, tc)
        cond = np.linalg.cond(J.value)
        ok = np.isfinite(cond) & (cond <= MAX_CONDITION)
        skipped = int(n - ok.sum())
        if skipped == n:
            return None, skipped
        if skipped:
            # replace singular Jacobians by the identity so the solves stay finite
            eye = np.broadcast_to(np.eye(J.shape[1]), J.shape)
            J = tape.where_rows(ok, J) + np.where(ok[:, None, None], 0.0, eye)
        y = tape.solve(J, g, trans=True)
        w = tape.matmul(S.matrix, y)
        f = tape.reshape(tape.solve(J, w), (n, -1))
        mask = None if not skipped else ok
        return nn.batch_loss(f - dxdt, loss.p, mask), skipped
    return objective


def _run(nets, trainable, objective, dataset, cfg, skip_limit=None):
    """Shared Adam loop; returns (updated nets, report)."""
    start = time.perf_counter()
    nets = [net.copy() for net in nets]
    flat = [a for i, net in enumerate(nets) if trainable[i] for layer in net.layers
            for a in (layer.weight, layer.bias)]
    opt = Adam(flat, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    bs = min(cfg.batch_size, n)
    history = []
    skipped_total = 0
    epoch_skipped = 0
    order, pos = None, n
    last_good = [net.copy() for net in nets]
    for it in range(cfg.iterations):
        if pos >= n:
            order = rng.permutation(n) if bs < n else np.arange(n)
            pos, epoch_skipped = 0, 0
        idx = order[pos:pos + bs]
        pos += bs
        pv = [nn._param_vars(net, trainable[i]) for i, net in enumerate(nets)]
        value, skipped = objective(pv, dataset.u[idx], dataset.dudt[idx])
        epoch_skipped += skipped
        skipped_total += skipped
        if skip_limit is not None and epoch_skipped > skip_limit * n:
            raise TrainingDivergenceError(it, last_good, f"{epoch_skipped} singular-Jacobian samples in one epoch")
        if value is None:
            continue
        lv = float(value.value)
        if not np.isfinite(lv):
            raise TrainingDivergenceError(it, last_good)
        tape.backward(value)
        grads = [nn._grad_or_zero(v) for i, pvi in enumerate(pv) if trainable[i] for w, b in pvi for v in (w, b)]
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergenceError(it, last_good, "non-finite parameter gradient")
        if it % 1000 == 0:
            last_good = [net.copy() for net in nets]
        opt.step(grads)
        history.append(lv)
    final = _evaluate(objective, nets, dataset)
    report = TrainReport(history, final, float(np.max(history)), time.perf_counter() - start, skipped_total)
    return nets, report


def _evaluate(objective, nets, dataset, chunk=2000):
    total, count = 0.0, 0
    for s in range(0, len(dataset), chunk):
        pv = [nn._param_vars(net, False) for net in nets]
        u, d = dataset.u[s:s + chunk], dataset.dudt[s:s + chunk]
        value, skipped = objective(pv, u, d)
        k = len(u) - skipped
        if value is None:
            continue
        total += float(value.value) * k
        count += k
    return total / count if count else float("nan")


def train(net, dataset, loss, cfg):
    """Fit ``net`` so that ``S grad H_NN`` (or ``grad H_NN``) matches the data."""
    if loss.structure is not None and loss.structure.dim != net.input_dim:
        raise ValueError("structure matrix does not match the network input")
    (out,), report = _run([net], [True], _hnn_objective(net, loss), dataset, cfg)
    return out, report


def train_transformed(hnet, cmap, dataset, loss, cfg, train_cmap=True, skip_limit=0.01):
    """Jointly fit ``H_NN`` and the coordinate map ``u_NN`` through the transformed field.

    Samples whose Jacobian condition number exceeds 1e12 are dropped from the
    batch and counted; more than ``skip_limit`` of an epoch aborts training.
    """
    if loss.structure is None:
        raise ValueError("the transformed model needs a structure matrix")
    cnet = cmap.net if hasattr(cmap, "net") else cmap
    objective = _transformed_objective(hnet, cnet, loss.structure, loss)
    (h_out, c_out), report = _run([hnet, cnet], [True, train_cmap], objective, dataset, cfg, skip_limit)
    return h_out, type(cmap)(c_out) if hasattr(cmap, "net") else c_out, report


def train_neural_ode(fnet, dataset, loss, cfg):
    """Fit an unstructured vector field ``f_NN`` to the data (baseline)."""
    (out,), report = _run([fnet], [True], _neural_ode_objective(fnet, loss), dataset, cfg)
    return out, report


def dataset_loss(model, dataset, loss):
    """Mean loss of a trained model over a whole dataset.

    ``model`` is ``("hnn", net)``, ``("transformed", hnet, cmap_net)`` or
    ``("neural_ode", fnet)``.
    """
    kind = model[0]
    if kind == "hnn":
        return _evaluate(_hnn_objective(model[1], loss), [model[1]], dataset)
    if kind == "transformed":
        return _evaluate(_transformed_objective(model[1], model[2], loss.structure, loss),
                         [model[1], model[2]], dataset)
    return _evaluate(_neural_ode_objective(model[1], loss), [model[1]], dataset)


def align_mean(h_nn, h_true, grid):
    """Offset ``c = mean(H_true - H_NN)`` over ``grid`` (add it to ``H_NN``)."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if len(grid) == 0:
        raise ValueError("empty grid")
    return float(np.mean(np.asarray(h_true(grid)) - np.asarray(h_nn(grid))))
