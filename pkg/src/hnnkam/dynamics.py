"""Structure matrices, learned vector fields and the benchmark systems."""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from hnnkam import nn
from hnnkam.nn import DimensionError

MAX_CONDITION = 1e12


class SingularTransformError(np.linalg.LinAlgError):
    def __init__(self, condition):
        super().__init__(f"coordinate-map Jacobian is ill-conditioned (cond = {condition:.3e})")
        self.condition = condition


# ---------------------------------------------------------------------------
# structure matrices


@dataclass
class StructureMatrix:
    """``kind`` is one of canonical_symplectic, central_difference,
    second_difference or custom. ``character`` is checked numerically."""

    kind: str
    matrix: np.ndarray
    character: str = "general"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("structure matrix must be square")
        if self.character == "skew":
            if np.abs(m + m.T).max() >= 1e-12:
                raise ValueError("matrix declared skew is not skew-symmetric")
        elif self.character == "negative_semidefinite":
            if np.abs(m - m.T).max() >= 1e-12 * max(1.0, np.abs(m).max()):
                raise ValueError("matrix declared negative semidefinite is not symmetric")
            if np.linalg.eigvalsh(m).max() > 1e-10:
                raise ValueError("matrix declared negative semidefinite has a positive eigenvalue")
        elif self.character != "general":
            raise ValueError(f"unknown character {self.character!r}")

    @property
    def dim(self):
        return self.matrix.shape[0]

    def apply(self, v):
        """``S v`` for a vector or a batch of row vectors."""
        return np.asarray(v) @ self.matrix.T

    def to_dict(self):
        d = {"kind": self.kind, "character": self.character, "params": dict(self.params)}
        if self.kind == "custom":
            d["matrix"] = self.matrix.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        p = d.get("params", {})
        if d["kind"] == "canonical_symplectic":
            return canonical_symplectic(p["M"])
        if d["kind"] == "central_difference":
            return central_difference(p["n"], p["dx"])
        if d["kind"] == "second_difference":
            return second_difference(p["n"], p["dx"])
        return cls("custom", np.array(d["matrix"]), d.get("character", "general"), p)


def canonical_symplectic(M):
    z, i = np.zeros((M, M)), np.eye(M)
    return StructureMatrix("canonical_symplectic", np.block([[z, i], [-i, z]]), "skew", {"M": M})


def forward_difference(n, dx):
    return (np.roll(np.eye(n), 1, axis=1) - np.eye(n)) / dx


def backward_difference(n, dx):
    return (np.eye(n) - np.roll(np.eye(n), -1, axis=1)) / dx


def _check_grid(n, dx):
    if n < 4:
        raise ValueError("grid needs at least 4 points")
    if dx <= 0:
        raise ValueError("dx must be positive")


def central_difference(n, dx):
    """Periodic ``D = (D_f + D_b) / 2``."""
    _check_grid(n, dx)
    d = 0.5 * (forward_difference(n, dx) + backward_difference(n, dx))
    return StructureMatrix("central_difference", d, "skew", {"n": n, "dx": dx})


def second_difference(n, dx):
    """Periodic ``D_2 = D_f D_b``."""
    _check_grid(n, dx)
    d2 = forward_difference(n, dx) @ backward_difference(n, dx)
    return StructureMatrix("second_difference", d2, "negative_semidefinite", {"n": n, "dx": dx})


def custom(matrix, character="general"):
    return StructureMatrix("custom", matrix, character)


# ---------------------------------------------------------------------------
# learned fields


def hnn_vector_field(net, S, u):
    """``S grad H_NN(u)``."""
    if S.dim != net.input_dim:
        raise DimensionError(f"structure matrix is {S.dim}x{S.dim} but the network takes {net.input_dim} inputs")
    return S.apply(nn.input_gradient(net, u))


@dataclass
class CoordinateMap:
    """Learned change of variables ``u = u_NN(x)`` with its exact Jacobian."""

    net: nn.Network

    def __post_init__(self):
        if self.net.readout != "vector":
            raise ValueError("coordinate map needs a vector readout")
        if self.net.output_shape[0] * self.net.output_shape[1] != self.net.input_dim:
            raise DimensionError("coordinate map must be square (R^N -> R^N)")

    @property
    def dim(self):
        return self.net.input_dim

    def __call__(self, x):
        return nn.forward(self.net, x)

    def jacobian(self, x):
        return nn.jacobian(self.net, x)


def _transformed_single(g, J, S):
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularTransformError(cond)
    lu = scipy.linalg.lu_factor(J)
    y = scipy.linalg.lu_solve(lu, g, trans=1)
    return scipy.linalg.lu_solve(lu, S.matrix @ y)


def transformed_vector_field(hnet, cmap, S, x):
    """``J^{-1} S J^{-T} grad_x H_NN(x)`` with ``J = du_NN/dx``, via one LU factorization."""
    x = np.asarray(x, dtype=float)
    g = nn.input_gradient(hnet, x)
    J = cmap.jacobian(x)
    if x.ndim == 1:
        return _transformed_single(g, J, S)
    return np.stack([_transformed_single(gi, Ji, S) for gi, Ji in zip(g, J)])


def energy_rate(grad_h, field_fn, u):
    """``<grad H(u), field(u)>``; ``grad_h`` and ``field_fn`` map states to vectors."""
    return float(np.dot(grad_h(u), field_fn(u)))


# ---------------------------------------------------------------------------
# reference systems


@dataclass
class ReferenceSystem:
    name: str
    params: dict
    dim: int
    vector_field: Callable
    hamiltonian: Callable
    structure: StructureMatrix = None

    def field(self, u):
        return self.vector_field(u)


DOUBLE_PENDULUM_DEFAULTS = {"l1": 1.0, "l2": 1.0, "m1": 1.0, "m2": 2.0, "g": 9.8}
MASS_SPRING_DEFAULTS = {"k1": 1.0, "k2": 1.0, "l1": 1.0, "l2": 1.0, "m1": 1.0, "m2": 2.0}
KDV_DEFAULTS = {"alpha": -1.0, "beta": -0.022 ** 2, "dx": 0.1, "n": 20}
HARMONIC_DEFAULTS = {"k": 1.0, "m": 1.0}


def _positive(params, keys):
    for k in keys:
        if params[k] <= 0:
            raise ValueError(f"parameter {k} must be positive")


def double_pendulum_field(params, state):
    """Euler-Lagrange equations of the double pendulum, angles from the upward vertical.

    ``state = [theta1, theta2, phi1, phi2]`` with ``phi = dtheta/dt``. The
    potential is ``g (m1 + m2) l1 cos(theta1) + g m2 l2 cos(theta2)`` so the
    hanging rest state is ``theta1 = theta2 = pi``.
    """
    p = params
    s = np.asarray(state, dtype=float)
    t1, t2, w1, w2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    m = p["m1"] + p["m2"]
    d = t1 - t2
    c, sn = np.cos(d), np.sin(d)
    a11 = m * p["l1"] ** 2
    a12 = p["m2"] * p["l1"] * p["l2"] * c
    a22 = p["m2"] * p["l2"] ** 2
    r1 = -p["m2"] * p["l1"] * p["l2"] * w2 ** 2 * sn + p["g"] * m * p["l1"] * np.sin(t1)
    r2 = p["m2"] * p["l1"] * p["l2"] * w1 ** 2 * sn + p["g"] * p["m2"] * p["l2"] * np.sin(t2)
    det = a11 * a22 - a12 * a12
    dw1 = (a22 * r1 - a12 * r2) / det
    dw2 = (a11 * r2 - a12 * r1) / det
    return np.stack([w1, w2, dw1, dw2], axis=-1)


def double_pendulum_energy(params, state):
    p = params
    s = np.asarray(state, dtype=float)
    t1, t2, w1, w2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    m = p["m1"] + p["m2"]
    kinetic = (0.5 * m * p["l1"] ** 2 * w1 ** 2 + 0.5 * p["m2"] * p["l2"] ** 2 * w2 ** 2
               + p["m2"] * p["l1"] * p["l2"] * w1 * w2 * np.cos(t1 - t2))
    return kinetic + p["g"] * m * p["l1"] * np.cos(t1) + p["g"] * p["m2"] * p["l2"] * np.cos(t2)


def mass_spring_field(params, state):
    """Two masses on two springs, ``state = [q1, q2, v1, v2]``."""
    p = params
    s = np.asarray(state, dtype=float)
    q1, q2, v1, v2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    e1 = q1 - p["l1"]
    e2 = q2 - q1 - p["l2"]
    a1 = -p["k1"] / p["m1"] * e1 + p["k2"] / p["m1"] * e2
    a2 = -p["k2"] / p["m2"] * e2
    return np.stack([v1, v2, a1, a2], axis=-1)


def mass_spring_energy(params, state):
    p = params
    s = np.asarray(state, dtype=float)
    q1, q2, v1, v2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    p1, p2 = p["m1"] * v1, p["m2"] * v2
    return (p1 ** 2 / (2 * p["m1"]) + p2 ** 2 / (2 * p["m2"])
            + p["k1"] * (q1 - p["l1"]) ** 2 / 2 + p["k2"] * (q2 - q1 - p["l2"]) ** 2 / 2)


def kdv_operators(n, dx):
    """``(D, D_2, D_f, D_b)`` on a periodic grid of ``n`` points."""
    return (central_difference(n, dx).matrix, second_difference(n, dx).matrix,
            forward_difference(n, dx), backward_difference(n, dx))


def kdv_variational_derivative(alpha, beta, dx, u):
    """``(1/dx) dH/du = alpha u^2 / 2 + beta D_2 u``."""
    u = np.asarray(u, dtype=float)
    _, d2, _, _ = kdv_operators(u.shape[-1], dx)
    return 0.5 * alpha * u ** 2 + beta * u @ d2.T


def kdv_field(alpha, beta, dx, u):
    """``D (alpha u^2 / 2 + beta D_2 u)`` on a periodic grid."""
    u = np.asarray(u, dtype=float)
    _check_grid(u.shape[-1], dx)
    d, _, _, _ = kdv_operators(u.shape[-1], dx)
    return kdv_variational_derivative(alpha, beta, dx, u) @ d.T


def kdv_energy(alpha, beta, dx, u):
    """``sum_x [alpha u^3 / 6 - beta ((D_f u)^2 + (D_b u)^2) / 4] dx``."""
    u = np.asarray(u, dtype=float)
    _check_grid(u.shape[-1], dx)
    _, _, df, db = kdv_operators(u.shape[-1], dx)
    fu, bu = u @ df.T, u @ db.T
    return np.sum(alpha * u ** 3 / 6 - beta * (fu ** 2 + bu ** 2) / 4, axis=-1) * dx


def kdv_structure(n, dx):
    """Structure matrix ``D / dx`` so that ``dudt = S grad H`` with the summed-energy gradient."""
    return StructureMatrix("custom", central_difference(n, dx).matrix / dx, "skew", {"n": n, "dx": dx})


def kdv_grid(n, dx):
    return np.arange(n) * dx


def kdv_initial_state(n, dx):
    """Zabusky-Kruskal profile ``cos(pi x)``."""
    return np.cos(np.pi * kdv_grid(n, dx))


def reference_system(name, **overrides):
    """Build a named benchmark system; unknown parameter names are rejected."""
    defaults = {
        "double_pendulum": DOUBLE_PENDULUM_DEFAULTS,
        "mass_spring": MASS_SPRING_DEFAULTS,
        "kdv_semidiscrete": KDV_DEFAULTS,
        "harmonic_oscillator": HARMONIC_DEFAULTS,
    }
    if name not in defaults:
        raise ValueError(f"unknown system {name!r}")
    unknown = set(overrides) - set(defaults[name])
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    p = {**defaults[name], **{k: float(v) for k, v in overrides.items()}}

    if name == "double_pendulum":
        _positive(p, ("l1", "l2", "m1", "m2", "g"))
        return ReferenceSystem(name, p, 4, lambda u: double_pendulum_field(p, u),
                               lambda u: double_pendulum_energy(p, u))
    if name == "mass_spring":
        _positive(p, ("k1", "k2", "m1", "m2"))
        return ReferenceSystem(name, p, 4, lambda u: mass_spring_field(p, u),
                               lambda u: mass_spring_energy(p, u))
    if name == "harmonic_oscillator":
        _positive(p, ("k", "m"))
        S = canonical_symplectic(1)

        def grad(u):
            u = np.asarray(u, dtype=float)
            return np.stack([p["k"] * u[..., 0], u[..., 1] / p["m"]], axis=-1)

        return ReferenceSystem(name, p, 2, lambda u: S.apply(grad(u)),
                               lambda u: 0.5 * p["k"] * np.asarray(u)[..., 0] ** 2
                               + 0.5 * np.asarray(u)[..., 1] ** 2 / p["m"], S)
    n = int(p["n"])
    p["n"] = n
    _check_grid(n, p["dx"])
    return ReferenceSystem(name, p, n,
                           lambda u: kdv_field(p["alpha"], p["beta"], p["dx"], u),
                           lambda u: kdv_energy(p["alpha"], p["beta"], p["dx"], u),
                           kdv_structure(n, p["dx"]))


def nondegeneracy_check(h0, actions, step=1e-4):
    """``det d^2 H0 / dJ^2`` by central differences at the action vector ``actions``.

    Only meaningful for analytic reference Hamiltonians expressed in
    user-supplied action coordinates.
    """
    J = np.asarray(actions, dtype=float)
    m = len(J)
    hess = np.empty((m, m))
    e = np.eye(m) * step
    for i in range(m):
        for j in range(m):
            hess[i, j] = (h0(J + e[i] + e[j]) - h0(J + e[i] - e[j])
                          - h0(J - e[i] + e[j]) + h0(J - e[i] - e[j])) / (4 * step * step)
    return float(np.linalg.det(hess))
