"""Certified error chain for a trained Hamiltonian network.

covering number -> Rademacher complexity -> generalization bound
-> sup-norm Hamiltonian error -> probability that invariant tori persist.

Every function here is a closed-form evaluation; nothing is trained or
sampled.  Quantities that only hold under a hypothesis (``p > 2M`` for the
sup-norm bound, a positive KAM margin) return a marker object instead of a
number when the hypothesis fails.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from hnnkam import nn


@dataclass(frozen=True)
class NotApplicable:
    reason: str

    def to_dict(self):
        return {"status": "not-applicable", "reason": self.reason}


@dataclass(frozen=True)
class NoGuarantee:
    reason: str

    def to_dict(self):
        return {"status": "no-guarantee", "reason": self.reason}


def _check_positive(**kw):
    for name, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite, got {v!r}")


# ---------------------------------------------------------------------------
# the chain, one closed form per function


def covering_constant(profile):
    """``K`` such that ``ln N(eps) <= n ln(K/eps + 1)`` for the loss class."""
    nl = profile.n_activation_layers
    if nl < 1:
        raise ValueError("need at least one hidden layer")
    A = profile.layer_norms
    K = (2.0 * profile.loss_lipschitz * profile.input_radius * A[nl]
         * profile.deriv_lipschitz[nl - 1]
         * math.prod(profile.lipschitz[:nl - 1])
         * math.prod(profile.deriv_bounds[:nl - 1])
         * math.prod(A[:nl]) ** 2)
    return float(K)


def log_covering_bound(K, eps, n):
    """``n * ln(K/eps + 1)`` -- the covering bound in log form."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return float(n * math.log1p(K / eps))


def rademacher_bound(K, c_loss, n):
    """Return ``(alpha, beta, R_n)`` with ``R_n = 6 c (alpha + 2 beta) / n``.

    The entropy integral needs ``sqrt(ln N(c 2^-k)) <= alpha + k beta``.  With
    ``ln N(c 2^-k) <= n ln(K 2^k / c + 1) <= n ln(K/c + 1) + n k ln 2``,
    subadditivity of the square root and ``sqrt(k) <= k`` give
    ``alpha = sqrt(n ln(K/c + 1))`` and ``beta = sqrt(n ln 2)``.
    """
    _check_positive(K=K, c_loss=c_loss)
    if n < 1:
        raise ValueError("n must be >= 1")
    alpha = math.sqrt(n * math.log1p(K / c_loss))
    beta = math.sqrt(n * math.log(2.0))
    return alpha, beta, 6.0 * c_loss * (alpha + 2.0 * beta) / n


def generalization_bound(L_train, R_n, c_loss, delta, n):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return float(L_train + 2.0 * R_n + 3.0 * c_loss * math.sqrt(2.0 * math.log(4.0 / delta) / n))


def linf_hamiltonian_bound(gen_bound, C_sobolev, inf_density, p, M):
    """Sup-norm bound on ``H - H_NN`` after mean alignment, valid only when ``p > 2M``."""
    if gen_bound < 0:
        raise ValueError("gen_bound must be nonnegative")
    if not p > 2 * M:
        return NotApplicable(f"needs p > 2M for the Sobolev embedding; got p={p}, M={M}")
    _check_positive(C_sobolev=C_sobolev, inf_density=inf_density)
    return float((C_sobolev ** p * gen_bound / inf_density) ** (1.0 / p))


def kam_probability(eps0, c1, c2, c3, L_train, R_n, n):
    """Failure probability ``delta`` for persistence of invariant tori.

    With probability at least ``1 - delta`` a set of invariant tori exists
    for the trained model.  Returns :class:`NoGuarantee` when the margin
    ``eps0 - c1 L - c2 R`` is not positive.
    """
    _check_positive(eps0=eps0, c1=c1, c2=c2, c3=c3)
    margin = eps0 - c1 * L_train - c2 * R_n
    if margin <= 0:
        return NoGuarantee(f"eps0={eps0:g} does not exceed c1*L + c2*R = {eps0 - margin:g}")
    return float(math.exp(-n * (margin / c3) ** 2))


# ---------------------------------------------------------------------------
# inputs / report


@dataclass
class KamConstants:
    eps0: float = 1.0
    c1: float = None
    c2: float = None
    c3: float = None


@dataclass
class BoundInputs:
    """Everything the chain needs.  ``None`` entries get logged defaults."""

    profile: nn.NormProfile
    L_train: float
    p: float = 2.0
    M: int = 1
    delta: float = 0.05
    c_loss: float = None
    C_sobolev: float = 1.0
    inf_density: float = 1.0
    kam: KamConstants = field(default_factory=KamConstants)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.L_train < 0 or not np.isfinite(self.L_train):
            raise ValueError("L_train must be finite and nonnegative")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        _check_positive(p=self.p, C_sobolev=self.C_sobolev, inf_density=self.inf_density,
                        eps0=self.kam.eps0)
        if self.c_loss is not None:
            _check_positive(c_loss=self.c_loss)

    @property
    def n(self):
        return self.profile.n

    def to_dict(self):
        return {
            "profile": self.profile.to_dict(),
            "L_train": self.L_train, "p": self.p, "M": self.M, "delta": self.delta,
            "c_loss": self.c_loss, "C_sobolev": self.C_sobolev, "inf_density": self.inf_density,
            "kam": dict(self.kam.__dict__),
        }


@dataclass
class BoundReport:
    K: float
    n: int
    alpha: float
    beta: float
    rademacher: float
    generalization: float
    linf_hamiltonian: object
    kam_delta: object
    c_loss: float
    kam_constants: dict
    assumptions_log: list

    def log_covering(self, eps):
        return log_covering_bound(self.K, eps, self.n)

    def to_dict(self):
        def enc(v):
            return v.to_dict() if hasattr(v, "to_dict") else v
        return {
            "K": self.K,
            "covering_at": {"form": "n * ln(K / eps + 1)", "K": self.K, "n": self.n},
            "alpha": self.alpha, "beta": self.beta,
            "rademacher": self.rademacher,
            "generalization": self.generalization,
            "linf_hamiltonian": enc(self.linf_hamiltonian),
            "kam_delta": enc(self.kam_delta),
            "c_loss": self.c_loss,
            "kam_constants": self.kam_constants,
            "assumptions_log": list(self.assumptions_log),
        }

    def table(self):
        def fmt(v):
            return f"{v:.6g}" if isinstance(v, float) else v.to_dict()["status"]
        rows = [("covering constant K", self.K), ("alpha", self.alpha), ("beta", self.beta),
                ("Rademacher R_n", self.rademacher), ("generalization bound", self.generalization),
                ("sup |H - H_NN|", self.linf_hamiltonian), ("KAM failure prob.", self.kam_delta)]
        lines = [f"{name:<24}{fmt(v)}" for name, v in rows]
        lines += [f"  * {a}" for a in self.assumptions_log]
        return "\n".join(lines)


def bound_report(inputs):
    """Evaluate the whole chain for ``inputs``."""
    prof, n, log = inputs.profile, inputs.n, []
    K = covering_constant(prof)
    if not np.isfinite(K):
        raise ValueError("covering constant overflowed")

    c_loss = inputs.c_loss
    if c_loss is None:
        G = prof.gradient_norm_bound()
        c_loss = (2.0 * G) ** inputs.p
        log.append(f"c_loss defaulted to (2 * gradient bound)^p = (2 * {G:.6g})^{inputs.p:g}; "
                   "assumes targets are bounded by the same gradient bound")
    if inputs.C_sobolev == 1.0 or inputs.inf_density == 1.0:
        log.append("WARNING: Sobolev/Poincare constant and density infimum are user-supplied "
                   f"placeholders (C={inputs.C_sobolev:g}, inf f_P={inputs.inf_density:g}); "
                   "the sup-norm bound is only as good as these values")
    log.append("sup-norm bound holds on the bounding box of the sampled region")

    alpha, beta, R = rademacher_bound(K, c_loss, n)
    gen = generalization_bound(inputs.L_train, R, c_loss, inputs.delta, n)
    linf = linf_hamiltonian_bound(gen, inputs.C_sobolev, inputs.inf_density, inputs.p, inputs.M)
    if isinstance(linf, NotApplicable):
        log.append(f"sup-norm bound not applicable: {linf.reason}")

    # default KAM constants: the sup-norm chain gives ||H - H_NN||^p <= kappa * gen
    # with kappa = C^p / inf f_P; solving kappa*gen < eps0 for delta gives
    # c1 = kappa, c2 = 2 kappa, c3 = 3 sqrt(2) c kappa (prefactor 4 dropped)
    kappa = inputs.C_sobolev ** inputs.p / inputs.inf_density
    kam = inputs.kam
    consts = {"eps0": kam.eps0,
              "c1": kam.c1 if kam.c1 is not None else kappa,
              "c2": kam.c2 if kam.c2 is not None else 2.0 * kappa,
              "c3": kam.c3 if kam.c3 is not None else 3.0 * math.sqrt(2.0) * c_loss * kappa}
    defaulted = [k for k in ("c1", "c2", "c3") if getattr(kam, k) is None]
    if defaulted:
        log.append(f"KAM constants {', '.join(defaulted)} defaulted from the sup-norm chain: "
                   "c1 = C^p/inf f_P, c2 = 2 c1, c3 = 3 sqrt(2) c_loss c1")
    kd = kam_probability(consts["eps0"], consts["c1"], consts["c2"], consts["c3"],
                         inputs.L_train, R, n)
    if isinstance(kd, NoGuarantee):
        log.append(f"no KAM guarantee: {kd.reason}")
    else:
        log.append(f"with probability >= {1.0 - kd:.6g} a set of invariant tori exists for the trained model")
    return BoundReport(K, n, alpha, beta, R, gen, linf, kd, float(c_loss), consts, log)


def inputs_for(net, dataset, L_train, p=2.0, **kw):
    """Build :class:`BoundInputs` from a trained net and its training set."""
    G = nn.norm_profile(net, dataset.input_radius, 1.0, len(dataset)).gradient_norm_bound()
    prof = nn.norm_profile(net, dataset.input_radius, nn.loss_lipschitz(p, G, dataset.dim), len(dataset))
    return BoundInputs(profile=prof, L_train=float(L_train), p=p, M=max(1, dataset.dim // 2), **kw)
