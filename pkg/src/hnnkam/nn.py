"""Scalar- and vector-output layered networks with closed-form input gradients.

A network is a stack of linear layers (dense or circular 1-D convolution),
each followed by an activation. Hidden states are kept channels-last with
shape ``(batch, length, channels)``: a dense network sees its input as
``(batch, 1, N)`` and a convolutional network as ``(batch, N, 1)``.

The input gradient is written out as the explicit product

    grad H(u) = A_1^T D_1 A_2^T D_2 ... A_L^T r

with ``D_j = diag(sigma_j'(z_j))`` and ``r`` the readout vector, and every
factor is recorded on :mod:`hnnkam.tape` so that losses of the gradient can be
differentiated with respect to the weights.
"""

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from hnnkam import tape

SCHEMA_VERSION = 1

# max |tanh''(z)| = 4 sqrt(3) / 9, attained where tanh(z) = 1/sqrt(3)
TANH_SECOND_DERIV_MAX = 4.0 * np.sqrt(3.0) / 9.0

READOUTS = ("sum_of_outputs", "final_scalar", "vector")


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Activation:
    kind: str
    lipschitz: float
    deriv_bound: float
    deriv_lipschitz: float


ACTIVATIONS = {
    "tanh": Activation("tanh", 1.0, 1.0, TANH_SECOND_DERIV_MAX),
    "identity": Activation("identity", 1.0, 1.0, 0.0),
}


def activation(kind):
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


@dataclass
class LinearLayer:
    """Dense ``(out, in)`` weight or circular conv kernel ``(out_ch, in_ch, k)``."""

    kind: str
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.kind == "dense":
            if self.weight.ndim != 2:
                raise DimensionError("dense weight must be 2-D")
        elif self.kind == "circular_conv_1d":
            if self.weight.ndim != 3:
                raise DimensionError("conv kernel must be (out_ch, in_ch, k)")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("bias length must equal the output dimension")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    @property
    def shifts(self):
        if self.kind == "dense":
            return (0,)
        k = self.weight.shape[2]
        return tuple(range(-(k // 2), k - k // 2))

    def matrix(self, length=1):
        """Explicit matrix acting on the flattened ``(length, in_dim)`` state."""
        if self.kind == "dense":
            return self.weight.copy()
        out_ch, in_ch, _ = self.weight.shape
        m = np.zeros((length * out_ch, length * in_ch))
        for l in range(length):
            for j, s in enumerate(self.shifts):
                src = (l + s) % length
                m[l * out_ch:(l + 1) * out_ch, src * in_ch:(src + 1) * in_ch] += self.weight[:, :, j]
        return m


@dataclass
class Network:
    layers: list
    activations: list
    input_dim: int
    readout: str = "final_scalar"
    seed: int = None

    def __post_init__(self):
        if len(self.layers) != len(self.activations) or not self.layers:
            raise DimensionError("need one activation per linear layer")
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout {self.readout!r}")
        self.activations = [a if isinstance(a, Activation) else activation(a)
                            for a in self.activations]
        length, width = self._input_layout()
        for layer in self.layers:
            if layer.kind == "dense":
                if layer.in_dim != length * width:
                    raise DimensionError(f"dense layer expects {layer.in_dim} inputs, got {length * width}")
                length, width = 1, layer.out_dim
            else:
                if length == 1 and self.input_dim != 1:
                    raise DimensionError("convolution after a dense layer is not supported")
                if layer.in_dim != width:
                    raise DimensionError(f"conv layer expects {layer.in_dim} channels, got {width}")
                width = layer.out_dim
        if self.readout == "final_scalar" and length * width != 1:
            raise DimensionError("final_scalar readout needs a single output")
        self.output_shape = (length, width)

    def _input_layout(self):
        if self.layers[0].kind == "circular_conv_1d":
            return self.input_dim, 1
        return 1, self.input_dim

    @property
    def n_activation_layers(self):
        return len(self.layers) - 1

    def copy(self):
        return copy.deepcopy(self)

    def params(self):
        return [(layer.weight, layer.bias) for layer in self.layers]

    def with_params(self, params):
        net = self.copy()
        for layer, (w, b) in zip(net.layers, params):
            layer.weight = np.array(w, dtype=float)
            layer.bias = np.array(b, dtype=float)
        return net


# ---------------------------------------------------------------------------
# closed-form trace


def _as_batch(net, u):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u2 = u[None, :] if single else u
    if u2.ndim != 2 or u2.shape[1] != net.input_dim:
        raise DimensionError(f"expected state of dimension {net.input_dim}, got shape {u.shape}")
    return u2, single


def _weight_matrix(layer, w):
    if layer.kind == "dense":
        return w
    out_ch, in_ch, k = layer.weight.shape
    # kernel (out, in, k) -> (out, k*in) so that column j*in + c matches the patch layout
    return tape.reshape(tape.transpose(w), (out_ch, k * in_ch))


def _apply(layer, mat, b, h):
    if layer.kind == "dense":
        n, length, width = h.shape
        if length != 1:
            h = tape.reshape(h, (n, 1, length * width))
        return tape.matmul(h, tape.transpose(mat)) + b
    patches = tape.circular_patches(h, layer.shifts)
    return tape.matmul(patches, tape.transpose(mat)) + b


def _apply_transpose(layer, mat, g, in_shape):
    if layer.kind == "dense":
        return tape.reshape(tape.matmul(g, mat), in_shape)
    return tape.circular_unpatch(tape.matmul(g, mat), layer.shifts, in_shape[2])


def _param_vars(net, requires_grad):
    make = tape.param if requires_grad else tape.Var
    return [(make(layer.weight), make(layer.bias)) for layer in net.layers]


def trace(net, pvars, u):
    """Record the forward pass of a batch ``u`` (B, N) on the tape.

    Returns a dict with the per-sample output ``value`` and the pieces needed
    by :func:`trace_input_gradient` and :func:`trace_jacobian`.
    """
    n = u.shape[0]
    length, width = net._input_layout()
    h = tape.Var(u.reshape(n, length, width))
    shapes, derivs, mats = [], [], []
    for layer, act, (w, b) in zip(net.layers, net.activations, pvars):
        shapes.append(h.shape)
        mat = _weight_matrix(layer, w)
        mats.append(mat)
        z = _apply(layer, mat, b, h)
        if act.kind == "tanh":
            h = tape.tanh(z)
            derivs.append(1.0 - h * h)
        else:
            h = z
            derivs.append(None)
    if net.readout == "vector":
        value = tape.reshape(h, (n, -1))
    elif net.readout == "sum_of_outputs":
        value = tape.total(h, axis=(1, 2))
    else:
        value = tape.reshape(h, (n,))
    return {"value": value, "out": h, "shapes": shapes, "derivs": derivs, "mats": mats, "n": n}


def trace_input_gradient(net, t):
    """Closed-form ``A_1^T D_1 ... A_L^T r`` on the tape, shape (B, N)."""
    g = tape.Var(np.ones(t["out"].shape))
    for j in reversed(range(len(net.layers))):
        if t["derivs"][j] is not None:
            g = g * t["derivs"][j]
        g = _apply_transpose(net.layers[j], t["mats"][j], g, t["shapes"][j])
    return tape.reshape(g, (t["n"], net.input_dim))


def trace_jacobian(net, t):
    """Closed-form Jacobian ``A_L D_{L-1} ... D_1 A_1`` of a dense vector network, (B, out, N)."""
    if any(layer.kind != "dense" for layer in net.layers):
        raise ValueError("Jacobians are only provided for dense networks")
    n = t["n"]
    m = None
    for j, layer in enumerate(net.layers):
        w = t["mats"][j]
        m = tape.reshape(w, (1,) + w.shape) if m is None else tape.matmul(w, m)
        if t["derivs"][j] is not None:
            m = tape.reshape(t["derivs"][j], (n, layer.out_dim, 1)) * m
    if m.shape[0] != n:
        m = tape.Var(np.broadcast_to(m.value, (n,) + m.shape[1:]).copy())
    return m


# ---------------------------------------------------------------------------
# public evaluation API


def forward(net, u):
    """Evaluate the network; a single state gives a float (or vector for vector readout)."""
    u2, single = _as_batch(net, u)
    value = trace(net, _param_vars(net, False), u2)["value"].value
    return value[0] if single else value


def input_gradient(net, u):
    """Exact ``dH/du`` of a scalar network."""
    if net.readout == "vector":
        raise ValueError("input_gradient needs a scalar readout; use jacobian")
    u2, single = _as_batch(net, u)
    t = trace(net, _param_vars(net, False), u2)
    g = trace_input_gradient(net, t).value
    return g[0] if single else g


def jacobian(net, u):
    """Exact Jacobian of a dense vector-readout network."""
    u2, single = _as_batch(net, u)
    t = trace(net, _param_vars(net, False), u2)
    j = trace_jacobian(net, t).value
    return j[0] if single else j


def batch_loss(residual, p, mask=None):
    """Batch mean of ``sum_i |r_i|^p`` on the tape; masked rows are excluded."""
    per_sample = tape.total(tape.abs_pow(residual, p), axis=1)
    if mask is None:
        return tape.mean(per_sample)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("every sample in the batch was masked out")
    return tape.total(tape.where_rows(mask, per_sample)) * (1.0 / count)


def loss_param_gradient(net, batch, loss):
    """Batch-mean gradient-matching loss and its gradient for every weight and bias.

    ``batch`` supplies ``u`` and ``dudt`` arrays; ``loss`` supplies ``p`` and the
    target mode (see :class:`hnnkam.training.LossConfig`).
    """
    u2, _ = _as_batch(net, batch.u)
    if len(u2) == 0:
        raise ValueError("empty batch")
    pvars = _param_vars(net, True)
    t = trace(net, pvars, u2)
    grad = trace_input_gradient(net, t)
    pred, target = loss.prediction(grad), loss.target_values(batch.dudt)
    value = batch_loss(pred - target, loss.p)
    if not np.isfinite(value.value):
        raise FloatingPointError("non-finite loss")
    tape.backward(value)
    grads = [(_grad_or_zero(w), _grad_or_zero(b)) for w, b in pvars]
    return float(value.value), grads


def _grad_or_zero(v):
    return np.zeros_like(v.value) if v.grad is None else v.grad


# ---------------------------------------------------------------------------
# norms


def layer_matvec(layer, x, length=1, transpose=False):
    """Apply a layer's linear map (or its adjoint) to a flattened vector."""
    if layer.kind == "dense":
        return layer.weight.T @ x if transpose else layer.weight @ x
    out_ch, in_ch, k = layer.weight.shape
    mat = layer.weight.transpose(0, 2, 1).reshape(out_ch, k * in_ch)
    if transpose:
        y = x.reshape(1, length, out_ch) @ mat
        return tape._scatter(y, layer.shifts, in_ch).ravel()
    patches = tape._gather(x.reshape(1, length, in_ch), layer.shifts)
    return (patches @ mat.T).ravel()


def spectral_norm(matvec, rmatvec, dim, iters=200, tol=1e-10, seed=0):
    """Largest singular value by power iteration on ``A^T A``."""
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = rmatvec(matvec(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - sigma) <= tol * new:
            sigma = new
            break
        sigma = new
    return float(np.linalg.norm(matvec(v)))


def layer_norms(net):
    """Operator 2-norms of every ``A_j^T``; the last entry includes the readout sum."""
    norms = []
    length, width = net._input_layout()
    for i, layer in enumerate(net.layers):
        if layer.kind == "dense":
            length, width = 1, layer.in_dim
        dim_in = length * width
        out_len = 1 if layer.kind == "dense" else length
        last = i == len(net.layers) - 1 and net.readout != "vector"
        if last:
            # readout r^T A_L is a single row: its norm is exact
            row = layer_matvec(layer, np.ones(out_len * layer.out_dim), out_len, transpose=True)
            norms.append(float(np.linalg.norm(row)))
        else:
            norms.append(spectral_norm(
                lambda x, l=layer, n=out_len: layer_matvec(l, x, n),
                lambda y, l=layer, n=out_len: layer_matvec(l, y, n, transpose=True),
                dim_in,
            ))
        length, width = out_len, layer.out_dim
    return norms


@dataclass
class NormProfile:
    layer_norms: list
    lipschitz: list
    deriv_bounds: list
    deriv_lipschitz: list
    input_radius: float
    loss_lipschitz: float
    n: int

    def __post_init__(self):
        vals = list(self.layer_norms) + [self.input_radius, self.loss_lipschitz]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError("layer norms, input radius and loss Lipschitz constant must be positive and finite")
        acts = list(self.lipschitz) + list(self.deriv_bounds) + list(self.deriv_lipschitz)
        if not all(np.isfinite(v) and v >= 0 for v in acts):
            raise ValueError("activation constants must be finite and nonnegative")
        if not (len(self.lipschitz) == len(self.deriv_bounds) == len(self.deriv_lipschitz)
                == len(self.layer_norms) - 1):
            raise ValueError("need one set of activation constants per hidden layer")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def n_activation_layers(self):
        return len(self.layer_norms) - 1

    def gradient_norm_bound(self):
        """``prod c_Aj * prod c_sigma_j``: bound on ``|grad H_NN|`` everywhere."""
        return float(np.prod(self.layer_norms) * np.prod(self.deriv_bounds))

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "layer_norms", "lipschitz", "deriv_bounds", "deriv_lipschitz",
            "input_radius", "loss_lipschitz", "n")}


def norm_profile(net, input_radius, loss_lipschitz, n):
    if input_radius <= 0:
        raise ValueError("input_radius must be positive")
    if net.activations[-1].kind != "identity":
        raise ValueError("the bound chain assumes a linear output layer")
    hidden = net.activations[:-1]
    return NormProfile(
        layer_norms=layer_norms(net),
        lipschitz=[a.lipschitz for a in hidden],
        deriv_bounds=[a.deriv_bound for a in hidden],
        deriv_lipschitz=[a.deriv_lipschitz for a in hidden],
        input_radius=float(input_radius),
        loss_lipschitz=float(loss_lipschitz),
        n=int(n),
    )


def loss_lipschitz(p, gradient_bound, dim):
    """Lipschitz constant of ``h -> |y - h|_p^p`` when ``|y - h|_2 <= 2 * gradient_bound``."""
    r = 2.0 * gradient_bound
    if p >= 2:
        return p * r ** (p - 1)
    return p * np.sqrt(dim) * r ** (p - 1)


# ---------------------------------------------------------------------------
# construction


@dataclass
class Architecture:
    """``kind`` is ``dense`` or ``conv``; conv nets need ``kernel_sizes``."""

    input_dim: int
    hidden: list = field(default_factory=lambda: [50])
    output_dim: int = 1
    kind: str = "dense"
    activation: str = "tanh"
    readout: str = "final_scalar"
    kernel_sizes: list = None
    init: str = None

    def to_dict(self):
        return dict(self.__dict__)


def _orthogonal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_network(arch, seed):
    """Random network for ``arch``; identical seeds give bit-identical weights.

    Dense layers default to uniform(+-sqrt(6 / (fan_in + fan_out))); conv
    kernels default to random (semi-)orthogonal matrices of shape
    ``(out_ch, in_ch * k)``. Biases start at zero.
    """
    rng = np.random.default_rng(seed)
    widths = [arch.input_dim if arch.kind == "dense" else 1] + list(arch.hidden) + [arch.output_dim]
    init = arch.init or ("uniform" if arch.kind == "dense" else "orthogonal")
    layers, acts = [], []
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        if arch.kind == "dense":
            if init == "orthogonal":
                w = _orthogonal(rng, fan_out, fan_in)
            else:
                a = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-a, a, size=(fan_out, fan_in))
            layers.append(LinearLayer("dense", w, np.zeros(fan_out)))
        else:
            k = arch.kernel_sizes[i]
            if init == "orthogonal":
                w = _orthogonal(rng, fan_out, fan_in * k).reshape(fan_out, fan_in, k)
            else:
                a = np.sqrt(6.0 / ((fan_in + fan_out) * k))
                w = rng.uniform(-a, a, size=(fan_out, fan_in, k))
            layers.append(LinearLayer("circular_conv_1d", w, np.zeros(fan_out)))
        acts.append(arch.activation if i < len(widths) - 2 else "identity")
    return Network(layers, acts, arch.input_dim, arch.readout, seed)


def identity_network(dim):
    """Exact identity map as a vector network (one dense identity layer)."""
    return Network([LinearLayer("dense", np.eye(dim), np.zeros(dim))], ["identity"], dim, "vector")


def with_output_offset(net, c):
    """Copy of ``net`` whose scalar output is shifted by ``c``."""
    out = net.copy()
    last = out.layers[-1]
    length = out.output_shape[0] if net.readout == "sum_of_outputs" else 1
    last.bias = last.bias + c / (length * last.out_dim)
    return out


# ---------------------------------------------------------------------------
# persistence


def to_dict(net):
    return {
        "schema_version": SCHEMA_VERSION,
        "input_dim": net.input_dim,
        "layers": [
            {
                "kind": layer.kind,
                "dims": list(layer.weight.shape),
                "weights": layer.weight.ravel().tolist(),
                "bias": layer.bias.tolist(),
                "activation": act.kind,
            }
            for layer, act in zip(net.layers, net.activations)
        ],
        "readout": net.readout,
        "seed": net.seed,
    }


def from_dict(d):
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {d.get('schema_version')!r}")
    layers, acts = [], []
    for entry in d["layers"]:
        w = np.array(entry["weights"], dtype=float).reshape(entry["dims"])
        layers.append(LinearLayer(entry["kind"], w, np.array(entry["bias"], dtype=float)))
        acts.append(entry["activation"])
    return Network(layers, acts, d["input_dim"], d["readout"], d.get("seed"))


def save_network(net, path):
    with open(path, "w") as f:
        json.dump(to_dict(net), f)


def load_network(path):
    with open(path) as f:
        return from_dict(json.load(f))
