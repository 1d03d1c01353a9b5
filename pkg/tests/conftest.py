import numpy as np
import pytest

from hnnkam import nn


def random_tanh_net(rng, input_dim=None, n_layers=None, output_dim=1, readout="final_scalar", bias_scale=0.3):
    """Dense tanh network with <= 3 linear layers and widths <= 16."""
    n_layers = n_layers or int(rng.integers(1, 4))
    input_dim = input_dim or int(rng.integers(1, 17))
    widths = [input_dim] + [int(rng.integers(1, 17)) for _ in range(n_layers - 1)] + [output_dim]
    layers, acts = [], []
    for i in range(n_layers):
        w = rng.standard_normal((widths[i + 1], widths[i])) / np.sqrt(widths[i])
        b = bias_scale * rng.standard_normal(widths[i + 1])
        layers.append(nn.LinearLayer("dense", w, b))
        acts.append("tanh" if i < n_layers - 1 else "identity")
    return nn.Network(layers, acts, input_dim, readout)


def central_diff_grad(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def strip_wall_time(obj):
    """Drop every ``wall_time`` key from parsed JSON (the only nondeterministic field)."""
    if isinstance(obj, dict):
        return {k: strip_wall_time(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [strip_wall_time(v) for v in obj]
    return obj


def artifact_digest(directory):
    """Map file name -> comparable content (raw bytes, or JSON without wall-time fields)."""
    import json
    import os

    out = {}
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if name.endswith(".json"):
            with open(path) as f:
                out[name] = json.dumps(strip_wall_time(json.load(f)), sort_keys=True)
        else:
            with open(path, "rb") as f:
                out[name] = f.read()
    return out
