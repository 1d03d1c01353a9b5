"""Command-line experiment driver.

    python -m hnnkam generate --system mass_spring --seed 7 --out-dir runs/ms
    python -m hnnkam train --out-dir runs/ms --model transformed
    python -m hnnkam simulate --out-dir runs/ms
    python -m hnnkam bounds --out-dir runs/ms
    python -m hnnkam diagnose --out-dir runs/ms
    python -m hnnkam plot runs/ms/trajectory.csv

Configuration is a TOML subset (``key = value`` lines under ``[section]``
headers); ``--print-config`` shows every default.  Every subcommand writes
its outputs under ``--out-dir`` and embeds the resolved config in them.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

import argparse
import copy
import json
import os
import sys

import numpy as np
import tomli

from hnnkam import bounds as bd
from hnnkam import diagnostics as dg
from hnnkam import dynamics as dy
from hnnkam import integrators as ig
from hnnkam import nn
from hnnkam import training as tr

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# colours for state components: q1 red, q2 blue, v1 green, v2 black
COLORS = ["#d62728", "#1f77b4", "#2ca02c", "#000000", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"]


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "system": {"name": "mass_spring"},
    "generate": {"n_traj": 100, "n_points": 100, "t_start": 0.0, "t_end": 5.0,
                 "rtol": 1e-8, "atol": 1e-10, "init": "normal", "output": "dataset.csv"},
    "model": {"kind": "transformed", "net": "dense", "hidden": [50], "kernel_sizes": [],
              "activation": "tanh", "init": ""},
    "train": {"dataset": "dataset.csv", "lr": 1e-3, "iterations": 10000, "batch_size": 200,
              "p": 2.0, "target": "symplectic_gradient", "skip_limit": 0.01,
              "checkpoint": "model.json"},
    "simulate": {"checkpoint": "model.json", "true_field": False, "t_start": 0.0, "t_end": 5.0,
                 "n_points": 501, "initial_state": [], "rtol": 1e-8, "atol": 1e-10,
                 "output": "trajectory.csv"},
    "bounds": {"checkpoint": "model.json", "dataset": "dataset.csv", "delta": 0.05, "M": 0,
               "c_loss": 0.0, "C_sobolev": 1.0, "inf_density": 1.0,
               "eps0": 1.0, "c1": 0.0, "c2": 0.0, "c3": 0.0, "output": "bounds.json"},
    "diagnose": {"trajectory": "trajectory.csv", "checkpoint": "model.json",
                 "dataset": "dataset.csv", "reference_state": [], "t_center": 0.0,
                 "window": 0.0, "output": "diagnostics.json"},
}

# per-system presets layered over DEFAULTS (0 / "" / [] mean "derive")
PRESETS = {
    "kdv_semidiscrete": {
        "generate": {"n_traj": 1, "n_points": 201, "t_end": 2.0, "init": "kdv_cosine"},
        "model": {"kind": "hnn", "net": "conv", "hidden": [200, 200], "kernel_sizes": [3, 1, 1],
                  "init": "orthogonal"},
        "train": {"batch_size": 0},
        "simulate": {"t_end": 11.0, "n_points": 1101},
        "diagnose": {"t_center": 9.8, "window": 0.5},
    },
}

MODEL_KINDS = ("hnn", "naive_hnn", "transformed", "neural_ode")


# ---------------------------------------------------------------------------
# config handling


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in out and not where.startswith("system.params"):
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(v, dict) and isinstance(out.get(k, {}), dict):
            out[k] = _merge(out.get(k, {}), v, where + ".")
        else:
            if k in out and isinstance(out[k], float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if k in out and type(out[k]) is not type(v):
                raise ConfigError(f"{where}: expected {type(out[k]).__name__}, got {type(v).__name__}")
            out[k] = v
    return out


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, value = (s.strip() for s in text.split("=", 1))
    try:
        parsed = tomli.loads(f"v = {value}")["v"]
    except tomli.TOMLDecodeError:
        parsed = value  # bare strings
    node = {}
    cur = node
    parts = key.split(".")
    for part in parts[:-1]:
        cur = cur.setdefault(part, {})
    cur[parts[-1]] = parsed
    return node


def resolve_config(args):
    """Defaults, then the system preset, then ``--config``, then flags."""
    layers = []
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as f:
                layers.append(tomli.load(f))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "system", None):
        flags["system"] = {"name": args.system}
    if getattr(args, "model", None):
        flags["model"] = {"kind": args.model}
    for text in getattr(args, "set", None) or []:
        flags = _merge_loose(flags, _parse_override(text))
    layers.append(flags)

    name = DEFAULTS["system"]["name"]
    for layer in layers:
        name = layer.get("system", {}).get("name", name)
    cfg = _merge(DEFAULTS, PRESETS.get(name, {}))
    for layer in layers:
        cfg = _merge(cfg, layer)
    _validate(cfg)
    return cfg


def _merge_loose(a, b):
    out = copy.deepcopy(a)
    for k, v in b.items():
        out[k] = _merge_loose(out.get(k, {}), v) if isinstance(v, dict) else v
    return out


def _validate(cfg):
    try:
        dy.reference_system(cfg["system"]["name"], **cfg["system"].get("params", {}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["model"]["kind"] not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
    if cfg["generate"]["init"] not in ("normal", "kdv_cosine"):
        raise ConfigError("generate.init must be 'normal' or 'kdv_cosine'")
    if cfg["generate"]["n_traj"] < 1 or cfg["generate"]["n_points"] < 1:
        raise ConfigError("generate.n_traj and generate.n_points must be >= 1")
    if cfg["train"]["iterations"] < 1 or cfg["train"]["lr"] <= 0:
        raise ConfigError("train.iterations must be >= 1 and train.lr positive")
    if not 0 < cfg["bounds"]["delta"] < 1:
        raise ConfigError("bounds.delta must lie in (0, 1)")


def format_config(cfg):
    """Render ``cfg`` in the same TOML subset that ``--config`` reads."""
    def value(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (int, str, list)):
            return json.dumps(v)
        raise TypeError(v)

    lines, sections = [], []
    for k, v in cfg.items():
        (sections if isinstance(v, dict) else lines).append((k, v))
    out = [f"{k} = {value(v)}" for k, v in lines]

    def emit(prefix, d):
        flat = [(k, v) for k, v in d.items() if not isinstance(v, dict)]
        out.append("")
        out.append(f"[{prefix}]")
        out.extend(f"{k} = {value(v)}" for k, v in flat)
        for k, v in d.items():
            if isinstance(v, dict):
                emit(f"{prefix}.{k}", v)

    for k, v in sections:
        emit(k, v)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# files


def _path(args, name):
    return name if os.path.isabs(name) else os.path.join(args.out_dir, name)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path):
    with open(path) as f:
        return json.load(f)


def _system(cfg):
    return dy.reference_system(cfg["system"]["name"], **cfg["system"].get("params", {}))


def _structure(system):
    if system.structure is not None:
        return system.structure
    return dy.canonical_symplectic(system.dim // 2)


def save_checkpoint(path, kind, nets, structure, cfg, status="ok", report=None):
    _write_json(path, {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "status": status,
        "structure": structure.to_dict(),
        "networks": {k: nn.to_dict(v) for k, v in nets.items()},
        "report": report,
        "config": cfg,
    })


def load_checkpoint(path):
    d = _read_json(path)
    nets = {k: nn.from_dict(v) for k, v in d["networks"].items()}
    return d["kind"], nets, dy.StructureMatrix.from_dict(d["structure"]), d


def model_field(kind, nets, S):
    """Vector field ``u -> du/dt`` of a stored model (single state or batch)."""
    if kind in ("hnn", "naive_hnn"):
        return lambda u: dy.hnn_vector_field(nets["hamiltonian"], S, u)
    if kind == "transformed":
        cmap = dy.CoordinateMap(nets["coordinate_map"])
        return lambda u: dy.transformed_vector_field(nets["hamiltonian"], cmap, S, u)
    return lambda u: nn.forward(nets["field"], u)


def _model_tuple(kind, nets):
    if kind in ("hnn", "naive_hnn"):
        return ("hnn", nets["hamiltonian"])
    if kind == "transformed":
        return ("transformed", nets["hamiltonian"], nets["coordinate_map"])
    return ("neural_ode", nets["field"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg, args):
    g = cfg["generate"]
    system = _system(cfg)
    ics = None
    if g["init"] == "kdv_cosine":
        if system.name != "kdv_semidiscrete":
            raise ConfigError("generate.init = 'kdv_cosine' needs the KdV system")
        ics = [dy.kdv_initial_state(system.dim, system.params["dx"])] * g["n_traj"]
    ds = ig.generate_dataset(system, g["n_traj"], (g["t_start"], g["t_end"]), g["n_points"],
                             seed=cfg["seed"], rtol=g["rtol"], atol=g["atol"], initial_states=ics)
    path = _path(args, g["output"])
    ig.save_dataset(ds, path, {"config": cfg})
    print(f"wrote {path}: {len(ds)} samples, dim {ds.dim}, input_radius {ds.input_radius:.6g}")
    return EXIT_OK


def _architectures(cfg, dim):
    m = cfg["model"]
    conv = m["net"] == "conv"
    common = dict(kind=m["net"], activation=m["activation"], hidden=list(m["hidden"]),
                  kernel_sizes=list(m["kernel_sizes"]) or None, init=m["init"] or None)
    scalar = nn.Architecture(dim, output_dim=1, readout="sum_of_outputs" if conv else "final_scalar", **common)
    vector = nn.Architecture(dim, output_dim=1 if conv else dim, readout="vector", **common)
    return scalar, vector


def cmd_train(cfg, args):
    t = cfg["train"]
    kind = cfg["model"]["kind"]
    system = _system(cfg)
    ds = ig.load_dataset(_path(args, t["dataset"]))
    if ds.dim != system.dim:
        raise ConfigError(f"dataset dimension {ds.dim} does not match system {system.name} ({system.dim})")
    S = _structure(system)
    loss = tr.LossConfig(t["p"], t["target"], S)
    tc = tr.TrainConfig(lr=t["lr"], iterations=t["iterations"],
                        batch_size=t["batch_size"] or len(ds), seed=cfg["seed"])
    scalar, vector = _architectures(cfg, ds.dim)
    seed = cfg["seed"]
    ckpt = _path(args, t["checkpoint"])
    if kind == "transformed":
        nets = {"hamiltonian": nn.init_network(scalar, 10 * seed + 1),
                "coordinate_map": nn.init_network(vector, 10 * seed + 2)}
    elif kind == "neural_ode":
        nets = {"field": nn.init_network(vector, 10 * seed + 3)}
    else:
        nets = {"hamiltonian": nn.init_network(scalar, 10 * seed + 1)}
    names = list(nets)
    try:
        if kind == "transformed":
            h, c, rep = tr.train_transformed(nets["hamiltonian"], dy.CoordinateMap(nets["coordinate_map"]),
                                             ds, loss, tc, skip_limit=t["skip_limit"])
            out = {"hamiltonian": h, "coordinate_map": c.net}
        elif kind == "neural_ode":
            f, rep = tr.train_neural_ode(nets["field"], ds, loss, tc)
            out = {"field": f}
        else:
            h, rep = tr.train(nets["hamiltonian"], ds, loss, tc)
            out = {"hamiltonian": h}
    except tr.TrainingDivergenceError as exc:
        save_checkpoint(ckpt, kind, dict(zip(names, exc.checkpoint)), S, cfg, status="diverged",
                        report={"error": str(exc), "iteration": exc.iteration})
        print(f"training diverged: {exc}; last good checkpoint kept in {ckpt}", file=sys.stderr)
        return EXIT_NUMERIC
    report = rep.to_dict()
    save_checkpoint(ckpt, kind, out, S, cfg, report={k: v for k, v in report.items() if k != "loss_history"})
    rpath = os.path.splitext(ckpt)[0] + "_report.json"
    _write_json(rpath, {"schema_version": SCHEMA_VERSION, "config": cfg, "report": report})
    print(f"wrote {ckpt}: final train loss {rep.final_train_loss:.6g}")
    return EXIT_OK if np.isfinite(rep.final_train_loss) else EXIT_NUMERIC


def _initial_state(cfg, args, system):
    s = cfg["simulate"]
    if s["initial_state"]:
        u0 = np.asarray(s["initial_state"], dtype=float)
        if u0.shape != (system.dim,):
            raise ConfigError(f"simulate.initial_state must have {system.dim} entries")
        return u0
    if system.name == "kdv_semidiscrete":
        return dy.kdv_initial_state(system.dim, system.params["dx"])
    dpath = _path(args, cfg["train"]["dataset"])
    if os.path.exists(dpath):
        return ig.load_dataset(dpath).u[0]
    return np.random.default_rng(cfg["seed"]).standard_normal(system.dim)


def cmd_simulate(cfg, args):
    s = cfg["simulate"]
    system = _system(cfg)
    if s["true_field"]:
        field_fn, source = system.field, f"true:{system.name}"
    else:
        kind, nets, S, _ = load_checkpoint(_path(args, s["checkpoint"]))
        field_fn, source = model_field(kind, nets, S), f"model:{kind}"
    u0 = _initial_state(cfg, args, system)
    times = np.linspace(s["t_start"], s["t_end"], s["n_points"])
    traj = ig.dopri45(field_fn, u0, (s["t_start"], s["t_end"]), s["rtol"], s["atol"], dense_times=times)
    path = _path(args, s["output"])
    ig.save_trajectory(traj, path, {"config": cfg, "source": source})
    print(f"wrote {path}: {len(traj)} states from {source}")
    return EXIT_OK


def cmd_bounds(cfg, args):
    b = cfg["bounds"]
    kind, nets, S, _ = load_checkpoint(_path(args, b["checkpoint"]))
    if "hamiltonian" not in nets:
        raise ConfigError("bounds need a Hamiltonian network (not a neural-ODE checkpoint)")
    ds = ig.load_dataset(_path(args, b["dataset"]))
    p = cfg["train"]["p"]
    L = tr.dataset_loss(_model_tuple(kind, nets), ds, tr.LossConfig(p, cfg["train"]["target"], S))
    kam = bd.KamConstants(b["eps0"], b["c1"] or None, b["c2"] or None, b["c3"] or None)
    inputs = bd.inputs_for(nets["hamiltonian"], ds, L, p=p, delta=b["delta"], c_loss=b["c_loss"] or None,
                           C_sobolev=b["C_sobolev"], inf_density=b["inf_density"], kam=kam)
    if b["M"]:
        inputs.M = int(b["M"])
    report = bd.bound_report(inputs)
    path = _path(args, b["output"])
    _write_json(path, {"schema_version": SCHEMA_VERSION, "config": cfg, "inputs": inputs.to_dict(),
                       "report": report.to_dict()})
    table = report.table()
    with open(os.path.splitext(path)[0] + ".txt", "w") as f:
        f.write(table + "\n")
    print(table)
    return EXIT_OK


def cmd_diagnose(cfg, args):
    d = cfg["diagnose"]
    system = _system(cfg)
    out, series = {}, None
    tpath = _path(args, d["trajectory"])
    if os.path.exists(tpath):
        traj = ig.load_trajectory(tpath)
        drift = dg.energy_drift(traj, system.hamiltonian)
        out["energy_drift"] = {k: drift[k] for k in ("max_abs", "mean_abs", "trend")}
        series = np.column_stack([traj.times, drift["series"]])
        if d["window"] > 0:
            ref = np.asarray(d["reference_state"], dtype=float) if d["reference_state"] else traj.states[0]
            out["recurrence"] = dg.recurrence_error(traj, ref, d["t_center"], d["window"])
    cpath, dpath = _path(args, d["checkpoint"]), _path(args, d["dataset"])
    if os.path.exists(cpath) and os.path.exists(dpath):
        kind, nets, S, _ = load_checkpoint(cpath)
        ds = ig.load_dataset(dpath)
        field_fn = model_field(kind, nets, S)
        g = dg.gradient_test_error(field_fn, ds, cfg["train"]["p"])
        out["gradient_error"] = {"mean": g["mean"], "max": g["max"]}
        if kind in ("hnn", "naive_hnn"):
            out["hamiltonian_error"] = dg.hamiltonian_value_error(nets["hamiltonian"], system.hamiltonian, ds.u)
    if not out:
        raise FileNotFoundError(f"nothing to diagnose: neither {tpath} nor {cpath} + {dpath} exist")
    path = _path(args, d["output"])
    _write_json(path, {"schema_version": SCHEMA_VERSION, "config": cfg, "diagnostics": out})
    if series is not None:
        csv_path = os.path.splitext(path)[0] + "_energy.csv"
        ig.write_csv(csv_path, ["t", "energy_drift"], series)
        with open(ig._sidecar(csv_path), "w") as f:
            json.dump({"schema_version": SCHEMA_VERSION, "config": cfg}, f, indent=2, sort_keys=True)
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def render_svg(header, data, title="", metadata=None, width=640, height=360):
    """Static line chart: first column is time, one polyline per remaining column."""
    pad = 48
    t = data[:, 0]
    ys = data[:, 1:]
    t0, t1 = float(t.min()), float(t.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if t1 == t0:
        t1 = t0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0

    def sx(v):
        return pad + (v - t0) / (t1 - t0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">']
    if metadata is not None:
        meta = json.dumps(metadata, sort_keys=True).replace("&", "&amp;").replace("<", "&lt;")
        parts.append(f"<metadata>{meta}</metadata>")
    parts.append(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
                 'fill="none" stroke="#999"/>')
    parts.append(f'<text x="{width / 2:.1f}" y="{pad / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{title}</text>')
    for v, anchor, x, y in ((t0, "start", pad, height - pad / 2), (t1, "end", width - pad, height - pad / 2)):
        parts.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="11">{v:.4g}</text>')
    for v, y in ((y0, height - pad), (y1, pad)):
        parts.append(f'<text x="{pad - 4}" y="{y}" text-anchor="end" font-size="11">{v:.4g}</text>')
    for j in range(ys.shape[1]):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t, ys[:, j]))
        color = COLORS[j % len(COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}">'
                     f"<title>{header[j + 1]}</title></polyline>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(cfg, args):
    if not args.files:
        raise ConfigError("plot needs at least one CSV file")
    for path in args.files:
        header, data = ig.read_csv(path)
        if data.shape[1] < 2 or len(data) == 0:
            raise ConfigError(f"{path}: need a time column and at least one series")
        out = os.path.join(args.out_dir, os.path.splitext(os.path.basename(path))[0] + ".svg")
        svg = render_svg(header, data, os.path.basename(path),
                         {"schema_version": SCHEMA_VERSION, "config": cfg, "source": os.path.basename(path)})
        with open(out, "w") as f:
            f.write(svg)
        print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "simulate": cmd_simulate,
            "bounds": cmd_bounds, "diagnose": cmd_diagnose, "plot": cmd_plot}


def build_parser():
    parser = argparse.ArgumentParser(prog="hnnkam", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML-subset config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--system", help="reference system name")
        p.add_argument("--model", help="model kind: " + ", ".join(MODEL_KINDS))
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        if name == "plot":
            p.add_argument("files", nargs="*")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return EXIT_OK
        os.makedirs(args.out_dir, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ig.IntegrationError, ig.DatasetError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, json.JSONDecodeError) as exc:
        print(f"I/O error: malformed input file ({exc})", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
