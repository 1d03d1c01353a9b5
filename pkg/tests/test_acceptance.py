"""Acceptance suite: one test per acceptance criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (about 12 minutes on one CPU) or
``python tests/test_acceptance.py``.  Criteria 4, 5 and 7 train real models.
"""

import json
import math
import sys
import time

import numpy as np
import pytest

from hnnkam import cli, diagnostics as dg, dynamics as dy, integrators as ig, nn, training as tr

from conftest import artifact_digest, central_diff_grad, random_tanh_net


@pytest.fixture
def announce(capsys):
    def emit(number, title, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number} ({title}): {detail}")
        assert passed, detail
    return emit


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


# ---------------------------------------------------------------------------
# 1. gradient oracles


def test_criterion_1_gradient_oracles(announce):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_in = worst_par = 0.0
    for _ in range(100):
        net = random_tanh_net(rng)
        dim = net.input_dim
        u = rng.standard_normal(dim)
        g = nn.input_gradient(net, u)
        worst_in = max(worst_in, rel_err(g, central_diff_grad(lambda x: nn.forward(net, x), u)))

        A = rng.standard_normal((dim, dim))
        loss = tr.LossConfig(float(rng.choice([1.5, 2.0, 3.0])), "symplectic_gradient", dy.custom(A - A.T, "skew"))
        batch = ig.GradientDataset(rng.standard_normal((4, dim)), rng.standard_normal((4, dim)))
        _, grads = nn.loss_param_gradient(net, batch, loss)
        params = net.params()
        flat, fd = [], []
        for li, (gw, gb) in enumerate(grads):
            for which, gp in ((0, gw), (1, gb)):
                def f(x):
                    ps = [list(pp) for pp in params]
                    ps[li][which] = x
                    return nn.loss_param_gradient(net.with_params(ps), batch, loss)[0]
                flat.append(gp.ravel())
                fd.append(central_diff_grad(f, params[li][which]).ravel())
        worst_par = max(worst_par, rel_err(np.concatenate(flat), np.concatenate(fd)))
    elapsed = time.perf_counter() - start
    announce(1, "gradient oracles", worst_in < 1e-6 and worst_par < 1e-5 and elapsed < 60,
             f"max rel err input {worst_in:.2e} (< 1e-6), params {worst_par:.2e} (< 1e-5), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. structure laws


def test_criterion_2_structure_laws(announce):
    rng = np.random.default_rng(7)
    worst_skew, worst_d2 = 0.0, -np.inf
    for _ in range(1000):
        n = 2 * int(rng.integers(1, 9))
        net = random_tanh_net(rng, input_dim=n)
        u = 2 * rng.standard_normal(n)
        grad = lambda x: nn.input_gradient(net, x)
        g = grad(u)
        A = rng.standard_normal((n, n))
        S = dy.canonical_symplectic(n // 2) if rng.uniform() < 0.5 else dy.custom(A - A.T, "skew")
        rate = dy.energy_rate(grad, lambda x: dy.hnn_vector_field(net, S, x), u)
        scale = max(g @ g, 1e-300) * max(1.0, np.abs(S.matrix).max())
        worst_skew = max(worst_skew, abs(rate) / scale)
        G = dy.second_difference(max(n, 4), float(rng.uniform(0.05, 1.0)))
        if G.dim != n:
            continue
        worst_d2 = max(worst_d2, dy.energy_rate(grad, lambda x: dy.hnn_vector_field(net, G, x), u))
    announce(2, "structure laws", worst_skew <= 1e-12 and worst_d2 <= 1e-10,
             f"skew max |dH/dt| relative {worst_skew:.2e} (<= 1e-12); D2 max dH/dt {worst_d2:.2e} (<= 1e-10)")


# ---------------------------------------------------------------------------
# 3. integrator


def test_criterion_3_integrator(announce):
    sys_ = dy.reference_system("harmonic_oscillator")
    traj = ig.dopri45(sys_.field, [1.0, 0.0], (0, 100), rtol=1e-8, atol=1e-10, dense_times=np.linspace(0, 100, 10001))
    H = sys_.hamiltonian(traj.states)
    drift = np.abs(H - H[0]).max() / H[0]
    hs = [0.2, 0.1, 0.05, 0.025]
    errs = [abs(ig.dopri45(lambda u: -u, [1.0], (0, 1), fixed_step=h).states[-1, 0] - math.exp(-1)) for h in hs]
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    announce(3, "integrator", drift < 1e-8 and abs(order - 5) <= 0.3,
             f"oscillator relative energy drift {drift:.2e} over [0,100] (< 1e-8); order {order:.3f} (5 +/- 0.3)")


# ---------------------------------------------------------------------------
# 4 & 7. mass-spring discrimination and neural-ODE contrast (hidden 50, lr 1e-3, batch 200, 10^4 iterations)

SEEDS = (0, 1, 2, 3)


def _cli(*argv):
    code = cli.main([str(a) for a in argv])
    assert code == 0, f"hnnkam {' '.join(map(str, argv))} exited {code}"


@pytest.fixture(scope="module")
def mass_spring_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("mass_spring")
    _cli("generate", "--system", "mass_spring", "--seed", 0, "--out-dir", root / "data")
    data = root / "data" / "dataset.csv"
    runs = {}
    for kind, seeds in (("transformed", SEEDS), ("naive_hnn", SEEDS), ("neural_ode", (0,))):
        for s in seeds:
            out = root / f"{kind}_{s}"
            _cli("train", "--model", kind, "--seed", s, "--out-dir", out, "--set", f"train.dataset={data}")
            report = json.loads((out / "model_report.json").read_text())["report"]
            runs[kind, s] = (out, report["final_train_loss"])
    return data, runs


def test_criterion_4_mass_spring_discrimination(announce, mass_spring_runs):
    _, runs = mass_spring_runs
    transformed = [runs["transformed", s][1] for s in SEEDS]
    naive = [runs["naive_hnn", s][1] for s in SEEDS]
    passed = min(transformed) <= 0.01 and min(naive) >= 0.1
    announce(4, "mass-spring discrimination", passed,
             "transformed losses " + ", ".join(f"{v:.3g}" for v in transformed) + " (best <= 0.01); "
             "naive losses " + ", ".join(f"{v:.3g}" for v in naive) + " (all >= 0.1)")


def _drift(out, data, seed):
    _cli("simulate", "--seed", seed, "--out-dir", out, "--set", f"train.dataset={data}")
    traj = ig.load_trajectory(out / "trajectory.csv")
    return dg.energy_drift(traj, dy.reference_system("mass_spring").hamiltonian)["max_abs"]


def test_criterion_7_neural_ode_contrast(announce, mass_spring_runs):
    data, runs = mass_spring_runs
    best = min(SEEDS, key=lambda s: runs["transformed", s][1])
    hnn_drift = _drift(runs["transformed", best][0], data, best)
    ode_drift = _drift(runs["neural_ode", 0][0], data, 0)
    ratio = ode_drift / max(hnn_drift, 1e-300)
    announce(7, "neural-ODE contrast", ratio >= 10,
             f"energy drift over [0,5]: neural ODE {ode_drift:.3e}, transformed HNN (seed {best}) "
             f"{hnn_drift:.3e}, ratio {ratio:.1f} (>= 10)")


# ---------------------------------------------------------------------------
# 5. KdV at desk scale


def test_criterion_5_kdv_desk_scale(announce, tmp_path):
    system = dy.reference_system("kdv_semidiscrete")
    assert system.dim == 20 and system.params["dx"] == pytest.approx(0.1)
    _cli("generate", "--system", "kdv_semidiscrete", "--out-dir", tmp_path)
    code = cli.main(["train", "--system", "kdv_semidiscrete", "--out-dir", str(tmp_path),
                     "--set", "train.iterations=2000"])
    notes = []
    if code != 0:
        announce(5, "KdV desk scale", False, f"training exited with code {code}")
    ckpt = json.loads((tmp_path / "model.json").read_text())
    mse = ckpt["report"]["final_train_loss"]
    net = nn.from_dict(ckpt["networks"]["hamiltonian"])
    orbit = ig.load_dataset(tmp_path / "dataset.csv").u
    h_err = dg.hamiltonian_value_error(net, system.hamiltonian, orbit)["max_abs"]
    notes.append(f"(a) train MSE {mse:.3e} (<= 1e-2)")
    notes.append(f"(b) aligned max |H - H_NN| {h_err:.3e} (<= 1e-2)")

    u0 = dy.kdv_initial_state(20, 0.1)
    times = np.linspace(0, 11, 1101)

    def recurrence(field):
        try:
            traj = ig.dopri45(field, u0, (0, 11), dense_times=times)
        except ig.IntegrationError as exc:
            return None, str(exc)
        return dg.recurrence_error(traj, u0, 9.8, 0.5)["min_error"], ""

    true_rec, true_msg = recurrence(system.field)
    S = dy.StructureMatrix.from_dict(ckpt["structure"])
    model_rec, model_msg = recurrence(lambda u: dy.hnn_vector_field(net, S, u))
    if true_rec is None:
        notes.append(f"(c) true solver cannot reach t=9.8 ({true_msg})")
        rec_ok = False
    elif model_rec is None:
        notes.append(f"(c) model orbit fails ({model_msg}); true recurrence {true_rec:.3e}")
        rec_ok = False
    else:
        rec_ok = model_rec <= 2 * true_rec
        notes.append(f"(c) recurrence model {model_rec:.3e} vs 2 x true {2 * true_rec:.3e}")
    announce(5, "KdV desk scale", mse <= 1e-2 and h_err <= 1e-2 and rec_ok, "; ".join(notes))


# ---------------------------------------------------------------------------
# 6. bounds chain


def test_criterion_6_bounds_chain(announce):
    import test_bounds as tb

    checks = [tb.test_oracle_equivalence_random_sweep, tb.test_K_nondecreasing_in_every_entry,
              tb.test_rademacher_and_generalization_monotone, tb.test_kam_delta_monotone,
              tb.test_kam_strictly_increasing_in_L, tb.test_no_guarantee_iff_margin_nonpositive]
    failed = []
    for check in checks:
        try:
            check()
        except AssertionError as exc:
            failed.append(f"{check.__name__}: {exc}")
    from hnnkam import bounds as bd
    kam = bd.kam_probability(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 4)
    kam_err = abs(kam - math.exp(-4))
    if kam_err > 1e-12:
        failed.append(f"kam example off by {kam_err:.2e}")
    if not isinstance(bd.kam_probability(1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 4), bd.NoGuarantee):
        failed.append("margin 0 did not give no-guarantee")
    announce(6, "bounds chain", not failed,
             "; ".join(failed) or f"10^4-sample oracle and monotonicity sweeps hold; |delta - e^-4| = {kam_err:.1e}")


# ---------------------------------------------------------------------------
# 8. reproducibility


def _pipeline(out, model, seed):
    import test_cli

    test_cli.small_pipeline(out, model=model, seed=seed, true_field=model == "transformed")


def test_criterion_8_reproducibility(announce, tmp_path):
    mismatched = []
    for model in cli.MODEL_KINDS:
        for d in ("a", "b"):
            _pipeline(tmp_path / model / d, model, 11)
        a, b = artifact_digest(tmp_path / model / "a"), artifact_digest(tmp_path / model / "b")
        mismatched += [f"{model}/{k}" for k in sorted(set(a) | set(b)) if a.get(k) != b.get(k)]
    kdv = []
    for d in ("a", "b"):
        out = tmp_path / "kdv" / d
        _cli("generate", "--system", "kdv_semidiscrete", "--out-dir", out, "--set", "generate.n_points=21",
             "--set", "generate.t_end=0.2")
        _cli("simulate", "--system", "kdv_semidiscrete", "--out-dir", out, "--set", "simulate.true_field=true",
             "--set", "simulate.t_end=0.5", "--set", "simulate.n_points=51")
        kdv.append(artifact_digest(out))
    mismatched += [f"kdv/{k}" for k in kdv[0] if kdv[0][k] != kdv[1].get(k)]
    announce(8, "reproducibility", not mismatched,
             "mismatched: " + ", ".join(mismatched) if mismatched else
             f"pipelines {', '.join(cli.MODEL_KINDS)} and KdV rerun byte-identical (wall_time excluded)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
