import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from hnnkam import dynamics as dy, integrators as ig


def decay(u):
    return -u


def test_fixed_step_order_is_five():
    hs = [0.2, 0.1, 0.05, 0.025]
    errs = [abs(ig.dopri45(decay, [1.0], (0, 1), fixed_step=h).states[-1, 0] - np.exp(-1)) for h in hs]
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert abs(order - 5) < 0.3


def test_error_scales_with_tolerance():
    tols = [1e-6, 1e-8, 1e-10, 1e-12]
    errs = [abs(ig.dopri45(decay, [1.0], (0, 1), rtol=t, atol=t).states[-1, 0] - np.exp(-1)) for t in tols]
    slope = np.polyfit(np.log(tols), np.log(errs), 1)[0]
    assert abs(slope - 1.0) <= 0.2


def test_dense_output_matches_scipy():
    sys = dy.reference_system("double_pendulum")
    u0 = np.array([2.0, 2.5, 0.3, -0.2])
    t_eval = np.linspace(0, 3, 61)
    mine = ig.dopri45(sys.field, u0, (0, 3), rtol=1e-10, atol=1e-12, dense_times=t_eval).states
    ref = solve_ivp(lambda t, y: sys.field(y), (0, 3), u0, method="DOP853", rtol=1e-12, atol=1e-13,
                    t_eval=t_eval).y.T
    assert np.abs(mine - ref).max() < 1e-7


def test_dense_output_is_accurate_between_steps():
    t_eval = np.linspace(0, 5, 1001)
    tr = ig.dopri45(decay, [1.0], (0, 5), dense_times=t_eval)
    assert np.abs(tr.states[:, 0] - np.exp(-t_eval)).max() < 1e-8
    assert tr.meta["n_steps"] < 200


def test_harmonic_oscillator_energy():
    sys = dy.reference_system("harmonic_oscillator")
    tr = ig.dopri45(sys.field, [1.0, 0.0], (0, 100), dense_times=np.linspace(0, 100, 2001))
    H = sys.hamiltonian(tr.states)
    # DP5(4) at rtol 1e-8 drifts ~1e-7 relative over 100 time units
    assert np.abs(H - H[0]).max() < 1e-6 * H[0]


def test_rk4_order():
    errs = [abs(ig.rk4_fixed(decay, [1.0], 1 / n, n).states[-1, 0] - np.exp(-1)) for n in (10, 20, 40)]
    assert np.log2(errs[0] / errs[1]) == pytest.approx(4, abs=0.2)
    assert np.log2(errs[1] / errs[2]) == pytest.approx(4, abs=0.2)


def test_divergence_and_stiffness_errors():
    with pytest.raises(ig.StiffnessError):
        ig.dopri45(lambda u: u ** 2, [1.0], (0, 2))  # finite-time blow-up at t = 1
    with pytest.raises(ig.DivergenceError):
        ig.dopri45(lambda u: np.full_like(u, np.nan), [1.0], (0, 1))
    with pytest.raises(ig.DivergenceError):
        ig.dopri45(lambda u: np.where(u > 2, np.inf, u), [1.0], (0, 2))
    with pytest.raises(ValueError):
        ig.dopri45(decay, [1.0], (1, 0))
    with pytest.raises(ValueError):
        ig.dopri45(decay, [1.0], (0, 1), dense_times=[2.0])


def test_blowup_detected_as_integration_error():
    with pytest.raises(ig.IntegrationError):
        ig.dopri45(lambda u: u ** 3, [1.0], (0, 1))  # singular at t = 0.5


def test_trajectory_validation():
    with pytest.raises(ValueError):
        ig.Trajectory([0.0, 0.0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        ig.Trajectory([0.0, 1.0], np.zeros((3, 1)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 5), st.integers(1, 6))
def test_dataset_invariants(seed, n_traj, n_points):
    sys = dy.reference_system("mass_spring")
    ds = ig.generate_dataset(sys, n_traj, (0, 1), n_points, seed=seed)
    assert len(ds) == n_traj * n_points
    assert np.array_equal(ds.dudt, sys.field(ds.u))
    assert ds.input_radius == np.max(np.sqrt(np.sum(ds.u ** 2, axis=1)))


def test_dataset_is_deterministic_and_round_trips(tmp_path):
    sys = dy.reference_system("double_pendulum")
    a = ig.generate_dataset(sys, 3, (0, 1), 5, seed=7)
    b = ig.generate_dataset(sys, 3, (0, 1), 5, seed=7)
    assert np.array_equal(a.u, b.u)
    path = tmp_path / "d.csv"
    ig.save_dataset(a, path)
    back = ig.load_dataset(path)
    assert np.array_equal(back.u, a.u) and np.array_equal(back.dudt, a.dudt) and np.array_equal(back.t, a.t)
    header = path.read_text().splitlines()[0]
    assert header == "t,u_0,u_1,u_2,u_3,dudt_0,dudt_1,dudt_2,dudt_3"
    meta = json.loads((tmp_path / "d.json").read_text())
    assert meta["schema_version"] == 1 and meta["n_samples"] == 15
    assert meta["provenance"]["system"] == "double_pendulum" and meta["provenance"]["seed"] == 7


def test_single_point_dataset():
    ds = ig.generate_dataset(dy.reference_system("mass_spring"), 4, (0, 5), 1, seed=0)
    assert len(ds) == 4 and np.all(ds.t == 0)


def test_failed_trajectory_reports_initial_condition():
    sys = dy.ReferenceSystem("bad", {}, 1, lambda u: np.asarray(u) ** 2, lambda u: 0.0)
    with pytest.raises(ig.DatasetError, match="u0"):
        ig.generate_dataset(sys, 1, (0, 10), 5, initial_states=[[1.0]])


def test_trajectory_round_trip(tmp_path):
    tr = ig.dopri45(decay, [1.0, 2.0], (0, 1), dense_times=np.linspace(0, 1, 11))
    ig.save_trajectory(tr, tmp_path / "t.csv")
    back = ig.load_trajectory(tmp_path / "t.csv")
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.times, tr.times)
