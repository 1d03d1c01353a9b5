import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hnnkam import dynamics as dy, integrators as ig, nn

from conftest import central_diff_grad, random_tanh_net


@pytest.mark.parametrize("n", range(4, 65))
def test_difference_operator_identities(n):
    dx = 2.0 / n
    df, db = dy.forward_difference(n, dx), dy.backward_difference(n, dx)
    D, D2 = dy.central_difference(n, dx).matrix, dy.second_difference(n, dx).matrix
    assert np.array_equal(D, 0.5 * (df + db))
    np.testing.assert_allclose(df @ db, db @ df, rtol=0, atol=1e-12 / dx ** 2)
    assert np.array_equal(D2, df @ db)


def test_difference_operators_match_displayed_matrices():
    n, dx = 5, 0.5
    df = dy.forward_difference(n, dx) * dx
    assert df[0, 0] == -1 and df[0, 1] == 1 and df[-1, 0] == 1 and df[-1, -1] == -1
    db = dy.backward_difference(n, dx) * dx
    assert db[0, 0] == 1 and db[0, -1] == -1 and db[1, 0] == -1


def test_structure_checks():
    S = dy.canonical_symplectic(2)
    assert np.array_equal(S.matrix, [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]])
    with pytest.raises(ValueError):
        dy.custom(np.array([[0.0, 1.0], [1.0, 0.0]]), "skew")
    with pytest.raises(ValueError):
        dy.custom(np.eye(2), "negative_semidefinite")
    with pytest.raises(ValueError):
        dy.central_difference(3, 0.1)
    G = dy.second_difference(16, 0.1)
    assert G.character == "negative_semidefinite"


def test_structure_round_trip():
    for S in (dy.canonical_symplectic(3), dy.central_difference(8, 0.25), dy.second_difference(8, 0.25),
              dy.kdv_structure(10, 0.1)):
        back = dy.StructureMatrix.from_dict(S.to_dict())
        assert np.array_equal(back.matrix, S.matrix)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_skew_structure_conserves_learned_energy(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 5))
    net = random_tanh_net(rng, input_dim=2 * M)
    A = rng.standard_normal((2 * M, 2 * M))
    for S in (dy.canonical_symplectic(M), dy.custom(A - A.T, "skew")):
        u = 2 * rng.standard_normal(2 * M)
        g = nn.input_gradient(net, u)
        rate = dy.energy_rate(lambda x: nn.input_gradient(net, x), lambda x: dy.hnn_vector_field(net, S, x), u)
        assert abs(rate) <= 1e-12 * max(g @ g, 1e-300) * max(1.0, np.abs(S.matrix).max())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dissipative_structure_never_increases_energy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 17))
    net = random_tanh_net(rng, input_dim=n)
    G = dy.second_difference(n, float(rng.uniform(0.05, 1.0)))
    u = rng.standard_normal(n)
    rate = dy.energy_rate(lambda x: nn.input_gradient(net, x), lambda x: dy.hnn_vector_field(net, G, x), u)
    assert rate <= 1e-10


def test_transformed_field_with_identity_map_is_hnn_field(rng):
    net = random_tanh_net(rng, input_dim=4)
    S = dy.canonical_symplectic(2)
    cmap = dy.CoordinateMap(nn.identity_network(4))
    U = rng.standard_normal((20, 4))
    diff = dy.transformed_vector_field(net, cmap, S, U) - dy.hnn_vector_field(net, S, U)
    assert np.abs(diff).max() <= 1e-14


def test_transformed_field_matches_pullback(rng):
    # with u = A x (linear map) the field is A^{-1} S A^{-T} grad_x H
    net = random_tanh_net(rng, input_dim=4)
    A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    cmap = dy.CoordinateMap(nn.Network([nn.LinearLayer("dense", A, np.zeros(4))], ["identity"], 4, "vector"))
    S = dy.canonical_symplectic(2)
    x = rng.standard_normal(4)
    expected = np.linalg.inv(A) @ S.matrix @ np.linalg.inv(A).T @ nn.input_gradient(net, x)
    np.testing.assert_allclose(dy.transformed_vector_field(net, cmap, S, x), expected, rtol=1e-10)


def test_singular_transform_rejected(rng):
    net = random_tanh_net(rng, input_dim=2)
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    cmap = dy.CoordinateMap(nn.Network([nn.LinearLayer("dense", A, np.zeros(2))], ["identity"], 2, "vector"))
    with pytest.raises(dy.SingularTransformError):
        dy.transformed_vector_field(net, cmap, dy.canonical_symplectic(1), np.ones(2))


def test_hnn_field_dimension_check(rng):
    net = random_tanh_net(rng, input_dim=3)
    with pytest.raises(nn.DimensionError):
        dy.hnn_vector_field(net, dy.canonical_symplectic(2), np.zeros(3))


def test_double_pendulum_energy_value_and_rest_state():
    sys = dy.reference_system("double_pendulum")
    # upright configuration: V = g (m1 + m2) l1 + g m2 l2 = 9.8 * 3 + 9.8 * 2
    assert sys.hamiltonian(np.zeros(4)) == pytest.approx(49.0)
    np.testing.assert_allclose(sys.field(np.array([np.pi, np.pi, 0, 0])), 0, atol=1e-12)


def test_double_pendulum_conserves_energy(rng):
    sys = dy.reference_system("double_pendulum")
    for _ in range(3):
        u0 = rng.standard_normal(4)
        tr = ig.dopri45(sys.field, u0, (0, 5), dense_times=np.linspace(0, 5, 101))
        H = sys.hamiltonian(tr.states)
        assert np.abs(H - H[0]).max() < 1e-6 * abs(H[0])


def test_double_pendulum_matches_lagrangian(rng):
    # d/dt dL/dphi - dL/dtheta = 0 checked with finite-difference partials of L
    p = dy.DOUBLE_PENDULUM_DEFAULTS
    M = p["m1"] + p["m2"]

    def lagrangian(q, w):
        T = (0.5 * M * p["l1"] ** 2 * w[0] ** 2 + 0.5 * p["m2"] * p["l2"] ** 2 * w[1] ** 2
             + p["m2"] * p["l1"] * p["l2"] * w[0] * w[1] * np.cos(q[0] - q[1]))
        V = p["g"] * M * p["l1"] * np.cos(q[0]) + p["g"] * p["m2"] * p["l2"] * np.cos(q[1])
        return T - V

    sys = dy.reference_system("double_pendulum")
    u = rng.standard_normal(4)
    q, w = u[:2], u[2:]
    acc = sys.field(u)[2:]
    h = 1e-5
    dLdq = central_diff_grad(lambda x: lagrangian(x, w), q)
    # total time derivative of dL/dw along (w, acc)
    pw = lambda qq, ww: central_diff_grad(lambda y: lagrangian(qq, y), ww)
    ddt = (pw(q + h * w, w + h * acc) - pw(q - h * w, w - h * acc)) / (2 * h)
    np.testing.assert_allclose(ddt - dLdq, 0, atol=1e-5)


def test_mass_spring_is_hamiltonian(rng):
    sys = dy.reference_system("mass_spring")
    p = sys.params
    u = rng.standard_normal(4)
    # canonical momenta p_i = m_i v_i
    def H_canon(z):
        q, mom = z[:2], z[2:]
        return sys.hamiltonian(np.concatenate([q, mom / np.array([p["m1"], p["m2"]])]))
    z = np.concatenate([u[:2], u[2:] * np.array([p["m1"], p["m2"]])])
    dz = dy.canonical_symplectic(2).apply(central_diff_grad(H_canon, z))
    expected = np.concatenate([dz[:2], dz[2:] / np.array([p["m1"], p["m2"]])])
    np.testing.assert_allclose(sys.field(u), expected, rtol=1e-7, atol=1e-8)


def test_reference_system_errors():
    with pytest.raises(ValueError):
        dy.reference_system("lorenz")
    with pytest.raises(ValueError):
        dy.reference_system("mass_spring", mass=3.0)
    with pytest.raises(ValueError):
        dy.reference_system("double_pendulum", g=-1.0)


def test_kdv_field_is_structured_gradient(rng):
    sys = dy.reference_system("kdv_semidiscrete")
    u = rng.standard_normal(20)
    grad = central_diff_grad(sys.hamiltonian, u, h=1e-6)
    np.testing.assert_allclose(sys.field(u), sys.structure.apply(grad), rtol=1e-6, atol=1e-6)
    p = sys.params
    np.testing.assert_allclose(dy.kdv_variational_derivative(p["alpha"], p["beta"], p["dx"], u),
                               grad / p["dx"], rtol=1e-6, atol=1e-8)


def test_kdv_conserves_energy_and_mass():
    sys = dy.reference_system("kdv_semidiscrete")
    u0 = dy.kdv_initial_state(20, 0.1)
    tr = ig.dopri45(sys.field, u0, (0, 0.5), dense_times=np.linspace(0, 0.5, 51))
    H = sys.hamiltonian(tr.states)
    assert np.abs(H - H[0]).max() < 1e-9
    np.testing.assert_allclose(tr.states.sum(axis=1), u0.sum(), atol=1e-9)


def test_kdv_field_converges_to_continuum():
    # alpha u u_x + beta u_xxx with u = cos(pi x); error O(dx^2)
    errs = []
    for n in (40, 80, 160):
        dx = 2.0 / n
        x = dy.kdv_grid(n, dx)
        u = np.cos(np.pi * x)
        exact = -1.0 * u * (-np.pi * np.sin(np.pi * x)) + (-0.022 ** 2) * np.pi ** 3 * np.sin(np.pi * x)
        errs.append(np.abs(dy.kdv_field(-1.0, -0.022 ** 2, dx, u) - exact).max())
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.1)


def test_nondegeneracy_check():
    # H0(J) = J1^2/2 + J1 J2 + 2 J2^2 -> Hessian [[1, 1], [1, 4]], det 3
    h0 = lambda J: 0.5 * J[0] ** 2 + J[0] * J[1] + 2 * J[1] ** 2
    assert dy.nondegeneracy_check(h0, [0.3, -0.7]) == pytest.approx(3.0, rel=1e-6)
    assert dy.nondegeneracy_check(lambda J: J[0] + J[1], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-6)
