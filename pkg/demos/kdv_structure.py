"""
Structure-preserving semi-discrete KdV
======================================

On a periodic grid, u_t = D (alpha u^2/2 + beta D2 u) is a skew-gradient
system: D is skew, so the discrete energy H is conserved, and so is
the mass sum(u). Swap D for the negative
semidefinite D2 and the same energy can only decrease.
"""

import numpy as np

from hnnkam import diagnostics as dg, dynamics as dy, integrators as ig, nn

system = dy.reference_system("kdv_semidiscrete")
n, dx = system.dim, system.params["dx"]
print(f"grid: {n} points, dx = {dx}, alpha = {system.params['alpha']}, beta = {system.params['beta']:.6g}")

D = dy.central_difference(n, dx)
print("D skew:", np.allclose(D.matrix, -D.matrix.T))
print("D2 eigenvalues <= 0:", np.linalg.eigvalsh(dy.second_difference(n, dx).matrix).max() <= 1e-12)

# integrate the true semi-discrete equation from u0 = cos(pi x)
u0 = dy.kdv_initial_state(n, dx)
traj = ig.dopri45(system.field, u0, (0, 2), dense_times=np.linspace(0, 2, 201))
drift = dg.energy_drift(traj, system.hamiltonian)
print(f"\nover [0, 2]: max |H - H0| = {drift['max_abs']:.2e}, "
      f"max |sum u - sum u0| = {np.abs(traj.states.sum(axis=1) - u0.sum()).max():.2e}")
print(f"sum u^2 grows from {np.sum(u0 ** 2):.2f} to {np.sum(traj.states[-1] ** 2):.2f} (not conserved)")

# at 20 points the orbit steepens until the explicit solver gives up
try:
    ig.dopri45(system.field, u0, (0, 11))
except ig.IntegrationError as exc:
    print("integrating to t = 11 fails:", exc)

# the same laws hold for any learned scalar H_NN
net = nn.init_network(nn.Architecture(n, [32]), 0)
grad = lambda u: nn.input_gradient(net, u)
rng = np.random.default_rng(1)
skew = max(abs(dy.energy_rate(grad, lambda u: dy.hnn_vector_field(net, D, u), u)) for u in rng.standard_normal((50, n)))
G = dy.second_difference(n, dx)
diss = max(dy.energy_rate(grad, lambda u: dy.hnn_vector_field(net, G, u), u) for u in rng.standard_normal((50, n)))
print(f"\nlearned H with D : max |dH/dt| = {skew:.1e}")
print(f"learned H with D2: max  dH/dt  = {diss:.1e} (never positive)")
