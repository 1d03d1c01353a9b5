"""
Learning mass-spring dynamics in the "wrong" coordinates
========================================================

The state is (q1, q2, v1, v2): positions and *velocities*, not momenta.
A plain HNN assumes du/dt = S grad H in whatever coordinates it is given,
so it cannot fit this data. Adding a learned coordinate map u = u_NN(x)
fixes that. A neural ODE can fit the data as well, but has no
conserved quantity built in.

Run with a larger budget via  ITERS=10000 python demos/mass_spring_coordinates.py
"""

import os

import numpy as np

from hnnkam import diagnostics as dg, dynamics as dy, integrators as ig, nn, training as tr

iters = int(os.environ.get("ITERS", 1500))
system = dy.reference_system("mass_spring")
print("masses and springs:", system.params)

# 30 trajectories x 50 points from standard-normal initial states
data = ig.generate_dataset(system, 30, (0, 5), 50, seed=0)
print(f"{len(data)} samples, input radius {data.input_radius:.3f}")

S = dy.canonical_symplectic(2)
loss = tr.LossConfig(2.0, "symplectic_gradient", S)
cfg = tr.TrainConfig(lr=1e-3, iterations=iters, batch_size=200, seed=0)

# naive HNN: one scalar network on (q, v)
h_naive, rep_naive = tr.train(nn.init_network(nn.Architecture(4, [50]), 1), data, loss, cfg)

# HNN composed with a learned coordinate transformation
h, cmap, rep_tr = tr.train_transformed(
    nn.init_network(nn.Architecture(4, [50]), 31),
    dy.CoordinateMap(nn.init_network(nn.Architecture(4, [50], output_dim=4, readout="vector"), 32)),
    data, loss, cfg)

# unstructured baseline: du/dt = f_NN(u)
f, rep_ode = tr.train_neural_ode(nn.init_network(nn.Architecture(4, [50], output_dim=4, readout="vector"), 3),
                                 data, loss, cfg)

print(f"\nfinal training loss after {iters} iterations")
for name, rep in (("naive HNN", rep_naive), ("coordinate transform", rep_tr), ("neural ODE", rep_ode)):
    print(f"  {name:22s} {rep.final_train_loss:.4g}")

# roll each model out from an unseen state and watch the true energy
u0 = np.array([0.5, -0.3, 0.2, 0.1])
times = np.linspace(0, 5, 201)
fields = {
    "naive HNN": lambda u: dy.hnn_vector_field(h_naive, S, u),
    "coordinate transform": lambda u: dy.transformed_vector_field(h, cmap, S, u),
    "neural ODE": lambda u: nn.forward(f, u),
}
truth = ig.dopri45(system.field, u0, (0, 5), dense_times=times)
print("\nrollout over [0, 5] from", u0)
for name, field in fields.items():
    try:
        traj = ig.dopri45(field, u0, (0, 5), dense_times=times)
    except ig.IntegrationError as exc:
        print(f"  {name:22s} integration failed: {exc}")
        continue
    err = np.linalg.norm(traj.states - truth.states, axis=1).max()
    drift = dg.energy_drift(traj, system.hamiltonian)["max_abs"]
    print(f"  {name:22s} max state error {err:.3g}   max |H - H0| {drift:.3g}")
