"""
From a trained Hamiltonian network to a KAM probability
=======================================================

Train a small HNN on the harmonic oscillator, read off its weight norms,
and push them through covering number -> Rademacher complexity ->
generalization gap -> L-infinity error of H -> probability that
invariant tori survive.
"""

import numpy as np

from hnnkam import bounds as bd, dynamics as dy, integrators as ig, nn, training as tr

system = dy.reference_system("harmonic_oscillator")
data = ig.generate_dataset(system, 50, (0, 6), 40, seed=2)
loss = tr.LossConfig(4.0, "symplectic_gradient", dy.canonical_symplectic(1))
net, report = tr.train(nn.init_network(nn.Architecture(2, [16]), 0), data, loss,
                       tr.TrainConfig(lr=3e-3, iterations=1500, batch_size=100, seed=0))
print(f"trained on {len(data)} samples, final loss {report.final_train_loss:.3g}")

# p = 4 > 2M = 2, so the L-infinity bound on H applies
inputs = bd.inputs_for(net, data, report.final_train_loss, p=4.0, delta=0.05)
prof = inputs.profile
print("layer norms:", np.round(prof.layer_norms, 3), " input radius:", round(prof.input_radius, 3))

rep = bd.bound_report(inputs)
print()
print(rep.table())

# the covering bound is loose: the number of samples needed for a useful guarantee is large
for n in (10**3, 10**5, 10**7, 10**9):
    r = bd.rademacher_bound(rep.K, rep.c_loss, n)[2]
    print(f"n = {n:>10d}: Rademacher bound {r:.3g}")
