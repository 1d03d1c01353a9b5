"""Hamiltonian neural networks with certified error bounds.

Modules: ``nn`` (networks and exact gradients), ``dynamics`` (structure
matrices, learned and reference vector fields), ``integrators`` (Dormand-Prince
and datasets), ``training``, ``bounds`` (generalization / KAM chain),
``diagnostics`` and ``cli``.
"""

__version__ = "0.1.0"
