"""
Recovering a linear system
==========================

On noiseless data from a linear system, EDMD with identity lifting recovers
``[A B]`` to machine precision, and TEDMD without truncation gives the same
answer.
"""

import numpy as np

from tedmd.data import Episode
from tedmd.lifting import LiftingConfig
from tedmd.regression import build_snapshots, edmd_fit, tedmd_fit, tedmd_project

rng = np.random.default_rng(0)
A = np.array([[0.9, 0.2], [-0.1, 0.8]])
B = np.array([[0.0], [1.0]])

# A short multisine input keeps the data persistently exciting.
q = 300
t = np.arange(q + 1)
u = sum(np.sin(2 * np.pi * h * t / 97 + rng.uniform(0, 6)) for h in range(1, 6))
x = np.zeros((q + 1, 2))
for k in range(q):
    x[k + 1] = A @ x[k] + B[:, 0] * u[k]
episode = Episode(id=0, dt=1.0, states=x, inputs=u[:, None])

# Degree-1 monomials and no RBFs: the lifted state is just x.
lifter = LiftingConfig(state_dim=2, input_dim=1, monomial_degree=1)
S = build_snapshots([episode], lifter)

edmd = edmd_fit(S, lifter)
print('EDMD error  ', np.linalg.norm(edmd.U - np.hstack([A, B])))

# The stacked matrix [Psi; Theta+] has rank n + m = 3 here.
tedmd = tedmd_fit(tedmd_project(S, 3), lifter)
print('TEDMD - EDMD', np.linalg.norm(tedmd.U - edmd.U))
