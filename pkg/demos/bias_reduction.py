"""
Errors in variables
===================

With measurement noise on both the regressors and the targets, least squares
shrinks the estimated dynamics towards zero. The total least-squares
projection removes most of that bias. Here the true system is
``x_{k+1} = 0.9 x_k`` observed at 18 dB SNR.
"""

import numpy as np

from tedmd.regression import SnapshotMatrices, edmd_fit, tedmd_fit, tedmd_project

rng = np.random.default_rng(1)


def noisy_snapshots(n_episodes=20, q=30, snr_db=18.0):
    x = rng.uniform(-1, 1, (n_episodes, 1)) * 0.9**np.arange(q + 1)
    sigma = np.std(x, axis=1, keepdims=True) * 10**(-snr_db / 20)
    y = x + sigma * rng.standard_normal(x.shape)
    return SnapshotMatrices(y[:, :-1].reshape(1, -1), y[:, 1:].reshape(1, -1),
                            n=1, m=0)


a_edmd, a_tedmd = [], []
for _ in range(200):
    S = noisy_snapshots()
    a_edmd.append(edmd_fit(S).A[0, 0])
    # Keeping one of the two singular directions is the scalar TLS fit.
    a_tedmd.append(tedmd_fit(tedmd_project(S, 1)).A[0, 0])

print(f'EDMD   mean a = {np.mean(a_edmd):.4f}')
print(f'TEDMD  mean a = {np.mean(a_tedmd):.4f}')
print(f'TEDMD closer in {np.mean(np.abs(np.subtract(a_tedmd, 0.9)) < np.abs(np.subtract(a_edmd, 0.9))):.0%} of trials')
