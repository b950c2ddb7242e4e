"""
Duffing oscillator comparison
=============================

Runs the default experiment: 20 forced training episodes, 2 free-decay test
episodes, measurement noise at 18 and 28 dB, and all four methods. Outputs
(CSV and JSON) land in ``duffing_out/``; the same run is available as
``tedmd run --out duffing_out``.
"""

import sys

from tedmd.evaluation import eig_report
from tedmd.experiment import Run, load_config
from tedmd.regression import load_model

out = sys.argv[1] if len(sys.argv) > 1 else 'duffing_out'
run = Run(load_config(None, {'output_dir': out}))
run.simulate()
run.fit()
report = run.evaluate()
run.write_manifest()

print('method     data     RMSE    rho(A)')
for method, cells in report['methods'].items():
    for label, entry in cells.items():
        print(f'{method:10s} {label:8s} {entry["rmse"]:.4f}  '
              f'{entry["spectral_radius"]:.6f}')

# Unconstrained fits can leave the unit circle; the constrained ones cannot.
for method in ('tedmd', 'tedmd_as'):
    rep = eig_report(load_model(run.out / 'models' / f'{method}_snr18.json'))
    print(f'{method} at 18 dB is {"stable" if rep.stable else "unstable"}')
