"""Acceptance criteria, one check per criterion.

Run under pytest (a PASS/FAIL line per criterion is printed in the terminal
summary) or directly with ``python tests/test_acceptance.py``.
"""

import functools
import json
import math
import pathlib
import sys
import tempfile
import time

import numpy as np
import pytest
from scipy.stats import binomtest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from conftest import identity_lifting, linear_episode, random_stable  # noqa: E402
from tedmd.data import Episode, NoiseSpec, add_noise_snr, measure_snr  # noqa: E402
from tedmd.evaluation import mae, rmse  # noqa: E402
from tedmd.experiment import Run, load_config  # noqa: E402
from tedmd.regression import (SnapshotMatrices, build_snapshots, edmd_fit,  # noqa: E402
                              load_model, tedmd_fit, tedmd_project)
from tedmd.stability import (DEFAULT_RHO_BAR, build_problem,  # noqa: E402
                             check_feasibility, fit_as, recover_A,
                             solve_constrained, spectral_radius)

RESULTS = {}


def criterion(number, budget_s):
    """Record outcome and runtime of a check under its criterion number."""

    def wrap(fn):

        @functools.wraps(fn)
        def run():
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as e:  # reported, then re-raised by the test
                RESULTS[number] = (False, f'{type(e).__name__}: {e}', 0.0)
                raise
            elapsed = time.perf_counter() - t0
            if elapsed > budget_s:
                ok = False
                detail += f'; runtime {elapsed:.1f}s over {budget_s}s budget'
            RESULTS[number] = (ok, detail, elapsed)
            return ok, detail

        return run

    return wrap


def linear_data(seed=0, q=500):
    rng = np.random.default_rng(seed)
    A = random_stable(2, rng, radius=0.9)
    B = rng.standard_normal((2, 1))
    ep = linear_episode(A, B, q, rng)
    return A, B, build_snapshots([ep], identity_lifting(2, 1))


@criterion(1, 1.0)
def check_exact_recovery():
    A, B, S = linear_data()
    err = np.linalg.norm(edmd_fit(S).U - np.hstack([A, B]))
    return err <= 1e-8, f'||U - [A B]||_F = {err:.2e} (tol 1e-8)'


@criterion(2, 1.0)
def check_projection_identity():
    _, _, S = linear_data()
    r = np.linalg.matrix_rank(np.vstack([S.Psi, S.ThetaPlus]))
    err = np.linalg.norm(tedmd_fit(tedmd_project(S, r)).U - edmd_fit(S).U)
    return err <= 1e-8, f'r = {r}, ||U_tedmd - U_edmd||_F = {err:.2e}'


def eiv_trial(rng, n_ep=20, q=30, snr_db=18.0):
    # Decaying scalar episodes; measurement noise on every sample.
    x = rng.uniform(-1, 1, (n_ep, 1)) * 0.9**np.arange(q + 1)
    sigma = np.std(x, axis=1, keepdims=True) * 10**(-snr_db / 20)
    y = x + rng.standard_normal(x.shape) * sigma
    return SnapshotMatrices(y[:, :-1].reshape(1, -1), y[:, 1:].reshape(1, -1),
                            1, 0)


@criterion(3, 30.0)
def check_bias_reduction():
    rng = np.random.default_rng(2024)
    err_e, err_t = [], []
    for _ in range(200):
        S = eiv_trial(rng)
        err_e.append(abs(edmd_fit(S).A[0, 0] - 0.9))
        err_t.append(abs(tedmd_fit(tedmd_project(S, 1)).A[0, 0] - 0.9))
    err_e, err_t = np.array(err_e), np.array(err_t)
    wins = int(np.sum(err_t < err_e))
    n = int(np.sum(err_t != err_e))
    p = binomtest(wins, n, 0.5, alternative='greater').pvalue
    med_e, med_t = np.median(err_e), np.median(err_t)
    ok = med_t < med_e and p < 0.05
    return ok, (f'median |a-0.9|: tedmd {med_t:.2e} vs edmd {med_e:.2e}; '
                f'{wins}/{n} wins, sign test p = {p:.1e}')


class DefaultRuns:
    """Two independent runs of the default experiment (simulate, fit, eval)."""

    def __init__(self):
        self.tmp = tempfile.TemporaryDirectory(prefix='tedmd-acc-')
        self.dirs = []
        self.times = []
        for name in ('a', 'b'):
            out = pathlib.Path(self.tmp.name) / name
            t0 = time.perf_counter()
            run = Run(load_config(None, {'output_dir': str(out)}))
            run.simulate()
            status = run.fit()
            self.t_fit = time.perf_counter() - t0
            run.evaluate()
            run.write_manifest()
            self.times.append(time.perf_counter() - t0)
            self.dirs.append(out)
            self.status = status


@functools.lru_cache(maxsize=1)
def default_runs():
    return DefaultRuns()


@criterion(4, 300.0)
def check_stability_grid():
    runs = default_runs()
    failed = [k for k, v in runs.status.items() if v['status'] != 'ok']
    worst, bad = 0.0, []
    count = 0
    for path in sorted((runs.dirs[0] / 'models').glob('*_as_*.json')):
        model = load_model(path)
        rho = spectral_radius(model.A)
        worst = max(worst, rho)
        count += 1
        violated = check_feasibility(model.fit_meta['constraint_residuals'])
        if rho > DEFAULT_RHO_BAR + 1e-6 or violated:
            bad.append(f'{path.stem}: rho={rho:.8f} {violated}')
    ok = not failed and not bad and count > 0
    return ok, (f'{count} constrained fits, max rho(A) = {worst:.8f}, '
                f'failed cells {failed}, violations {bad}')


@criterion(5, 30.0)
def check_inactive_equivalence():
    rng = np.random.default_rng(11)
    A = random_stable(2, rng, radius=0.9)
    B = rng.standard_normal((2, 1))
    eps = [linear_episode(A, B, 500, rng, i) for i in range(3)]
    S = build_snapshots(eps, identity_lifting(2, 1))
    r = np.linalg.matrix_rank(np.vstack([S.Psi, S.ThetaPlus]))
    P = tedmd_project(S, r)
    U, U_as = tedmd_fit(P).U, fit_as(P).U
    rel = np.linalg.norm(U_as - U) / np.linalg.norm(U)
    return rel <= 1e-3, f'relative ||U_as - U||_F = {rel:.2e} (tol 1e-3)'


@criterion(6, 5.0)
def check_scalar_boundary():
    spec = build_problem(np.array([[1.0]]), np.array([[1.2]]))
    a = recover_A(solve_constrained(spec))[0, 0]
    # Brute force over the feasible set |a| <= rho_bar.
    grid = np.linspace(-DEFAULT_RHO_BAR, DEFAULT_RHO_BAR, 400_001)
    a_bf = grid[np.argmin((1.2 - grid)**2)]
    ok = abs(a - DEFAULT_RHO_BAR) <= 1e-3 and abs(a - a_bf) <= 1e-3
    return ok, f'A = {a:.8f}, brute force {a_bf:.8f}, target {DEFAULT_RHO_BAR}'


@criterion(7, 600.0)
def check_figure_ordering():
    runs = default_runs()
    m = json.loads((runs.dirs[0] / 'eval' / 'metrics.json').read_text())
    t_as = m['methods']['tedmd_as']['snr18']['rmse']
    e_as = m['methods']['edmd_as']['snr18']['rmse']
    return t_as < e_as, (f'RMSE at 18 dB: tedmd_as {t_as:.4f} vs edmd_as '
                         f'{e_as:.4f}; pipeline {runs.times[0]:.0f}s')


@criterion(8, 900.0)
def check_sweep_crossover():
    with tempfile.TemporaryDirectory(prefix='tedmd-sweep-') as tmp:
        cfg = load_config(None, {
            'output_dir': tmp,
            'methods': ['edmd_as', 'tedmd_as'],
            'sweep': {'snr_db': [14, 18, 23, 28, 33]},
        })
        run = Run(cfg)
        run.simulate()
        curves = run.sweep()
    rows = []
    ok = True
    for (s, e), (_, t) in zip(curves['edmd_as'], curves['tedmd_as']):
        rows.append(f'{s:g}dB {t["U"]:.3g}/{e["U"]:.3g}')
        if s <= 18 and not t['U'] <= e['U']:
            ok = False
    return ok, 'U error tedmd_as/edmd_as: ' + ', '.join(rows)


def hand_mae(truth, est):
    total = 0.0
    for a, b in zip(truth, est):
        total += sum(abs(x - y) for x, y in zip(a, b))
    return total / len(truth)


def hand_rmse(truth, est):
    total = 0.0
    for a, b in zip(truth, est):
        total += sum((x - y)**2 for x, y in zip(a, b))
    return math.sqrt(total / len(truth))


@criterion(9, 60.0)
def check_metrics_and_snr():
    rng = np.random.default_rng(9)
    pairs = [
        (np.zeros((2, 2)), np.array([[3.0, 0.0], [0.0, 4.0]])),
        (np.ones((1, 3)), np.ones((1, 3))),
        (np.arange(6.0).reshape(3, 2), np.arange(6.0).reshape(3, 2)[::-1]),
        (rng.standard_normal((50, 2)), rng.standard_normal((50, 2))),
        (rng.uniform(-5, 5, (7, 4)), rng.uniform(-5, 5, (7, 4))),
    ]
    metric_err = max(
        max(abs(mae(t, e) - hand_mae(t, e)), abs(rmse(t, e) - hand_rmse(t, e)))
        for t, e in pairs)
    t = np.arange(10_000)
    states = np.column_stack([np.sin(2 * np.pi * t / 250),
                              0.3 * np.cos(2 * np.pi * t / 170)])
    clean = Episode(0, 0.01, states, np.zeros((10_000, 0)))
    worst = 0.0
    for i, snr in enumerate((0.0, 10.0, 18.0, 28.0, 40.0)):
        noisy = add_noise_snr(clean, NoiseSpec(snr, seed=i))
        worst = max(worst, float(np.max(np.abs(measure_snr(clean, noisy)
                                               - snr))))
    ok = metric_err <= 1e-12 and worst <= 0.5
    return ok, (f'max metric deviation {metric_err:.1e} (tol 1e-12); max SNR '
                f'round-trip error {worst:.3f} dB (tol 0.5)')


@criterion(10, 600.0)
def check_determinism():
    a, b = default_runs().dirs
    names = ['manifest.json'] + sorted(
        p.relative_to(a).as_posix() for p in (a / 'data').glob('*.csv'))
    differ = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    return not differ, (f'{len(names)} files compared, '
                        f'{len(differ)} differ {differ}')


CHECKS = [
    check_exact_recovery, check_projection_identity, check_bias_reduction,
    check_stability_grid, check_inactive_equivalence, check_scalar_boundary,
    check_figure_ordering, check_sweep_crossover, check_metrics_and_snr,
    check_determinism
]


def format_results():
    lines = []
    for number in sorted(RESULTS):
        ok, detail, elapsed = RESULTS[number]
        lines.append(f'criterion {number:2d}: {"PASS" if ok else "FAIL"} '
                     f'({elapsed:.1f}s) {detail}')
    return lines


@pytest.mark.parametrize('check', CHECKS, ids=lambda c: c.__name__[6:])
def test_criterion(check):
    ok, detail = check()
    print(detail)
    assert ok, detail


if __name__ == '__main__':
    for check in CHECKS:
        try:
            check()
        except Exception:
            pass
    print('\n'.join(format_results()))
    sys.exit(0 if all(r[0] for r in RESULTS.values()) else 1)
