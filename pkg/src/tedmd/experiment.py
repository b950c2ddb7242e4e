"""End-to-end experiment pipeline driven by a JSON config.

Output directory layout::

    data/      train_clean.csv, test_clean.csv, train_snr18.csv, ...
    models/    {method}_{label}.json, status.json
    sdp/       {method}_{label}.txt              (with ``dump_sdp``)
    eval/      eigs_*.csv, pred_*_ep*.csv, metrics.json, relative_error.csv
    sweep/     relerr_{method}.csv
    manifest.json

``label`` is ``clean`` or ``snr<value>``. Models fit on clean data are the
reference ("true") models for relative errors.
"""

import concurrent.futures
import copy
import hashlib
import json
import logging
import math
import pathlib
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import data as data_mod
from . import evaluation, regression, stability
from .data import DuffingParams, Episode
from .errors import (ConfigError, DataError, SolverError, TedmdError,
                     UnimplementedMethodError)
from .lifting import LiftingConfig, make_lifting

log = logging.getLogger(__name__)

RESERVED_METHODS = ('fbedmd', 'fbedmd_as')

DEFAULT_CONFIG: Dict[str, Any] = {
    'seed': 1,
    'dataset': {
        'source': 'duffing',
        'duffing': {
            'mass': 0.1,
            'damping': 0.01,
            'k1': 0.1,
            'k2': 0.001,
        },
        'dt': 0.01,
        'steps': 2100,
        'n_train': 20,
        'n_test': 2,
        'x0_box': [[-1.0, 1.0], [-1.0, 1.0]],
        'forcing': {
            'amplitude': 0.1,
            'n_harmonics': 10,
            'base_period': 21.0,
        },
        'test_forcing': 'zero',
        'train_csv': None,
        'test_csv': None,
    },
    'lifting': {
        'monomial_degree': 2,
        'n_rbf': 10,
        'alpha': 0.1,
        'delta': 0.001,
        'include_constant': False,
    },
    'noise': {
        'snr_db': [18, 28],
    },
    'methods': ['edmd', 'edmd_as', 'tedmd', 'tedmd_as'],
    'solver': {
        'rho_bar': stability.DEFAULT_RHO_BAR,
        'epsilon': None,
        'name': 'CLARABEL',
        'tol': 1e-8,
        'abs_tol': 1e-10,
        'max_iter': 200,
    },
    'truncation': {
        'r': None,
        'kappa_max': 100.0,
    },
    'sweep': {
        'snr_db': [14, 18, 23, 28, 33],
    },
    'output_dir': 'out',
}


def _merge(base: Dict[str, Any], over: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Optional[Union[str, pathlib.Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Read a config file, fill defaults, apply overrides and validate."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as f:
                cfg = _merge(cfg, json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f'Cannot read config `{path}`: {e}') from None
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def parse_snr(v: Any) -> float:
    """SNR entry to dB; ``"clean"`` maps to ``inf``."""
    if isinstance(v, str) and v.lower() in ('clean', 'inf'):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f'Invalid SNR entry {v!r}.') from None


def snr_label(snr_db: float) -> str:
    return 'clean' if math.isinf(snr_db) else f'snr{snr_db:g}'


def validate_config(cfg: Dict[str, Any]) -> None:
    methods = cfg.get('methods')
    if not methods:
        raise ConfigError('At least one method is required.')
    unknown = [
        m for m in methods
        if m not in regression.METHODS and m not in RESERVED_METHODS
    ]
    if unknown:
        raise ConfigError(f'Unknown methods {unknown}; choose from '
                          f'{list(regression.METHODS)}.')
    ds = cfg['dataset']
    if ds['source'] not in ('duffing', 'csv'):
        raise ConfigError('`dataset.source` must be `duffing` or `csv`.')
    if ds['source'] == 'csv' and not ds.get('train_csv'):
        raise ConfigError('`dataset.train_csv` is required for CSV data.')
    if ds['source'] == 'duffing':
        if not ds['dt'] > 0 or ds['steps'] < 1:
            raise ConfigError('`dataset.dt` and `dataset.steps` must be '
                              'positive.')
        if ds['n_train'] < 1 or ds['n_test'] < 0:
            raise ConfigError('Need at least one training episode.')
        if ds['test_forcing'] not in ('zero', 'multisine'):
            raise ConfigError('`dataset.test_forcing` must be `zero` or '
                              '`multisine`.')
    if not cfg['noise']['snr_db']:
        raise ConfigError('`noise.snr_db` must not be empty.')
    for v in list(cfg['noise']['snr_db']) + list(cfg['sweep']['snr_db']):
        parse_snr(v)
    if not 0 < cfg['solver']['rho_bar'] <= 1:
        raise ConfigError('`solver.rho_bar` must lie in (0, 1].')
    tr = cfg['truncation']
    if tr.get('r') is None and not tr.get('kappa_max', 0) > 1:
        raise ConfigError('`truncation.kappa_max` must exceed 1.')


def derive_seeds(seed: int) -> Dict[str, int]:
    """Independent seeds for data generation, noise and RBF centers."""
    children = np.random.SeedSequence(seed).spawn(3)
    names = ('data', 'noise', 'centers')
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def generate_duffing(cfg: Dict[str, Any]) -> Tuple[List[Episode],
                                                   List[Episode]]:
    """Clean training and test episodes for the Duffing dataset."""
    ds = cfg['dataset']
    params = DuffingParams(**ds['duffing'])
    seeds = derive_seeds(cfg['seed'])
    rng = np.random.default_rng(seeds['data'])
    box = np.asarray(ds['x0_box'], dtype=float)
    dt, steps = ds['dt'], ds['steps']
    fc = ds['forcing']

    def episode(i: int, forced: bool) -> Episode:
        x0 = rng.uniform(box[:, 0], box[:, 1])
        f_seed = int(rng.integers(2**31))
        if forced:
            f = data_mod.make_multisine(fc['amplitude'], fc['n_harmonics'],
                                        fc['base_period'], dt, steps, f_seed)
        else:
            f = np.zeros(steps + 1)
        return data_mod.simulate_duffing(params, f, x0, dt, steps, i)

    n_train = ds['n_train']
    train = [episode(i, True) for i in range(n_train)]
    test_forced = ds['test_forcing'] == 'multisine'
    test = [episode(n_train + i, test_forced) for i in range(ds['n_test'])]
    return train, test


class Run:
    """Output directory of one experiment, tracking emitted files."""

    def __init__(self, cfg: Dict[str, Any],
                 out: Optional[Union[str, pathlib.Path]] = None) -> None:
        self.cfg = cfg
        self.out = pathlib.Path(out or cfg['output_dir'])
        self.files: Dict[str, str] = {}

    def path(self, *parts: str) -> pathlib.Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def emitted(self, path: pathlib.Path) -> None:
        rel = path.relative_to(self.out).as_posix()
        self.files[rel] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write_json(self, obj: Any, *parts: str) -> pathlib.Path:
        p = self.path(*parts)
        p.write_text(
            json.dumps(regression._jsonable(obj), indent=1, sort_keys=True)
            + '\n')
        self.emitted(p)
        return p

    def write_manifest(self) -> pathlib.Path:
        """Merge emitted files into ``manifest.json``."""
        p = self.path('manifest.json')
        files = {}
        if p.exists():
            try:
                files = json.loads(p.read_text()).get('files', {})
            except json.JSONDecodeError:
                files = {}
        files.update(self.files)
        cfg = {k: v for k, v in self.cfg.items() if k != 'output_dir'}
        manifest = {
            'config': cfg,
            'seeds': derive_seeds(self.cfg['seed']),
            'files': dict(sorted(files.items())),
        }
        p.write_text(
            json.dumps(regression._jsonable(manifest), indent=1,
                       sort_keys=True) + '\n')
        return p

    # Data -----------------------------------------------------------------

    def data_file(self, split: str, label: str) -> pathlib.Path:
        return self.out / 'data' / f'{split}_{label}.csv'

    def _snr_points(self) -> List[float]:
        pts = [parse_snr(v) for v in self.cfg['noise']['snr_db']]
        return [v for v in pts if not math.isinf(v)]

    def write_datasets(self, train: Sequence[Episode],
                       test: Sequence[Episode]) -> None:
        seed = derive_seeds(self.cfg['seed'])['noise']
        sets = [('clean', train, test)]
        for snr in self._snr_points():
            label = snr_label(snr)
            sets.append((label, data_mod.noisy_copies(train, snr, seed),
                         data_mod.noisy_copies(test, snr, seed + 1)))
        for label, tr, te in sets:
            for split, eps in (('train', tr), ('test', te)):
                p = self.path('data', f'{split}_{label}.csv')
                data_mod.save_episodes(eps, p)
                self.emitted(p)

    def simulate(self) -> None:
        if self.cfg['dataset']['source'] != 'duffing':
            raise ConfigError('`simulate` needs `dataset.source = duffing`.')
        train, test = generate_duffing(self.cfg)
        self.write_datasets(train, test)

    def ensure_data(self) -> None:
        """Create the data directory from external CSVs if needed."""
        if self.data_file('train', 'clean').exists():
            return
        ds = self.cfg['dataset']
        if ds['source'] == 'duffing':
            raise DataError(f'No dataset in `{self.out / "data"}`; run '
                            '`simulate` first.')
        train = read_episodes(ds['train_csv'])
        test = read_episodes(ds['test_csv']) if ds.get('test_csv') else []
        self.write_datasets(train, test)

    def load(self, split: str, label: str) -> List[Episode]:
        return read_episodes(self.data_file(split, label))

    def lifting(self) -> LiftingConfig:
        """Lifting shared by every fit; centers cover the clean training
        data."""
        train = self.load('train', 'clean')
        lc = self.cfg['lifting']
        return make_lifting(np.vstack([ep.states for ep in train]),
                            input_dim=train[0].n_inputs,
                            monomial_degree=lc['monomial_degree'],
                            n_rbf=lc['n_rbf'],
                            alpha=lc['alpha'],
                            delta=lc['delta'],
                            include_constant=lc['include_constant'],
                            seed=derive_seeds(self.cfg['seed'])['centers'])

    # Fitting --------------------------------------------------------------

    def _methods(self) -> Tuple[List[str], List[str]]:
        methods = list(self.cfg['methods'])
        real = [m for m in methods if m not in RESERVED_METHODS]
        reserved = [m for m in methods if m in RESERVED_METHODS]
        return real, reserved

    def fit(self, dump_sdp: bool = False, jobs: int = 1) -> Dict[str, Any]:
        """Fit every (method, data label) cell.

        Returns the per-cell status table, also written to
        ``models/status.json``.
        """
        real, reserved = self._methods()
        if not real:
            raise UnimplementedMethodError(
                f'Methods {reserved} are reserved but not implemented.')
        self.ensure_data()
        lifter = self.lifting()
        labels = ['clean'] + [snr_label(s) for s in self._snr_points()]
        cells = [(m, lb) for lb in labels for m in real]
        snapshots = {
            lb: regression.build_snapshots(self.load('train', lb), lifter)
            for lb in labels
        }
        jobs_args = [(self.cfg, m, snapshots[lb], lifter,
                      str(self.path('sdp', f'{m}_{lb}.txt'))
                      if dump_sdp and m.endswith('_as') else None)
                     for m, lb in cells]
        results = _map(_fit_cell, jobs_args, jobs)
        status = {}
        for (m, lb), (model, err) in zip(cells, results):
            key = f'{m}_{lb}'
            if model is not None:
                p = self.path('models', f'{key}.json')
                regression.save_model(model, p)
                self.emitted(p)
                status[key] = {'status': 'ok'}
                sdp = self.out / 'sdp' / f'{key}.txt'
                if dump_sdp and sdp.exists():
                    self.emitted(sdp)
            else:
                status[key] = err
        for m in reserved:
            for lb in labels:
                status[f'{m}_{lb}'] = {
                    'status': 'unimplemented',
                    'message': 'forward-backward EDMD is not implemented',
                }
        self.write_json(status, 'models', 'status.json')
        return status

    # Evaluation -----------------------------------------------------------

    def evaluate(self) -> Dict[str, Any]:
        """Eigenvalues, test rollouts, metrics and relative errors for every
        fitted model."""
        real, _ = self._methods()
        labels = ['clean'] + [snr_label(s) for s in self._snr_points()]
        test = self.load('test', 'clean')
        metrics: Dict[str, Any] = {}
        missing = []
        models = {}
        for m in real:
            for lb in labels:
                p = self.out / 'models' / f'{m}_{lb}.json'
                if not p.exists():
                    missing.append(p.relative_to(self.out).as_posix())
                    continue
                models[m, lb] = regression.load_model(p)
        rel_rows = []
        for (m, lb), model in models.items():
            rep = evaluation.eig_report(model)
            p = self.path('eval', f'eigs_{m}_{lb}.csv')
            evaluation.write_eig_csv(rep, p)
            self.emitted(p)
            per_ep = []
            for ep in test:
                res = evaluation.predict(model, ep.states[0], ep.inputs,
                                         ep.n_steps, reference=ep.states)
                p = self.path('eval', f'pred_{m}_{lb}_ep{ep.id}.csv')
                evaluation.write_prediction_csv(res, ep.dt, p)
                self.emitted(p)
                r = evaluation.metric_report(res, m)
                per_ep.append({
                    'episode': ep.id,
                    'mae': r.mae,
                    'rmse': r.rmse,
                    'diverged_at': res.diverged_at,
                })
            entry = {
                'spectral_radius': float(rep.moduli[0]),
                'stable': rep.stable,
                'episodes': per_ep,
            }
            if per_ep:
                entry['mae'] = float(np.mean([e['mae'] for e in per_ep]))
                entry['rmse'] = float(np.mean([e['rmse'] for e in per_ep]))
            metrics.setdefault(m, {})[lb] = entry
            true = models.get((m, 'clean'))
            if true is not None:
                rel = evaluation.relative_errors(model, true)
                snr = math.inf if lb == 'clean' else float(lb[3:])
                rel_rows.append((m, snr, rel))
        self.write_json({'methods': metrics, 'missing': missing}, 'eval',
                        'metrics.json')
        p = self.path('eval', 'relative_error.csv')
        _write_rel_csv(rel_rows, p, with_method=True)
        self.emitted(p)
        return {'methods': metrics, 'missing': missing}

    def sweep(self, jobs: int = 1) -> Dict[str, List[Tuple[float, Dict]]]:
        """Relative Koopman matrix error of every method over an SNR sweep."""
        points = [parse_snr(v) for v in self.cfg['sweep']['snr_db']]
        if len(points) < 2:
            raise ConfigError('The sweep needs at least two SNR points.')
        real, reserved = self._methods()
        if not real:
            raise UnimplementedMethodError(
                f'Methods {reserved} are reserved but not implemented.')
        self.ensure_data()
        lifter = self.lifting()
        clean = self.load('train', 'clean')
        seed = derive_seeds(self.cfg['seed'])['noise']
        labels = ['clean'] + [snr_label(s) for s in points if not math.isinf(s)]
        snaps = {'clean': regression.build_snapshots(clean, lifter)}
        for s in points:
            if not math.isinf(s):
                snaps[snr_label(s)] = regression.build_snapshots(
                    data_mod.noisy_copies(clean, s, seed), lifter)
        cells = [(m, lb) for lb in labels for m in real]
        results = _map(_fit_cell, [(self.cfg, m, snaps[lb], lifter, None)
                                   for m, lb in cells], jobs)
        fitted = dict(zip(cells, results))
        curves = {}
        for m in real:
            rows = []
            true, _ = fitted[m, 'clean']
            for s in points:
                model, _ = fitted[m, snr_label(s)]
                if model is None or true is None:
                    nan = float('nan')
                    rel = {'U': nan, 'A': nan, 'B': nan}
                else:
                    rel = evaluation.relative_errors(model, true)
                rows.append((s, rel))
            curves[m] = rows
            p = self.path('sweep', f'relerr_{m}.csv')
            _write_rel_csv([(m, s, rel) for s, rel in rows], p,
                           with_method=False)
            self.emitted(p)
        status = {
            f'{m}_{lb}': {'status': 'ok'} if res[0] is not None else res[1]
            for (m, lb), res in fitted.items()
        }
        self.write_json(status, 'sweep', 'status.json')
        return curves


def read_episodes(path) -> List[Episode]:
    """Load an episode CSV, mapping I/O failures to :class:`DataError`."""
    try:
        return data_mod.load_episodes(path)
    except OSError as e:
        raise DataError(f'Cannot read episodes from `{path}`: {e}') from None


def _write_rel_csv(rows, path: pathlib.Path, with_method: bool) -> None:
    header = (['method'] if with_method else []) + ['snr_db', 'U', 'A', 'B']
    lines = [','.join(header)]
    for m, snr, rel in rows:
        cells = [m] if with_method else []
        cells += ['clean' if math.isinf(snr) else repr(float(snr))]
        cells += [repr(float(rel[k])) for k in ('U', 'A', 'B')]
        lines.append(','.join(cells))
    path.write_text('\n'.join(lines) + '\n')


def _map(fn, args: List[tuple], jobs: int) -> List[Any]:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args)))


def solver_settings(cfg: Dict[str, Any]) -> stability.SolverSettings:
    sc = cfg['solver']
    return stability.SolverSettings(solver=sc['name'],
                                    tol=sc['tol'],
                                    abs_tol=sc['abs_tol'],
                                    max_iter=sc['max_iter'])


def fit_method(cfg: Dict[str, Any],
               method: str,
               S: regression.SnapshotMatrices,
               lifter: LiftingConfig,
               dump_path: Optional[str] = None) -> regression.KoopmanModel:
    """Fit one method on prepared snapshots according to the config."""
    if method in RESERVED_METHODS:
        raise UnimplementedMethodError(f'Method `{method}` is not implemented.')
    rho, eps = cfg['solver']['rho_bar'], cfg['solver']['epsilon']
    if method == 'edmd':
        return regression.edmd_fit(S, lifter)
    if method == 'edmd_as':
        return stability.fit_as(S, lifter, rho, eps, solver_settings(cfg),
                                dump_path)
    tr = cfg['truncation']
    if tr.get('r') is not None:
        r = int(tr['r'])
    else:
        r, _, _ = regression.choose_truncation(S, tr['kappa_max'])
    P = regression.tedmd_project(S, r)
    if method == 'tedmd':
        return regression.tedmd_fit(P, lifter)
    if method == 'tedmd_as':
        return stability.fit_as(P, lifter, rho, eps, solver_settings(cfg),
                                dump_path)
    raise ConfigError(f'Unknown method `{method}`.')


def _fit_cell(cfg, method, S, lifter, dump_path):
    # Failures are returned as data so one cell never aborts a sweep.
    try:
        return fit_method(cfg, method, S, lifter, dump_path), None
    except SolverError as e:
        return None, {
            'status': 'solver_failure',
            'message': str(e),
            'residuals': e.residuals,
        }
    except TedmdError as e:
        return None, {'status': 'error', 'message': str(e)}
