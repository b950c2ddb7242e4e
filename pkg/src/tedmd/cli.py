"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 solver failure,
5 only unimplemented methods requested.
"""

import argparse
import logging
import pathlib
import sys
from typing import List, Optional

from . import evaluation, regression
from .errors import (ConfigError, DataError, SolverError,
                     UnimplementedMethodError)
from .experiment import Run, load_config, read_episodes

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4
EXIT_UNIMPLEMENTED = 5

log = logging.getLogger('tedmd')


def _common(suppress: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global flags with suppressed defaults so a flag
    # given before the subcommand is not reset by the subparser.
    def d(v):
        return argparse.SUPPRESS if suppress else v

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=pathlib.Path, default=d(None),
                        help='JSON experiment config; defaults are used for '
                        'missing keys')
    common.add_argument('--out', type=pathlib.Path, default=d(None),
                        help='output directory (overrides `output_dir`)')
    common.add_argument('--seed', type=int, default=d(None),
                        help='master seed (overrides `seed`)')
    common.add_argument('--jobs', type=int, default=d(1),
                        help='worker processes for independent fit cells')
    common.add_argument('--dump-sdp', action='store_true', default=d(False),
                        help='write the SDP data of constrained fits to sdp/')
    common.add_argument('-v', '--verbose', action='store_true',
                        default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(suppress=True)
    parser = argparse.ArgumentParser(
        prog='tedmd',
        description='Koopman system identification experiments.',
        parents=[_common(suppress=False)])
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('simulate', parents=[common],
                   help='generate clean and noisy Duffing datasets')
    sub.add_parser('fit', parents=[common],
                   help='fit every method at every SNR point')
    p = sub.add_parser('predict', parents=[common],
                       help='roll a model forward over episodes')
    p.add_argument('--model', type=pathlib.Path, required=True)
    p.add_argument('--episodes', type=pathlib.Path,
                   help='episode CSV (default: data/test_clean.csv)')
    sub.add_parser('eval', parents=[common],
                   help='metrics, eigenvalues and relative errors')
    sub.add_parser('sweep-snr', parents=[common],
                   help='relative Koopman matrix error over an SNR sweep')
    p = sub.add_parser('eigs', parents=[common],
                       help='eigenvalue CSVs for model files')
    p.add_argument('--model', type=pathlib.Path, nargs='*',
                   help='model JSON files (default: every model in models/)')
    sub.add_parser('run', parents=[common],
                   help='simulate, fit and eval in one go')
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    over = {}
    if args.seed is not None:
        over['seed'] = args.seed
    if args.out is not None:
        over['output_dir'] = str(args.out)
    return over


def _predict(run: Run, args: argparse.Namespace) -> None:
    model = regression.load_model(args.model)
    path = args.episodes or run.data_file('test', 'clean')
    for ep in read_episodes(path):
        res = evaluation.predict(model, ep.states[0], ep.inputs, ep.n_steps,
                                 reference=ep.states)
        out = run.path('predict', f'pred_{args.model.stem}_ep{ep.id}.csv')
        evaluation.write_prediction_csv(res, ep.dt, out)
        run.emitted(out)
        rep = evaluation.metric_report(res, model.method)
        print(f'episode {ep.id}: mae={rep.mae:.6g} rmse={rep.rmse:.6g}')


def _eigs(run: Run, args: argparse.Namespace) -> None:
    paths = args.model or sorted(
        p for p in (run.out / 'models').glob('*.json')
        if p.name != 'status.json')
    if not paths:
        raise DataError(f'No model files found in `{run.out / "models"}`.')
    for p in paths:
        rep = evaluation.eig_report(regression.load_model(p))
        out = run.path('eigs', f'eigs_{pathlib.Path(p).stem}.csv')
        evaluation.write_eig_csv(rep, out)
        run.emitted(out)
        print(f'{pathlib.Path(p).stem}: spectral radius {rep.moduli[0]:.8f}'
              f' ({"stable" if rep.stable else "unstable"})')


def _report_status(status: dict) -> int:
    code = EXIT_OK
    for key, st in sorted(status.items()):
        if st['status'] != 'ok':
            print(f'{key}: {st["status"]}: {st.get("message", "")}',
                  file=sys.stderr)
        if st['status'] == 'solver_failure':
            code = EXIT_SOLVER
    return code


def dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args))
    run = Run(cfg)
    code = EXIT_OK
    try:
        if args.command in ('simulate', 'run'):
            run.simulate()
        if args.command in ('fit', 'run'):
            code = _report_status(run.fit(args.dump_sdp, args.jobs))
        if args.command in ('eval', 'run'):
            res = run.evaluate()
            for m, cells in sorted(res['methods'].items()):
                for lb, e in sorted(cells.items()):
                    print(f'{m:9s} {lb:8s} rmse={e.get("rmse", float("nan")):.6g}'
                          f' mae={e.get("mae", float("nan")):.6g}'
                          f' rho={e["spectral_radius"]:.6f}')
            for p in res['missing']:
                print(f'missing model: {p}', file=sys.stderr)
        if args.command == 'sweep-snr':
            curves = run.sweep(args.jobs)
            for m, rows in sorted(curves.items()):
                for s, rel in rows:
                    print(f'{m:9s} snr={s:g} U={rel["U"]:.4g} '
                          f'A={rel["A"]:.4g} B={rel["B"]:.4g}')
        if args.command == 'predict':
            _predict(run, args)
        if args.command == 'eigs':
            _eigs(run, args)
    finally:
        if run.files:
            run.write_manifest()
    return code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return dispatch(args)
    except ConfigError as e:
        print(f'config error: {e}', file=sys.stderr)
        return EXIT_CONFIG
    except UnimplementedMethodError as e:
        print(f'unimplemented: {e}', file=sys.stderr)
        return EXIT_UNIMPLEMENTED
    except SolverError as e:
        print(f'solver failure: {e}', file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, OSError, ValueError) as e:
        print(f'data error: {e}', file=sys.stderr)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
