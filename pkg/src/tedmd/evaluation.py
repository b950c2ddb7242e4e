"""Multi-step prediction and error metrics."""

import csv
import pathlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np

from .errors import DataError
from .lifting import lift_input, lift_state, retract
from .regression import KoopmanModel

# Rollouts stop once the predicted state norm exceeds this.
BLOWUP_NORM = 1e6


@dataclass(eq=False)
class PredictionResult:
    """Predicted trajectory.

    Attributes
    ----------
    predicted : np.ndarray
        Predicted states, shape ``(q + 1, n)``. Rows after a divergence are
        ``nan``.
    reference : np.ndarray or None
        Ground truth of the same shape, if supplied.
    per_step_error : np.ndarray or None
        Two-norm of the state error at every step.
    diverged_at : int or None
        First step whose predicted state norm exceeded :data:`BLOWUP_NORM`.
    """

    predicted: np.ndarray
    reference: Optional[np.ndarray] = None
    per_step_error: Optional[np.ndarray] = None
    diverged_at: Optional[int] = None


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mae_per_channel: List[float]
    rmse_per_channel: List[float]
    horizon: int
    method: str


@dataclass(eq=False)
class EigReport:
    """Eigenvalues of ``A`` sorted by descending modulus."""

    eigenvalues: np.ndarray
    moduli: np.ndarray
    stable: bool


def predict(model: KoopmanModel,
            x0: np.ndarray,
            inputs: np.ndarray,
            steps: Optional[int] = None,
            reference: Optional[np.ndarray] = None) -> PredictionResult:
    """Roll a model forward, retracting and re-lifting at every step.

    Parameters
    ----------
    model : KoopmanModel
        Fit model.
    x0 : np.ndarray
        Initial state, shape ``(n,)``.
    inputs : np.ndarray
        Inputs, shape ``(>= steps, m)``.
    steps : int
        Number of steps. Defaults to ``len(inputs) - 1``.
    reference : np.ndarray
        Optional ground truth, shape ``(steps + 1, n)``.
    """
    lifter = model.lifting
    if model.A.shape[0] != lifter.p_theta or model.B.shape[1] != lifter.p_upsilon:
        raise DataError(f'Model matrices ({model.A.shape}, {model.B.shape}) do '
                        f'not match the lifting (p_theta={lifter.p_theta}, '
                        f'p_upsilon={lifter.p_upsilon}).')
    n = lifter.state_dim
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != n:
        raise DataError(f'Expected an initial state of dimension {n}.')
    inputs = np.asarray(inputs, dtype=float).reshape(-1, lifter.input_dim)
    if steps is None:
        steps = max(inputs.shape[0] - 1, 0)
    if inputs.shape[0] < steps:
        raise DataError(f'Need {steps} input rows, got {inputs.shape[0]}.')
    predicted = np.full((steps + 1, n), np.nan)
    predicted[0] = x0
    x = x0
    diverged_at = None
    ups = lift_input(inputs, lifter)
    for k in range(steps):
        theta = model.A @ lift_state(x, lifter) + model.B @ ups[k]
        x = retract(theta, n)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP_NORM:
            diverged_at = k + 1
            break
        predicted[k + 1] = x
    result = PredictionResult(predicted=predicted, diverged_at=diverged_at)
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        if reference.shape != predicted.shape:
            raise DataError(f'Reference shape {reference.shape} does not match '
                            f'prediction shape {predicted.shape}.')
        result.reference = reference
        result.per_step_error = np.linalg.norm(reference - predicted, axis=1)
    return result


def _check_pair(truth, estimate):
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    estimate = np.atleast_2d(np.asarray(estimate, dtype=float))
    if truth.shape != estimate.shape:
        raise DataError(f'Shape mismatch: {truth.shape} vs {estimate.shape}.')
    if truth.shape[0] < 1:
        raise DataError('Need at least one step.')
    return truth, estimate


def mae(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Mean over steps of the one-norm of the state error."""
    truth, estimate = _check_pair(truth, estimate)
    return float(np.sum(np.abs(truth - estimate)) / truth.shape[0])


def rmse(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Root of the mean over steps of the squared two-norm of the error."""
    truth, estimate = _check_pair(truth, estimate)
    return float(np.sqrt(np.sum((truth - estimate)**2) / truth.shape[0]))


def metric_report(result: PredictionResult, method: str = '') -> MetricReport:
    """MAE and RMSE over steps ``1..q`` of a rollout.

    Diverged rollouts report infinite errors.
    """
    if result.reference is None:
        raise DataError('Prediction has no reference trajectory.')
    truth, est = result.reference[1:], result.predicted[1:]
    horizon = truth.shape[0]
    if result.diverged_at is not None:
        inf = [float('inf')] * truth.shape[1]
        return MetricReport(float('inf'), float('inf'), inf, inf, horizon,
                            method)
    err = truth - est
    return MetricReport(
        mae=mae(truth, est),
        rmse=rmse(truth, est),
        mae_per_channel=np.mean(np.abs(err), axis=0).tolist(),
        rmse_per_channel=np.sqrt(np.mean(err**2, axis=0)).tolist(),
        horizon=horizon,
        method=method,
    )


def relative_frobenius_error(U_approx: np.ndarray, U_true: np.ndarray) -> float:
    """``||U_approx - U_true||_F / ||U_true||_F``."""
    U_approx = np.asarray(U_approx, dtype=float)
    U_true = np.asarray(U_true, dtype=float)
    if U_approx.shape != U_true.shape:
        raise DataError(f'Shape mismatch: {U_approx.shape} vs {U_true.shape}.')
    denom = np.linalg.norm(U_true)
    if denom == 0:
        raise DataError('Reference matrix is zero.')
    return float(np.linalg.norm(U_approx - U_true) / denom)


def relative_errors(model: KoopmanModel,
                    true_model: KoopmanModel) -> Dict[str, float]:
    """Relative Frobenius errors of ``U``, ``A`` and ``B``.

    Blocks that are empty or zero in the reference are reported as ``nan``.
    """
    out = {}
    for name in ('U', 'A', 'B'):
        approx, true = getattr(model, name), getattr(true_model, name)
        if true.size == 0 or not np.any(true):
            out[name] = float('nan')
        else:
            out[name] = relative_frobenius_error(approx, true)
    return out


def eig_report(model: Union[KoopmanModel, np.ndarray]) -> EigReport:
    """Eigenvalues of the dynamics matrix, largest modulus first."""
    A = model.A if isinstance(model, KoopmanModel) else np.asarray(model)
    eigs = np.linalg.eigvals(A)
    moduli = np.abs(eigs)
    # Stable sort on (-modulus, re, im) keeps the output reproducible.
    order = np.lexsort((eigs.imag, eigs.real, -moduli))
    eigs, moduli = eigs[order], moduli[order]
    return EigReport(eigenvalues=eigs,
                     moduli=moduli,
                     stable=bool(moduli.size == 0 or moduli.max() < 1))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_prediction_csv(result: PredictionResult, dt: float,
                         path: Union[str, pathlib.Path]) -> None:
    """Per-step CSV with predicted and reference states and both error
    norms."""
    n = result.predicted.shape[1]
    header = ['k', 't'] + [f'xhat{i + 1}' for i in range(n)]
    if result.reference is not None:
        header += [f'x{i + 1}' for i in range(n)] + ['err_l1', 'err_l2']
    lines = [','.join(header)]
    for k, xh in enumerate(result.predicted):
        cells = [str(k), _fmt(k * dt)] + [_fmt(v) for v in xh]
        if result.reference is not None:
            x = result.reference[k]
            cells += [_fmt(v) for v in x]
            cells += [_fmt(np.sum(np.abs(x - xh))), _fmt(np.linalg.norm(x - xh))]
        lines.append(','.join(cells))
    pathlib.Path(path).write_text('\n'.join(lines) + '\n')


def write_eig_csv(report: EigReport,
                  path: Union[str, pathlib.Path],
                  n_circle: int = 361) -> None:
    """Write eigenvalues as ``re,im,modulus`` rows, then a unit circle
    sampling (``kind`` column distinguishes the two)."""
    lines = ['kind,re,im,modulus']
    for z, r in zip(report.eigenvalues, report.moduli):
        lines.append(f'eig,{_fmt(z.real)},{_fmt(z.imag)},{_fmt(r)}')
    for th in np.linspace(0, 2 * np.pi, n_circle):
        lines.append(f'circle,{_fmt(np.cos(th))},{_fmt(np.sin(th))},1.0')
    pathlib.Path(path).write_text('\n'.join(lines) + '\n')


def read_eig_csv(path: Union[str, pathlib.Path]) -> np.ndarray:
    """Eigenvalues stored by :func:`write_eig_csv`."""
    with open(path, newline='') as f:
        rows = [r for r in csv.DictReader(f) if r['kind'] == 'eig']
    return np.array([complex(float(r['re']), float(r['im'])) for r in rows])
