"""Asymptotic stability constraint via a linear matrix inequality program.

Given (projected) snapshots ``PsiHat`` and ``ThetaPlusHat``, let ``M = G H^+``
with ``G = ThetaPlusHat PsiHat^T`` and ``H = PsiHat PsiHat^T``. With the
change of variables ``F = A P`` the stable Koopman matrix solves::

    min  gamma
    s.t. trace(R) < 1,  R > 0,
         [[R, E^T], [E, gamma I]] > 0,   E = M blkdiag(P, I) - [F B],
         P > eps I,
         [[rho P, F], [F^T, rho P]] > 0,

and ``A = F P^{-1}``. The last constraint forces ``A P A^T < rho^2 P``, so the
spectral radius of ``A`` is below ``rho``.
"""

import logging
import pathlib
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Union

import cvxpy as cp
import numpy as np
import scipy.linalg

from .errors import SolverError
from .lifting import LiftingConfig
from .regression import (KoopmanModel, ProjectedSnapshots, SnapshotMatrices,
                         pinv)

log = logging.getLogger(__name__)

DEFAULT_RHO_BAR = 0.99999

# Slack applied when checking a returned solution against the constraints.
FEAS_TOL = 1e-7


@dataclass(frozen=True)
class SolverSettings:
    """Options for the conic solver.

    Attributes
    ----------
    solver : str
        ``cvxpy`` solver name. Must support semidefinite cones.
    tol : float
        Relative duality gap and feasibility tolerance.
    abs_tol : float
        Absolute duality gap tolerance.
    max_iter : int
        Iteration cap.
    margin : float
        Strict inequalities ``X > 0`` are imposed as ``X >= margin * eps * I``.
    trace_margin : float
        ``trace(R) < 1`` is imposed as ``trace(R) <= 1 - trace_margin``.
    p_buffer : float
        ``P >= eps I`` is solved as ``P >= (eps + p_buffer) I``. Near the
        stability boundary ``P`` is badly conditioned and the solver's
        tolerance on its large eigenvalues can undershoot the bound on the
        small ones; ``A`` does not depend on ``eps``, so the buffer is free.
    verbose : bool
        Print solver output.
    """

    solver: str = 'CLARABEL'
    tol: float = 1e-8
    abs_tol: float = 1e-10
    max_iter: int = 200
    margin: float = 1e-9
    trace_margin: float = 1e-9
    p_buffer: float = 1e-6
    verbose: bool = False

    def solver_options(self) -> Dict[str, Any]:
        if self.solver == 'CLARABEL':
            return {
                'tol_gap_rel': self.tol,
                'tol_gap_abs': self.abs_tol,
                'tol_feas': self.tol,
                'max_iter': self.max_iter,
            }
        if self.solver == 'SCS':
            return {'eps': self.tol, 'max_iters': 100 * self.max_iter}
        if self.solver == 'CVXOPT':
            return {
                'reltol': self.tol,
                'abstol': self.abs_tol,
                'feastol': self.tol,
                'max_iters': self.max_iter,
            }
        return {}


@dataclass(frozen=True, eq=False)
class SdpSpec:
    """Data of the stability-constrained program.

    Attributes
    ----------
    Ghat : np.ndarray
        ``ThetaPlusHat PsiHat^T``, shape ``(p_theta, p)``.
    Hhat : np.ndarray
        ``PsiHat PsiHat^T``, shape ``(p, p)``.
    M : np.ndarray
        ``Ghat Hhat^+`` (the unconstrained least-squares Koopman matrix).
    M_P : np.ndarray
        Columns of ``M`` multiplying ``P`` in the cost, ``(p_theta,
        p_theta)``.
    M_I : np.ndarray
        Columns of ``M`` multiplying the identity block, ``(p_theta,
        p_upsilon)``.
    rho_bar : float
        Spectral radius bound.
    epsilon : float
        Lower bound on ``P``.
    meta : dict
        Builder warnings and diagnostics.
    """

    Ghat: np.ndarray
    Hhat: np.ndarray
    M: np.ndarray
    M_P: np.ndarray
    M_I: np.ndarray
    rho_bar: float
    epsilon: float
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def p_theta(self) -> int:
        return self.Ghat.shape[0]

    @property
    def p_upsilon(self) -> int:
        return self.Ghat.shape[1] - self.Ghat.shape[0]

    def cost_residual(self, F: np.ndarray, B: np.ndarray,
                      P: np.ndarray) -> np.ndarray:
        """Affine map ``(F, B, P) -> M blkdiag(P, I) - [F B]``."""
        return np.hstack([self.M_P @ P - F, self.M_I - B])


@dataclass(eq=False)
class SdpSolution:
    """Solution of the stability-constrained program."""

    gamma: float
    F: np.ndarray
    B: np.ndarray
    P: np.ndarray
    R: np.ndarray
    status: str
    iterations: Optional[int]
    residuals: Dict[str, float]


def build_problem(PsiHat: np.ndarray,
                  ThetaPlusHat: np.ndarray,
                  rho_bar: float = DEFAULT_RHO_BAR,
                  epsilon: Optional[float] = None) -> SdpSpec:
    """Assemble the program data from snapshot matrices.

    Parameters
    ----------
    PsiHat : np.ndarray
        Regressor snapshots, shape ``(p, r)``.
    ThetaPlusHat : np.ndarray
        Target snapshots, shape ``(p_theta, r)``.
    rho_bar : float
        Spectral radius bound in ``(0, 1]``.
    epsilon : float
        Lower bound on ``P``. See :func:`default_epsilon`.
    """
    PsiHat = np.asarray(PsiHat, dtype=float)
    ThetaPlusHat = np.asarray(ThetaPlusHat, dtype=float)
    if not (np.all(np.isfinite(PsiHat)) and np.all(np.isfinite(ThetaPlusHat))):
        raise ValueError('Snapshot matrices must be finite.')
    if PsiHat.shape[0] < ThetaPlusHat.shape[0]:
        raise ValueError('`PsiHat` must have at least as many rows as '
                         '`ThetaPlusHat`.')
    if PsiHat.shape[1] != ThetaPlusHat.shape[1]:
        raise ValueError('Snapshot column counts differ.')
    if not 0 < rho_bar <= 1:
        raise ValueError('`rho_bar` must lie in (0, 1].')
    Ghat = ThetaPlusHat @ PsiHat.T
    Hhat = PsiHat @ PsiHat.T
    Hhat = (Hhat + Hhat.T) / 2
    H_pinv = pinv(Hhat)
    M = Ghat @ H_pinv
    meta = {}
    s = np.linalg.svd(Hhat, compute_uv=False)
    rank = int(np.sum(s > max(Hhat.shape) * np.finfo(float).eps * s[0]))
    if rank < Hhat.shape[0]:
        meta['warning'] = (f'Hhat is numerically singular (rank {rank} of '
                           f'{Hhat.shape[0]}); pseudoinverse used.')
    meta['rank_Hhat'] = rank
    if epsilon is None:
        epsilon = default_epsilon(M)
    if not epsilon > 0:
        raise ValueError('`epsilon` must be positive.')
    p_theta = ThetaPlusHat.shape[0]
    return SdpSpec(Ghat=Ghat,
                   Hhat=Hhat,
                   M=M,
                   M_P=M[:, :p_theta],
                   M_I=M[:, p_theta:],
                   rho_bar=float(rho_bar),
                   epsilon=float(epsilon),
                   meta=meta)


def default_epsilon(M: np.ndarray) -> float:
    """Default lower bound on ``P``, ``1 / ||M||_F``.

    The minimizing ``A`` does not depend on ``epsilon`` (the cost on the
    ``P`` block is homogeneous), so the bound only sets the numerical scale.
    With ``P ~ I / ||M||`` both ``F = A P`` and ``gamma`` stay of order one.
    """
    norm = float(np.linalg.norm(M))
    return 1.0 / norm if norm > 0 else 1.0


def solve_constrained(spec: SdpSpec,
                      settings: Optional[SolverSettings] = None
                      ) -> SdpSolution:
    """Solve the stability-constrained program.

    Raises
    ------
    SolverError
        If the solver fails, or the returned point violates a constraint by
        more than the feasibility tolerance.
    """
    settings = settings or SolverSettings()
    p_theta, p_ups = spec.p_theta, spec.p_upsilon
    p = p_theta + p_ups
    eps, rho = spec.epsilon, spec.rho_bar
    mu = settings.margin * eps

    gamma = cp.Variable(name='gamma')
    F = cp.Variable((p_theta, p_theta), name='F')
    P = cp.Variable((p_theta, p_theta), symmetric=True, name='P')
    R = cp.Variable((p, p), symmetric=True, name='R')
    blocks = [spec.M_P @ P - F]
    if p_ups > 0:
        B = cp.Variable((p_theta, p_ups), name='B')
        blocks.append(spec.M_I - B)
    else:
        B = None
    E = cp.hstack(blocks) if len(blocks) > 1 else blocks[0]
    epigraph = cp.bmat([[R, E.T], [E, gamma * np.eye(p_theta)]])
    stab = cp.bmat([[rho * P, F], [F.T, rho * P]])
    constraints = [
        cp.trace(R) <= 1 - settings.trace_margin,
        R >> settings.margin * np.eye(p),
        _sym(epigraph) >> settings.margin * np.eye(p + p_theta),
        P >> (eps + max(mu, settings.p_buffer)) * np.eye(p_theta),
        _sym(stab) >> mu * np.eye(2 * p_theta),
    ]
    problem = cp.Problem(cp.Minimize(gamma), constraints)
    try:
        # Inaccurate solutions are accepted only if the residual check
        # below passes; the status is kept in the solution.
        with warnings.catch_warnings():
            warnings.filterwarnings('ignore', 'Solution may be inaccurate')
            problem.solve(solver=settings.solver,
                          verbose=settings.verbose,
                          **settings.solver_options())
    except cp.error.SolverError as e:
        raise SolverError(f'Solver {settings.solver} failed: {e}') from e
    status = problem.status
    iterations = problem.solver_stats.num_iters if problem.solver_stats else None
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or F.value is None:
        raise SolverError(f'Solver returned status `{status}`.')
    F_v = np.asarray(F.value)
    P_v = np.asarray(P.value)
    P_v = (P_v + P_v.T) / 2
    R_v = np.asarray(R.value)
    R_v = (R_v + R_v.T) / 2
    B_v = np.asarray(B.value) if B is not None else np.zeros((p_theta, 0))
    sol = SdpSolution(gamma=float(gamma.value),
                      F=F_v,
                      B=B_v,
                      P=P_v,
                      R=R_v,
                      status=status,
                      iterations=iterations,
                      residuals={})
    sol.residuals = constraint_residuals(spec, sol)
    violated = check_feasibility(sol.residuals)
    if violated:
        raise SolverError(
            f'Solution (status `{status}`) violates constraints: '
            f'{", ".join(violated)}.', sol.residuals)
    return sol


def _sym(X):
    # ``bmat`` loses the symmetry attribute; impose it explicitly.
    return (X + X.T) / 2


def _min_eig(X: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((X + X.T) / 2)[0])


def constraint_residuals(spec: SdpSpec, sol: SdpSolution) -> Dict[str, float]:
    """Evaluate every constraint of the program at a candidate solution.

    Returns minimum eigenvalues of each matrix inequality (after subtracting
    its bound), the trace of ``R``, and the norms used to scale the
    tolerances.
    """
    E = spec.cost_residual(sol.F, sol.B, sol.P)
    p_theta = spec.p_theta
    epigraph = np.block([[sol.R, E.T], [E, sol.gamma * np.eye(p_theta)]])
    stab = np.block([[spec.rho_bar * sol.P, sol.F],
                     [sol.F.T, spec.rho_bar * sol.P]])
    return {
        'min_eig_P_minus_eps': _min_eig(sol.P - spec.epsilon *
                                        np.eye(p_theta)),
        'trace_R': float(np.trace(sol.R)),
        'min_eig_R': _min_eig(sol.R),
        'min_eig_epigraph': _min_eig(epigraph),
        'min_eig_stability': _min_eig(stab),
        'norm_epigraph': float(np.linalg.norm(epigraph, 2)),
        'norm_P': float(np.linalg.norm(sol.P, 2)),
        'rho_bar': spec.rho_bar,
        'epsilon': spec.epsilon,
        'cost': float(np.sum(E**2)),
        'gamma': sol.gamma,
    }


def check_feasibility(res: Dict[str, float], tol: float = FEAS_TOL) -> List[str]:
    """Names of constraints violated beyond ``tol`` (empty if feasible)."""
    violated = []
    if res['min_eig_P_minus_eps'] < -tol:
        violated.append('P >= eps I')
    if res['trace_R'] > 1 + tol:
        violated.append('trace(R) <= 1')
    if res['min_eig_R'] < -tol:
        violated.append('R >= 0')
    if res['min_eig_epigraph'] < -tol * (1 + res['norm_epigraph']):
        violated.append('epigraph LMI')
    if res['min_eig_stability'] < -tol * res['rho_bar'] * res['norm_P']:
        violated.append('stability LMI')
    return violated


def recover_A(solution: SdpSolution, epsilon: Optional[float] = None
              ) -> np.ndarray:
    """Compute ``A = F P^{-1}`` with a positive definite solve."""
    P = solution.P
    if epsilon is not None and _min_eig(P) < epsilon / 2:
        raise SolverError(f'P has minimum eigenvalue {_min_eig(P):.3e}, '
                          f'below epsilon/2 = {epsilon / 2:.3e}.')
    # A P = F  <=>  P A^T = F^T
    return scipy.linalg.solve(P, solution.F.T, assume_a='pos').T


def spectral_radius(A: np.ndarray) -> float:
    """Largest eigenvalue modulus."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f'Expected a square matrix, got shape {A.shape}.')
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def fit_as(S: Union[SnapshotMatrices, ProjectedSnapshots],
           lifter: Optional[LiftingConfig] = None,
           rho_bar: float = DEFAULT_RHO_BAR,
           epsilon: Optional[float] = None,
           settings: Optional[SolverSettings] = None,
           dump_path: Optional[Union[str, pathlib.Path]] = None
           ) -> KoopmanModel:
    """Fit an asymptotically stable Koopman model.

    Raw snapshots give EDMD-AS; projected snapshots give TEDMD-AS.
    """
    if isinstance(S, ProjectedSnapshots):
        psi, theta, method = S.PsiHat, S.ThetaPlusHat, 'tedmd_as'
    elif isinstance(S, SnapshotMatrices):
        # 1/q cancels in G H^+; keep the magnitudes comparable to EDMD's.
        psi = S.Psi / np.sqrt(S.q)
        theta = S.ThetaPlus / np.sqrt(S.q)
        method = 'edmd_as'
    else:
        raise TypeError(f'Unsupported snapshot type {type(S).__name__}.')
    spec = build_problem(psi, theta, rho_bar, epsilon)
    sol = solve_constrained(spec, settings)
    if dump_path is not None:
        dump_sdp(spec, dump_path, sol)
    A = recover_A(sol, spec.epsilon)
    if lifter is None:
        if spec.p_theta != S.n:
            raise ValueError('A lifting config is required when the lifted '
                             'state is larger than the state.')
        lifter = LiftingConfig(state_dim=S.n, input_dim=S.m, monomial_degree=1)
    meta = {
        'gamma': sol.gamma,
        'status': sol.status,
        'iterations': sol.iterations,
        'rho_bar': spec.rho_bar,
        'epsilon': spec.epsilon,
        'spectral_radius': spectral_radius(A),
        'constraint_residuals': sol.residuals,
        'solver_settings': asdict(settings or SolverSettings()),
    }
    if 'warning' in spec.meta:
        meta['warning'] = spec.meta['warning']
    if isinstance(S, ProjectedSnapshots):
        meta.update(r=S.r,
                    cond_psi_hat=S.cond_psi_hat,
                    cond_theta_hat=S.cond_theta_hat)
    return KoopmanModel(A, sol.B.copy(), lifter, method, meta)


def _triplets(name: str, X: np.ndarray) -> List[str]:
    X = np.atleast_2d(X)
    rows, cols = np.nonzero(X)
    lines = [f'# {name} {X.shape[0]} {X.shape[1]} {rows.size}']
    lines += [f'{i} {j} {float(X[i, j])!r}' for i, j in zip(rows, cols)]
    return lines


def dump_sdp(spec: SdpSpec,
             path: Union[str, pathlib.Path],
             solution: Optional[SdpSolution] = None) -> None:
    """Write the program data as sparse ``row col value`` triplets.

    Each matrix starts with a ``# name rows cols nnz`` line; indices are
    zero-based. If a solution is given, the evaluated constraint blocks are
    appended.
    """
    lines = [
        f'# rho_bar {spec.rho_bar!r}',
        f'# epsilon {spec.epsilon!r}',
    ]
    for name in ('Ghat', 'Hhat', 'M_P', 'M_I'):
        lines += _triplets(name, getattr(spec, name))
    if solution is not None:
        E = spec.cost_residual(solution.F, solution.B, solution.P)
        lines.append(f'# gamma {solution.gamma!r}')
        for name, X in (('F', solution.F), ('B', solution.B),
                        ('P', solution.P), ('R', solution.R), ('E', E),
                        ('epigraph',
                         np.block([[solution.R, E.T],
                                   [E, solution.gamma * np.eye(spec.p_theta)]
                                   ])),
                        ('stability',
                         np.block([[spec.rho_bar * solution.P, solution.F],
                                   [solution.F.T,
                                    spec.rho_bar * solution.P]]))):
            lines += _triplets(name, X)
    pathlib.Path(path).write_text('\n'.join(lines) + '\n')
