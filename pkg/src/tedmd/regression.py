"""Snapshot assembly and unconstrained Koopman regression.

Implements EDMD, reduced-order DMD, and total EDMD with inputs (TEDMD), which
projects the snapshots onto the leading right singular vectors of the stacked
matrix ``T = [Psi; Theta_+]`` before solving the least-squares problem.
"""

import json
import pathlib
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from . import lifting
from .data import Episode
from .errors import ConditioningError, DataError, TruncationError
from .lifting import LiftingConfig

FORMAT_VERSION = 1

METHODS = ('edmd', 'edmd_as', 'tedmd', 'tedmd_as')


@dataclass(frozen=True, eq=False)
class SnapshotMatrices:
    """Lifted snapshot pairs.

    Attributes
    ----------
    Psi : np.ndarray
        Lifted states and inputs, shape ``(p, q)``.
    ThetaPlus : np.ndarray
        Lifted next states, shape ``(p_theta, q)``.
    n, m : int
        State and input dimensions.
    """

    Psi: np.ndarray
    ThetaPlus: np.ndarray
    n: int
    m: int

    def __post_init__(self) -> None:
        if self.Psi.shape[1] != self.ThetaPlus.shape[1]:
            raise DataError('`Psi` and `ThetaPlus` column counts differ.')
        if self.Psi.shape[0] < self.ThetaPlus.shape[0]:
            raise DataError('`Psi` must have at least as many rows as '
                            '`ThetaPlus`.')

    @property
    def q(self) -> int:
        return self.Psi.shape[1]

    @property
    def p_theta(self) -> int:
        return self.ThetaPlus.shape[0]

    @property
    def p_upsilon(self) -> int:
        return self.Psi.shape[0] - self.ThetaPlus.shape[0]

    @property
    def p(self) -> int:
        return self.Psi.shape[0]


@dataclass(frozen=True, eq=False)
class ProjectedSnapshots:
    """Snapshots projected onto the leading right singular vectors of ``T``.

    Attributes
    ----------
    PsiHat : np.ndarray
        ``Psi @ V``, shape ``(p, r)``.
    ThetaPlusHat : np.ndarray
        ``ThetaPlus @ V``, shape ``(p_theta, r)``.
    V : np.ndarray
        Retained right singular vectors, shape ``(q, r)``.
    r : int
        Truncation rank.
    cond_psi_hat, cond_theta_hat : float
        Two-norm condition numbers of the projected matrices.
    singular_values : np.ndarray
        Full singular value spectrum of ``T``.
    n, m : int
        State and input dimensions.
    """

    PsiHat: np.ndarray
    ThetaPlusHat: np.ndarray
    V: np.ndarray
    r: int
    cond_psi_hat: float
    cond_theta_hat: float
    singular_values: np.ndarray
    n: int
    m: int

    @property
    def p_theta(self) -> int:
        return self.ThetaPlusHat.shape[0]

    @property
    def p_upsilon(self) -> int:
        return self.PsiHat.shape[0] - self.ThetaPlusHat.shape[0]


@dataclass(eq=False)
class KoopmanModel:
    """Approximate Koopman matrix ``U = [A B]`` with its lifting.

    Attributes
    ----------
    A : np.ndarray
        Dynamics matrix, shape ``(p_theta, p_theta)``.
    B : np.ndarray
        Input matrix, shape ``(p_theta, p_upsilon)``.
    lifting : LiftingConfig
        Lifting used to build the snapshots.
    method : str
        One of ``edmd``, ``edmd_as``, ``tedmd``, ``tedmd_as``.
    fit_meta : dict
        Fit diagnostics (truncation rank, condition numbers, solver status,
        objective value, residual norm).
    """

    A: np.ndarray
    B: np.ndarray
    lifting: LiftingConfig
    method: str
    fit_meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def U(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    @property
    def p_theta(self) -> int:
        return self.A.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format_version': FORMAT_VERSION,
            'method': self.method,
            'dims': {
                'n': self.lifting.state_dim,
                'm': self.lifting.input_dim,
                'p_theta': self.A.shape[0],
                'p_upsilon': self.B.shape[1],
            },
            'A': self.A.tolist(),
            'B': self.B.tolist(),
            'lifting': self.lifting.to_dict(),
            'fit_meta': _jsonable(self.fit_meta),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'KoopmanModel':
        if d.get('format_version') != FORMAT_VERSION:
            raise DataError(f'Unsupported model format version '
                            f'{d.get("format_version")!r}.')
        dims = d['dims']
        A = np.asarray(d['A'], dtype=float).reshape(dims['p_theta'],
                                                     dims['p_theta'])
        B = np.asarray(d['B'], dtype=float).reshape(dims['p_theta'],
                                                     dims['p_upsilon'])
        return cls(A=A,
                   B=B,
                   lifting=LiftingConfig.from_dict(d['lifting']),
                   method=d['method'],
                   fit_meta=d.get('fit_meta', {}))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def save_model(model: KoopmanModel, path: Union[str, pathlib.Path]) -> None:
    """Write a model as a JSON document."""
    with open(path, 'w') as f:
        json.dump(model.to_dict(), f, indent=1, sort_keys=True)
        f.write('\n')


def load_model(path: Union[str, pathlib.Path]) -> KoopmanModel:
    with open(path) as f:
        return KoopmanModel.from_dict(json.load(f))


def default_rtol(shape: Tuple[int, ...]) -> float:
    """Relative singular value cutoff ``max(shape) * eps``."""
    return max(shape) * np.finfo(float).eps


def pinv(M: np.ndarray, rtol: Optional[float] = None) -> np.ndarray:
    """SVD pseudoinverse with a relative singular value cutoff."""
    if rtol is None:
        rtol = default_rtol(M.shape)
    return np.linalg.pinv(M, rtol=rtol)


def numerical_rank(sigma: np.ndarray, shape: Tuple[int, ...],
                   rtol: Optional[float] = None) -> int:
    """Number of singular values above ``rtol * sigma_max``."""
    if rtol is None:
        rtol = default_rtol(shape)
    if sigma.size == 0 or sigma[0] == 0:
        return 0
    return int(np.sum(sigma > rtol * sigma[0]))


def cond(M: np.ndarray) -> float:
    """Ratio of largest to smallest singular value (``inf`` if singular)."""
    if M.size == 0:
        return np.inf
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def build_snapshots(episodes: Sequence[Episode],
                    lifter: LiftingConfig) -> SnapshotMatrices:
    """Lift episodes and stack them into ``Psi`` and ``ThetaPlus``.

    Column ``k`` of an episode pairs ``psi(x_k, u_k)`` with
    ``theta(x_{k+1})``; pairs never cross episode boundaries.
    """
    if not episodes:
        raise DataError('No episodes given.')
    bad = [
        ep.id for ep in episodes
        if (ep.n_states, ep.n_inputs) != (lifter.state_dim, lifter.input_dim)
    ]
    if bad:
        raise DataError(f'Episodes {bad} do not match the lifting dimensions '
                        f'(n={lifter.state_dim}, m={lifter.input_dim}).')
    short = [ep.id for ep in episodes if ep.states.shape[0] < 2]
    if short:
        raise DataError(f'Episodes {short} have fewer than 2 timesteps.')
    psi_cols, theta_cols = [], []
    for ep in episodes:
        theta = lifting.lift_state(ep.states, lifter)
        ups = lifting.lift_input(ep.inputs, lifter)
        psi_cols.append(np.hstack([theta[:-1], ups[:-1]]))
        theta_cols.append(theta[1:])
    return SnapshotMatrices(Psi=np.vstack(psi_cols).T,
                            ThetaPlus=np.vstack(theta_cols).T,
                            n=lifter.state_dim,
                            m=lifter.input_dim)


def _split(U: np.ndarray, p_theta: int) -> Tuple[np.ndarray, np.ndarray]:
    return U[:, :p_theta].copy(), U[:, p_theta:].copy()


def edmd_fit(S: SnapshotMatrices,
             lifter: Optional[LiftingConfig] = None,
             rtol: Optional[float] = None) -> KoopmanModel:
    """Fit ``U = G H^+`` with ``G = Theta_+ Psi^T / q``, ``H = Psi Psi^T / q``.

    Parameters
    ----------
    S : SnapshotMatrices
        Snapshots.
    lifter : LiftingConfig
        Lifting stored on the returned model. Defaults to identity lifting.
    rtol : float
        Relative pseudoinverse cutoff. Defaults to ``p * eps``.
    """
    if not np.any(S.Psi):
        raise DataError('`Psi` is identically zero; nothing to fit.')
    G = S.ThetaPlus @ S.Psi.T / S.q
    H = S.Psi @ S.Psi.T / S.q
    U = G @ pinv(H, rtol)
    A, B = _split(U, S.p_theta)
    meta = {
        'q': S.q,
        'cond_H': cond(H),
        'residual': float(np.linalg.norm(S.ThetaPlus - U @ S.Psi)),
    }
    return KoopmanModel(A, B, lifter or _identity_lifting(S), 'edmd', meta)


def _identity_lifting(S) -> LiftingConfig:
    if S.p_theta != S.n:
        raise ValueError('A lifting config is required when the lifted state '
                         'is larger than the state.')
    return LiftingConfig(state_dim=S.n, input_dim=S.m, monomial_degree=1)


def dmd_fit_reduced(
        X: np.ndarray, Xplus: np.ndarray,
        r: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduced-order DMD.

    Parameters
    ----------
    X, Xplus : np.ndarray
        Snapshot matrices, shape ``(n, q)``.
    r : int
        Number of singular values kept.

    Returns
    -------
    A_tilde : np.ndarray
        ``W_r^T Xplus V_r S_r^{-1}``, shape ``(r, r)``.
    eigenvalues : np.ndarray
        Eigenvalues of ``A_tilde``.
    modes : np.ndarray
        DMD modes ``Xplus V_r S_r^{-1} q`` for each eigenvector ``q``,
        shape ``(n, r)``.
    """
    W, s, Vt = np.linalg.svd(X, full_matrices=False)
    rank = numerical_rank(s, X.shape)
    if not 1 <= r <= rank:
        raise TruncationError(f'Rank {r} requested but `X` has numerical '
                              f'rank {rank}.')
    W_r, s_r, V_r = W[:, :r], s[:r], Vt[:r].T
    XV = Xplus @ V_r / s_r
    A_tilde = W_r.T @ XV
    eigvals, eigvecs = np.linalg.eig(A_tilde)
    return A_tilde, eigvals, XV @ eigvecs


def _augmented_svd(S: SnapshotMatrices):
    T = np.vstack([S.Psi, S.ThetaPlus])
    W, s, Vt = np.linalg.svd(T, full_matrices=False)
    return T, W, s, Vt


def tedmd_project(S: SnapshotMatrices, r: int) -> ProjectedSnapshots:
    """Project snapshots onto the ``r`` leading right singular vectors of
    ``T = [Psi; Theta_+]``.
    """
    T, _, s, Vt = _augmented_svd(S)
    rank = numerical_rank(s, T.shape)
    if not 1 <= r <= rank:
        raise TruncationError(f'Truncation rank {r} is outside [1, {rank}] '
                              f'(numerical rank of T is {rank}).')
    V = Vt[:r].T
    PsiHat = S.Psi @ V
    ThetaPlusHat = S.ThetaPlus @ V
    return ProjectedSnapshots(PsiHat=PsiHat,
                              ThetaPlusHat=ThetaPlusHat,
                              V=V,
                              r=r,
                              cond_psi_hat=cond(PsiHat),
                              cond_theta_hat=cond(ThetaPlusHat),
                              singular_values=s,
                              n=S.n,
                              m=S.m)


def tedmd_fit(P: ProjectedSnapshots,
              lifter: Optional[LiftingConfig] = None,
              max_cond: float = 1e14,
              rtol: Optional[float] = None) -> KoopmanModel:
    """Solve the projected least-squares problem ``U = ThetaPlusHat
    PsiHat^+``.

    Raises
    ------
    ConditioningError
        If ``cond(PsiHat)`` exceeds ``max_cond``.
    """
    if not np.any(P.PsiHat):
        raise DataError('`PsiHat` is identically zero; nothing to fit.')
    if P.cond_psi_hat > max_cond:
        raise ConditioningError(
            f'cond(PsiHat) = {P.cond_psi_hat:.3e} exceeds {max_cond:.3e} at '
            f'truncation rank {P.r}; use a smaller rank.')
    U = P.ThetaPlusHat @ pinv(P.PsiHat, rtol)
    A, B = _split(U, P.p_theta)
    meta = {
        'r': P.r,
        'cond_psi_hat': P.cond_psi_hat,
        'cond_theta_hat': P.cond_theta_hat,
        'residual': float(np.linalg.norm(P.ThetaPlusHat - U @ P.PsiHat)),
    }
    return KoopmanModel(A, B, lifter or _identity_lifting(P), 'tedmd', meta)


def choose_truncation(S: SnapshotMatrices,
                      kappa_max: float = 1e2,
                      max_rank: Optional[int] = None
                      ) -> Tuple[int, float, float]:
    """Largest truncation rank keeping both projected matrices conditioned.

    Scans down from ``min(rank(T), max_rank)`` and returns the first ``r``
    with ``cond(PsiHat) <= kappa_max`` and ``cond(ThetaPlusHat) <=
    kappa_max``.

    Parameters
    ----------
    S : SnapshotMatrices
        Snapshots.
    kappa_max : float
        Condition number bound, must exceed 1.
    max_rank : int
        Highest rank considered. Defaults to ``p``, the number of regressors:
        beyond it the projection stops removing noise directions from
        ``Psi`` and the fit drifts back to plain EDMD.

    Returns
    -------
    Tuple[int, float, float]
        ``(r, cond(PsiHat), cond(ThetaPlusHat))``.
    """
    if not kappa_max > 1:
        raise ValueError('`kappa_max` must exceed 1.')
    T, W, s, _ = _augmented_svd(S)
    rank = numerical_rank(s, T.shape)
    if max_rank is None:
        max_rank = S.p
    # Psi V_r = W[:p, :r] diag(s_r), which avoids forming q-sized products.
    WS = W * s
    best = (np.inf, np.inf, 0)
    for r in range(min(rank, max_rank), 0, -1):
        c_psi = cond(WS[:S.p, :r])
        c_theta = cond(WS[S.p:, :r])
        if c_psi <= kappa_max and c_theta <= kappa_max:
            return r, c_psi, c_theta
        if max(c_psi, c_theta) < max(best[0], best[1]):
            best = (c_psi, c_theta, r)
    raise TruncationError(
        f'No truncation rank satisfies kappa_max={kappa_max:.3e}; best was '
        f'r={best[2]} with cond(PsiHat)={best[0]:.3e}, '
        f'cond(ThetaPlusHat)={best[1]:.3e}.')
