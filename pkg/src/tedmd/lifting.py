"""Lifting functions mapping states and inputs into the Koopman feature space.

The lifted state is laid out as::

    [x, monomials of degree 2..d (graded lexicographic), thin-plate RBFs, 1?]

so the raw state always occupies the first ``n`` entries and can be read back
with :func:`retract`. Inputs are lifted by the identity.

Thin-plate RBFs are evaluated on the polynomial lift (all monomials of degree
1..d, without the constant)::

    r_i = alpha * ||psi_poly(x) - c_i|| + delta
    psi_rbf_i = r_i**2 * ln(r_i)
"""

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .errors import BoundsError, DataError


@dataclass(frozen=True, eq=False)
class LiftingConfig:
    """Parameters of the lifting map.

    Attributes
    ----------
    state_dim : int
        Number of states ``n``.
    input_dim : int
        Number of inputs ``m``.
    monomial_degree : int
        Highest monomial degree in the polynomial lift. ``1`` keeps only the
        raw states.
    centers : np.ndarray
        RBF centers, shape ``(n_rbf, p_poly)``. May have zero rows.
    alpha : float
        RBF distance scaling.
    delta : float
        RBF distance offset, keeps the logarithm argument positive.
    include_constant : bool
        Append a constant ``1`` to the lifted state.
    """

    state_dim: int
    input_dim: int = 0
    monomial_degree: int = 2
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    alpha: float = 0.1
    delta: float = 0.001
    include_constant: bool = False

    def __post_init__(self) -> None:
        if self.state_dim < 1:
            raise ValueError('`state_dim` must be positive.')
        if self.input_dim < 0:
            raise ValueError('`input_dim` must be nonnegative.')
        if self.monomial_degree < 1:
            raise ValueError('`monomial_degree` must be positive.')
        if not (self.alpha > 0 and self.delta > 0):
            raise ValueError('`alpha` and `delta` must be positive.')
        centers = np.asarray(self.centers, dtype=float)
        if centers.size == 0:
            centers = np.zeros((0, self.p_poly))
        if centers.ndim != 2 or centers.shape[1] != self.p_poly:
            raise ValueError(
                f'Centers must have {self.p_poly} columns (polynomial lift '
                f'dimension), got shape {centers.shape}.')
        centers.setflags(write=False)
        object.__setattr__(self, 'centers', centers)

    @property
    def n_rbf(self) -> int:
        return self.centers.shape[0]

    @property
    def p_poly(self) -> int:
        """Number of monomials of degree 1..d in ``n`` variables."""
        n, d = self.state_dim, self.monomial_degree
        return comb(n + d, d) - 1

    @property
    def p_theta(self) -> int:
        return self.p_poly + self.n_rbf + int(self.include_constant)

    @property
    def p_upsilon(self) -> int:
        return self.input_dim

    @property
    def p(self) -> int:
        return self.p_theta + self.p_upsilon

    def to_dict(self) -> Dict[str, Any]:
        return {
            'state_dim': self.state_dim,
            'input_dim': self.input_dim,
            'monomial_degree': self.monomial_degree,
            'alpha': self.alpha,
            'delta': self.delta,
            'include_constant': self.include_constant,
            'centers': self.centers.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'LiftingConfig':
        n = int(d['state_dim'])
        degree = int(d.get('monomial_degree', 2))
        centers = np.asarray(d.get('centers', []), dtype=float)
        if centers.size == 0:
            centers = np.zeros((0, comb(n + degree, degree) - 1))
        return cls(
            state_dim=n,
            input_dim=int(d.get('input_dim', 0)),
            monomial_degree=degree,
            centers=centers,
            alpha=float(d.get('alpha', 0.1)),
            delta=float(d.get('delta', 0.001)),
            include_constant=bool(d.get('include_constant', False)),
        )


def monomial_exponents(n: int, degree: int) -> List[Tuple[int, ...]]:
    """Index tuples of all monomials of degree 1..``degree``.

    Ordering is graded lexicographic, so degree-1 terms come first in state
    order. For ``n=2, degree=2`` this is ``x1, x2, x1^2, x1*x2, x2^2``.
    """
    return [
        combo for k in range(1, degree + 1)
        for combo in itertools.combinations_with_replacement(range(n), k)
    ]


def lift_poly(x: np.ndarray, degree: int) -> np.ndarray:
    """Polynomial lift of ``x`` along its last axis."""
    x = np.asarray(x, dtype=float)
    cols = [
        np.prod(x[..., list(idx)], axis=-1)
        for idx in monomial_exponents(x.shape[-1], degree)
    ]
    return np.stack(cols, axis=-1)


def thin_plate(r: np.ndarray) -> np.ndarray:
    """Thin-plate spline ``r**2 * ln(r)``."""
    return r**2 * np.log(r)


def make_centers(n_centers: int,
                 dim: int,
                 bounds: Sequence[Sequence[float]],
                 seed: int = 0) -> np.ndarray:
    """Sample RBF centers with a Latin hypercube.

    Parameters
    ----------
    n_centers : int
        Number of points.
    dim : int
        Point dimension.
    bounds : Sequence[Sequence[float]]
        ``dim`` pairs of ``(lo, hi)``.
    seed : int
        Random seed.

    Returns
    -------
    np.ndarray
        Centers, shape ``(n_centers, dim)``. Along every dimension each of the
        ``n_centers`` equal-width strata holds exactly one coordinate.
    """
    if n_centers < 1 or dim < 1:
        raise ValueError('`n_centers` and `dim` must be positive.')
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if bounds.shape[0] != dim:
        raise BoundsError(f'Expected {dim} bound pairs, got {bounds.shape[0]}.')
    lo, hi = bounds[:, 0], bounds[:, 1]
    bad = np.flatnonzero(~(lo < hi))
    if bad.size > 0:
        raise BoundsError(f'Lower bound not below upper bound in dimensions '
                          f'{bad.tolist()}.')
    sampler = qmc.LatinHypercube(d=dim, seed=np.random.default_rng(seed))
    return qmc.scale(sampler.random(n_centers), lo, hi)


def make_lifting(states: np.ndarray,
                 input_dim: int,
                 monomial_degree: int = 2,
                 n_rbf: int = 10,
                 alpha: float = 0.1,
                 delta: float = 0.001,
                 include_constant: bool = False,
                 seed: int = 0) -> LiftingConfig:
    """Build a lifting whose RBF centers cover the data's polynomial lift.

    Centers are drawn by Latin hypercube inside the per-coordinate min/max box
    of ``lift_poly(states)``.

    Parameters
    ----------
    states : np.ndarray
        Training states stacked as rows, shape ``(k, n)``.
    input_dim : int
        Number of inputs.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[1]
    centers = np.zeros((0, comb(n + monomial_degree, monomial_degree) - 1))
    if n_rbf > 0:
        poly = lift_poly(states, monomial_degree)
        lo, hi = poly.min(axis=0), poly.max(axis=0)
        # Degenerate coordinates get a unit-width box.
        flat = ~(hi > lo)
        lo, hi = np.where(flat, lo - 0.5, lo), np.where(flat, hi + 0.5, hi)
        centers = make_centers(n_rbf, poly.shape[1], np.c_[lo, hi], seed)
    return LiftingConfig(
        state_dim=n,
        input_dim=input_dim,
        monomial_degree=monomial_degree,
        centers=centers,
        alpha=alpha,
        delta=delta,
        include_constant=include_constant,
    )


def lift_state(x: np.ndarray, cfg: LiftingConfig) -> np.ndarray:
    """Lift states.

    Parameters
    ----------
    x : np.ndarray
        State of shape ``(n,)`` or stacked states of shape ``(k, n)``.
    cfg : LiftingConfig
        Lifting parameters.

    Returns
    -------
    np.ndarray
        Lifted state(s), shape ``(p_theta,)`` or ``(k, p_theta)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != cfg.state_dim:
        raise DataError(f'Expected states of dimension {cfg.state_dim}, got '
                        f'{x.shape[-1]}.')
    if not np.all(np.isfinite(x)):
        raise DataError('Cannot lift non-finite states.')
    poly = lift_poly(x, cfg.monomial_degree)
    blocks = [poly]
    if cfg.n_rbf > 0:
        diff = poly[..., np.newaxis, :] - cfg.centers
        r = cfg.alpha * np.linalg.norm(diff, axis=-1) + cfg.delta
        blocks.append(thin_plate(r))
    if cfg.include_constant:
        blocks.append(np.ones(x.shape[:-1] + (1, )))
    theta = np.concatenate(blocks, axis=-1)
    # Keep the raw state bit-exact.
    theta[..., :cfg.state_dim] = x
    return theta


def lift_input(u: np.ndarray, cfg: LiftingConfig) -> np.ndarray:
    """Lift inputs (identity map)."""
    u = np.asarray(u, dtype=float)
    if cfg.input_dim == 0 and u.size == 0:
        return u.reshape(u.shape[:-1] + (0, )) if u.ndim > 0 else np.zeros(0)
    if u.ndim == 0 or u.shape[-1] != cfg.input_dim:
        raise DataError(f'Expected inputs of dimension {cfg.input_dim}, got '
                        f'shape {u.shape}.')
    if not np.all(np.isfinite(u)):
        raise DataError('Cannot lift non-finite inputs.')
    return u.copy()


def retract(theta: np.ndarray, n: int) -> np.ndarray:
    """Recover the state from a lifted state (its first ``n`` entries)."""
    theta = np.asarray(theta)
    if theta.shape[-1] < n:
        raise DataError(f'Lifted state of length {theta.shape[-1]} cannot hold '
                        f'a state of dimension {n}.')
    return theta[..., :n].copy()
