"""Duffing oscillator data, measurement noise and episode CSV files."""

import csv
import math
import pathlib
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import DataError


@dataclass(frozen=True, eq=False)
class Episode:
    """One contiguous time series.

    Attributes
    ----------
    id : int
        Episode identifier.
    dt : float
        Timestep in seconds.
    states : np.ndarray
        States, shape ``(q + 1, n)``.
    inputs : np.ndarray
        Inputs, shape ``(q + 1, m)``. The last row is never used for fitting.
    """

    id: int
    dt: float
    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=float, ndmin=2)
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1) if inputs.size else np.zeros(
                (states.shape[0], 0))
        if not self.dt > 0:
            raise DataError(f'Episode {self.id}: `dt` must be positive.')
        if states.shape[0] != inputs.shape[0]:
            raise DataError(f'Episode {self.id}: {states.shape[0]} state rows '
                            f'but {inputs.shape[0]} input rows.')
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(inputs))):
            raise DataError(f'Episode {self.id}: non-finite entries.')
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'inputs', np.array(inputs))

    @property
    def n_steps(self) -> int:
        """Number of transitions ``q``."""
        return self.states.shape[0] - 1

    @property
    def n_states(self) -> int:
        return self.states.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.states.shape[0]) * self.dt

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Episode):
            return NotImplemented
        return (self.id == other.id and self.dt == other.dt
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.inputs, other.inputs))


@dataclass(frozen=True)
class DuffingParams:
    """Duffing oscillator ``m x'' + c x' + k1 x + k2 x^3 = f``."""

    mass: float = 0.1
    damping: float = 0.01
    k1: float = 0.1
    k2: float = 0.001

    def __post_init__(self) -> None:
        if not self.mass > 0:
            raise ValueError('Mass must be positive.')


@dataclass(frozen=True)
class NoiseSpec:
    """Target signal-to-noise ratio in dB. ``inf`` means no noise."""

    snr_db: float
    seed: int = 0


def simulate_duffing(params: DuffingParams,
                     forcing: np.ndarray,
                     x0: Sequence[float],
                     dt: float,
                     steps: int,
                     episode_id: int = 0) -> Episode:
    """Integrate the Duffing oscillator with forward Euler.

    Parameters
    ----------
    params : DuffingParams
        Physical constants.
    forcing : np.ndarray
        Force samples ``f_k``, at least ``steps`` long. Sample ``steps`` (if
        present) is stored as the final input row.
    x0 : Sequence[float]
        Initial ``[position, velocity]``.
    dt : float
        Timestep.
    steps : int
        Number of Euler steps ``q``.

    Returns
    -------
    Episode
        ``q + 1`` states with the forcing as the single input channel.
    """
    if not dt > 0:
        raise ValueError('`dt` must be positive.')
    if steps < 1:
        raise ValueError('`steps` must be at least 1.')
    forcing = np.asarray(forcing, dtype=float).ravel()
    if forcing.size < steps:
        raise ValueError(f'Need {steps} forcing samples, got {forcing.size}.')
    m, c, k1, k2 = params.mass, params.damping, params.k1, params.k2
    states = np.empty((steps + 1, 2))
    states[0] = x0
    pos, vel = float(x0[0]), float(x0[1])
    for k in range(steps):
        acc = (forcing[k] - c * vel - k1 * pos - k2 * pos**3) / m
        pos, vel = pos + dt * vel, vel + dt * acc
        if not (math.isfinite(pos) and math.isfinite(vel)):
            raise DataError(f'Duffing integration blew up at step {k + 1}.')
        states[k + 1] = pos, vel
    inputs = np.zeros((steps + 1, 1))
    n_in = min(forcing.size, steps + 1)
    inputs[:n_in, 0] = forcing[:n_in]
    return Episode(id=episode_id, dt=dt, states=states, inputs=inputs)


def make_multisine(amplitude: float,
                   n_harmonics: int,
                   base_period: float,
                   dt: float,
                   steps: int,
                   seed: int = 0) -> np.ndarray:
    """Multisine with random phases, scaled to a peak of ``amplitude``.

    Harmonic ``j`` (1-based) has period ``base_period / j``. Returns
    ``steps + 1`` samples so the last input row of an episode is defined.
    """
    if steps < 1:
        raise ValueError('`steps` must be at least 1.')
    if n_harmonics < 0:
        raise ValueError('`n_harmonics` must be nonnegative.')
    t = np.arange(steps + 1) * dt
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, size=n_harmonics)
    f = np.zeros_like(t)
    for j, phase in enumerate(phases, start=1):
        f += np.sin(2 * np.pi * j * t / base_period + phase)
    peak = np.max(np.abs(f))
    if peak > 0:
        f *= amplitude / peak
    return f


def add_noise_snr(episode: Episode, spec: NoiseSpec) -> Episode:
    """Add white Gaussian measurement noise to the states.

    Each state channel gets noise with standard deviation
    ``std(channel) * 10**(-snr_db / 20)``. Inputs are untouched.
    """
    if math.isinf(spec.snr_db) and spec.snr_db > 0:
        return replace(episode)
    sigma_x = np.std(episode.states, axis=0)
    if np.any(sigma_x == 0):
        raise DataError(f'Episode {episode.id}: constant state channel(s) '
                        f'{np.flatnonzero(sigma_x == 0).tolist()}; SNR is '
                        'undefined.')
    sigma_n = sigma_x * 10**(-spec.snr_db / 20)
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(episode.states.shape) * sigma_n
    return replace(episode, states=episode.states + noise)


def measure_snr(clean: Episode, noisy: Episode) -> np.ndarray:
    """Per-channel SNR in dB between a clean and a noisy episode.

    Channels with no difference report ``inf``.
    """
    if clean.states.shape != noisy.states.shape:
        raise DataError(f'Shape mismatch: {clean.states.shape} vs '
                        f'{noisy.states.shape}.')
    var_x = np.var(clean.states, axis=0)
    var_n = np.var(noisy.states - clean.states, axis=0)
    with np.errstate(divide='ignore'):
        return 10 * np.log10(var_x / var_n)


def noisy_copies(episodes: Sequence[Episode], snr_db: float,
                 seed: int) -> List[Episode]:
    """Add noise to every episode with an independent per-episode stream."""
    seeds = np.random.SeedSequence([seed, _snr_key(snr_db)]).spawn(
        len(episodes))
    return [
        add_noise_snr(ep, NoiseSpec(snr_db, int(s.generate_state(1)[0])))
        for ep, s in zip(episodes, seeds)
    ]


def _snr_key(snr_db: float) -> int:
    # Stable integer key so each SNR level gets its own noise stream.
    if math.isinf(snr_db):
        return 0
    return int(round(snr_db * 1000)) % (2**32)


def _fmt(v: float) -> str:
    return repr(float(v))


def save_episodes(episodes: Sequence[Episode],
                  path: Union[str, pathlib.Path]) -> None:
    """Write episodes to one CSV file.

    Header is ``episode,t,x1..xn,u1..um``; one row per timestep.
    """
    episodes = list(episodes)
    path = pathlib.Path(path)
    if episodes:
        n, m = episodes[0].n_states, episodes[0].n_inputs
        for ep in episodes:
            if (ep.n_states, ep.n_inputs) != (n, m):
                raise DataError(f'Episode {ep.id} has {ep.n_states} states and '
                                f'{ep.n_inputs} inputs, expected {n} and {m}.')
    lines = []
    if episodes:
        header = (['episode', 't'] + [f'x{i + 1}' for i in range(n)]
                  + [f'u{i + 1}' for i in range(m)])
        lines.append(','.join(header))
        for ep in episodes:
            for t, x, u in zip(ep.t, ep.states, ep.inputs):
                cells = [str(ep.id), _fmt(t)] + [_fmt(v) for v in x]
                cells += [_fmt(v) for v in u]
                lines.append(','.join(cells))
    with open(path, 'w', newline='\n') as f:
        f.write(''.join(line + '\n' for line in lines))


def load_episodes(path: Union[str, pathlib.Path]) -> List[Episode]:
    """Read episodes written by :func:`save_episodes`.

    Single-row episodes carry no timing information and get ``dt = 1``.
    """
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r]
    if not rows:
        return []
    header_line, header = rows[0]
    if len(header) < 3 or header[:2] != ['episode', 't']:
        raise DataError(f'Line {header_line}: expected header starting with '
                        '`episode,t`.')
    names = header[2:]
    n = sum(1 for c in names if c.startswith('x'))
    m = sum(1 for c in names if c.startswith('u'))
    expected = ([f'x{i + 1}' for i in range(n)]
                + [f'u{i + 1}' for i in range(m)])
    if names != expected or n == 0:
        raise DataError(f'Line {header_line}: malformed header {header}.')
    groups = {}
    order = []
    last = None
    for line_no, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f'Line {line_no}: expected {len(header)} cells, '
                            f'got {len(row)}.')
        try:
            ep_id = int(row[0])
            values = [float(c) for c in row[1:]]
        except ValueError as e:
            raise DataError(f'Line {line_no}: {e}') from None
        if ep_id != last:
            if ep_id in groups:
                raise DataError(f'Episode {ep_id}: rows are not contiguous '
                                f'(line {line_no}).')
            groups[ep_id] = []
            order.append(ep_id)
            last = ep_id
        groups[ep_id].append(values)
    episodes = []
    for ep_id in order:
        data = np.array(groups[ep_id])
        t = data[:, 0]
        dt = t[1] - t[0] if t.size > 1 else 1.0
        if t.size > 1 and not (dt > 0 and np.allclose(
                np.diff(t), dt, rtol=1e-6, atol=0)):
            raise DataError(f'Episode {ep_id}: time column is not uniformly '
                            'increasing.')
        episodes.append(
            Episode(id=ep_id,
                    dt=dt,
                    states=data[:, 1:1 + n],
                    inputs=data[:, 1 + n:]))
    return episodes
