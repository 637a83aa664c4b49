"""Exact-in-law simulation of the Fourier modes on a fine uniform grid.

Each mode is an Ornstein-Uhlenbeck process advanced with its exact Gaussian
transition, so there is no time-stepping bias: Monte Carlo discrepancies seen
downstream isolate estimator error, never solver error.  Randomness comes from
counter-based Philox streams keyed by (master_seed, replication, mode), which
makes every ensemble a pure function of its key material regardless of
execution schedule.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .model import EigenSequence, ModelParams

__all__ = [
    "SimGrid",
    "StreamKey",
    "PathEnsemble",
    "ObservationMatrix",
    "derive_stream",
    "exact_transition",
    "simulate_ensemble",
    "simulate_observations",
    "subsample",
    "write_observations",
    "read_observations",
]

OBS_MAGIC = b"SPDEOBS1"
_HEADER = struct.Struct("<8sQQd")  # magic, n_modes, M, T


@dataclass(frozen=True)
class SimGrid:
    """Uniform time grid: M observation steps on [0, T], each split into
    `oversample` fine simulation steps."""

    T: float
    M: int
    oversample: int = 8

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.oversample < 1:
            raise ValueError(f"oversample must be >= 1, got {self.oversample}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def fine_dt(self) -> float:
        return self.T / (self.M * self.oversample)

    @property
    def fine_steps(self) -> int:
        return self.M * self.oversample


@dataclass(frozen=True)
class StreamKey:
    """Key of one Gaussian stream; distinct keys give independent streams."""

    master_seed: int
    replication: int
    mode: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        if self.replication < 0 or self.mode < 0:
            raise ValueError("replication and mode must be nonnegative")


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Mode trajectories on the fine grid, with seed provenance.

    values[k, j] is mode k at time j * grid.fine_dt.  noise_increments, when
    present, holds the driving Brownian increments over each fine step,
    jointly sampled with the path (needed to rebuild stochastic integrals).
    """

    params: ModelParams
    eigs: EigenSequence
    grid: SimGrid
    values: np.ndarray
    master_seed: int
    replication: int
    noise_increments: np.ndarray | None = None

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    """Mode values at the coarse nodes t_i = i * T / M; row k is mode k."""

    values: np.ndarray
    T: float
    master_seed: int | None = None
    replication: int | None = None

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dt(self) -> float:
        return self.T / self.M


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Deterministic standard-normal stream for a key.

    Philox is counter-based, so streams can be created in any order on any
    worker; the spawn-key mixing guarantees distinct keys decorrelate.
    """
    seq = np.random.SeedSequence(key.master_seed, spawn_key=(key.replication, key.mode))
    return np.random.Generator(np.random.Philox(seq))


def _transition_coeffs(params: ModelParams, lam, step: float):
    """Per-mode decay factor and innovation standard deviation over one step."""
    lam = np.asarray(lam, dtype=float)
    rate = params.theta0 * lam ** (2.0 * params.beta)
    x = rate * step
    decay = np.exp(-x)
    # stationary-increment variance: sigma^2 lam^{-2 gamma} (1-e^{-2x})/(2 theta lam^{2 beta})
    conv_var = -np.expm1(-2.0 * x) / (2.0 * rate)
    noise_sd = params.sigma * lam ** (-params.gamma) * np.sqrt(conv_var)
    return decay, noise_sd


def exact_transition(u, lam, params: ModelParams, step: float, z):
    """One exact conditional draw of a mode: u(t + step) given u(t) = u.

    z is a standard normal variate (scalar or array, broadcast against u).
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    decay, noise_sd = _transition_coeffs(params, lam, step)
    return decay * u + noise_sd * z


def _bridge_gap(x):
    """rho^2 * (dt * var_conv - cov^2) for unit rate, i.e.
    x*(1-e^{-2x})/2 - (1-e^{-x})^2, series-protected for small x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-2
    xs = x[small]
    out[small] = xs**4 / 12.0 - xs**5 / 12.0 + 17.0 * xs**6 / 360.0
    xl = x[~small]
    out[~small] = xl * -np.expm1(-2.0 * xl) / 2.0 - np.expm1(-xl) ** 2
    return out


def _noise_paths(excitation: np.ndarray, decay: np.ndarray, strategy: str) -> np.ndarray:
    """Run the per-mode recursion n_j = decay * n_{j-1} + excitation_j, n_0 = 0.

    Both strategies perform the identical sequence of floating-point
    operations, so the result is bitwise independent of the choice; "auto"
    picks the faster shape (filtering long rows, vector stepping wide ones).
    """
    n_modes, n_steps = excitation.shape
    if strategy == "auto":
        strategy = "filter" if n_steps >= n_modes else "loop"
    out = np.empty_like(excitation)
    if strategy == "filter":
        for k in range(n_modes):
            out[k] = lfilter([1.0], [1.0, -decay[k]], excitation[k])
    elif strategy == "loop":
        state = np.zeros(n_modes)
        for j in range(n_steps):
            state = decay * state + excitation[:, j]
            out[:, j] = state
    else:
        raise ValueError(f"unknown recursion strategy {strategy!r}")
    return out


def simulate_ensemble(
    params: ModelParams,
    eigs: EigenSequence,
    grid: SimGrid,
    n_modes: int,
    master_seed: int,
    replication: int,
    with_increments: bool = False,
    recursion: str = "auto",
) -> PathEnsemble:
    """Simulate n_modes independent mode paths on the fine grid.

    Each mode consumes its own stream keyed (master_seed, replication, mode);
    the path is built from the first block of variates, so it is unchanged by
    with_increments.  When with_increments is set, a second block drives the
    conditional reconstruction of the Brownian increments given the path
    innovations (exact joint law).
    """
    if n_modes < 1 or n_modes > len(eigs):
        raise ValueError(f"n_modes must be in [1, {len(eigs)}], got {n_modes}")
    lam = eigs.lambdas[:n_modes]
    delta = grid.fine_dt
    n_steps = grid.fine_steps
    u0 = params.initial_values(n_modes)

    rate = params.theta0 * lam ** (2.0 * params.beta)
    x = rate * delta
    decay = np.exp(-x)
    conv_var = -np.expm1(-2.0 * x) / (2.0 * rate)
    noise_sd = params.sigma * lam ** (-params.gamma) * np.sqrt(conv_var)

    z_path = np.empty((n_modes, n_steps))
    z_bridge = np.empty((n_modes, n_steps)) if with_increments else None
    for k in range(n_modes):
        gen = derive_stream(StreamKey(master_seed, replication, k))
        z_path[k] = gen.standard_normal(n_steps)
        if with_increments:
            z_bridge[k] = gen.standard_normal(n_steps)

    values = np.zeros((n_modes, n_steps + 1))
    values[:, 0] = u0
    nonzero = np.nonzero(u0)[0]
    if nonzero.size:
        times = delta * np.arange(1, n_steps + 1, dtype=float)
        values[nonzero, 1:] = u0[nonzero, None] * np.exp(-np.outer(rate[nonzero], times))
    if params.sigma > 0:
        excitation = noise_sd[:, None] * z_path
        values[:, 1:] += _noise_paths(excitation, decay, recursion)

    increments = None
    if with_increments:
        # dW_j = cov/sd(conv) * z_path_j + resid_sd * z_bridge_j reproduces the
        # exact joint law of (path innovation, Brownian increment).
        cov = -np.expm1(-x) / rate
        coef = cov / np.sqrt(conv_var)
        resid_sd = np.sqrt(np.maximum(_bridge_gap(x) / rate**2, 0.0) / conv_var)
        increments = coef[:, None] * z_path + resid_sd[:, None] * z_bridge

    return PathEnsemble(
        params=params,
        eigs=eigs,
        grid=grid,
        values=values,
        master_seed=master_seed,
        replication=replication,
        noise_increments=increments,
    )


def subsample(ensemble: PathEnsemble) -> ObservationMatrix:
    """Keep every oversample-th fine node: the coarse observation matrix."""
    step = ensemble.grid.oversample
    return ObservationMatrix(
        values=ensemble.values[:, ::step].copy(),
        T=ensemble.grid.T,
        master_seed=ensemble.master_seed,
        replication=ensemble.replication,
    )


def simulate_observations(
    params: ModelParams,
    eigs: EigenSequence,
    grid: SimGrid,
    n_modes: int,
    master_seed: int,
    replication: int,
    block_steps: int = 1 << 16,
) -> ObservationMatrix:
    """Streaming variant: identical coarse observations without holding the
    fine path (per-mode state carry; bitwise equal to subsampling the full
    ensemble)."""
    if n_modes < 1 or n_modes > len(eigs):
        raise ValueError(f"n_modes must be in [1, {len(eigs)}], got {n_modes}")
    lam = eigs.lambdas[:n_modes]
    delta = grid.fine_dt
    stride = grid.oversample
    n_steps = grid.fine_steps
    block = max(stride, (block_steps // stride) * stride)
    u0 = params.initial_values(n_modes)

    rate = params.theta0 * lam ** (2.0 * params.beta)
    x = rate * delta
    decay = np.exp(-x)
    conv_var = -np.expm1(-2.0 * x) / (2.0 * rate)
    noise_sd = params.sigma * lam ** (-params.gamma) * np.sqrt(conv_var)

    coarse = np.empty((n_modes, grid.M + 1))
    coarse[:, 0] = u0
    for k in range(n_modes):
        gen = derive_stream(StreamKey(master_seed, replication, k))
        state = np.zeros(1)
        j0 = 0
        while j0 < n_steps:
            j1 = min(j0 + block, n_steps)
            z = gen.standard_normal(j1 - j0)
            if params.sigma > 0:
                chunk, state = lfilter([1.0], [1.0, -decay[k]], noise_sd[k] * z, zi=state)
                picks = chunk[stride - 1 :: stride]
            else:
                picks = np.zeros((j1 - j0) // stride)
            if u0[k] != 0.0:
                nodes = delta * np.arange(j0 + stride, j1 + 1, stride, dtype=float)
                picks = picks + u0[k] * np.exp(-rate[k] * nodes)
            coarse[k, j0 // stride + 1 : j1 // stride + 1] = picks
            j0 = j1
    return ObservationMatrix(
        values=coarse, T=grid.T, master_seed=master_seed, replication=replication
    )


def write_observations(obs: ObservationMatrix, path: str) -> None:
    """Binary dump: 32-byte header (magic, N, M, T), then row-major float64 LE."""
    payload = _HEADER.pack(OBS_MAGIC, obs.n_modes, obs.M, obs.T)
    data = np.ascontiguousarray(obs.values, dtype="<f8").tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".obs-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.write(data)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_observations(path: str) -> ObservationMatrix:
    """Read a dump produced by write_observations."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, n_modes, n_obs, horizon = _HEADER.unpack(header)
        if magic != OBS_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = n_modes * (n_obs + 1)
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {data.size}")
    values = data.reshape(n_modes, n_obs + 1).astype(float)
    return ObservationMatrix(values=values, T=horizon)
