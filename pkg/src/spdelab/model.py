"""Spectral model on the box (0, pi)^d: exact Laplacian spectrum and closed-form
mode statistics.

The solution field is expanded in Dirichlet eigenfunctions of the Laplacian on a
d-dimensional box, so the eigenvalue roots are exact lattice sums and every
second-order statistic of the Fourier modes has a closed form.  Those closed
forms double as oracles for the Monte Carlo machinery in the rest of the
package.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AssumptionWarning",
    "ModelParams",
    "EigenSequence",
    "build_eigensequence",
    "weyl_constant",
    "spectral_sum",
    "second_moment",
    "fourth_moment",
    "covariance",
    "fisher_information",
    "fisher_information_asymptotic",
]

SUPPORTED_DIMENSIONS = (1, 2, 3, 4)

# Hard cap on enumerated lattice points; beyond this the cube no longer fits in
# memory comfortably and the request is almost certainly a mistake.
_MAX_LATTICE_POINTS = 200_000_000


class AssumptionWarning(UserWarning):
    """Parameter set leaves the regime covered by the asymptotic theory."""


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the fractional heat model.

    The k-th Fourier mode is an Ornstein-Uhlenbeck process with decay rate
    theta0 * lambda_k**(2*beta) and noise scale sigma * lambda_k**(-gamma).
    sigma = 0 is allowed and gives deterministic decay, used by exactness
    tests.  initial_modes optionally fixes u_k(0); the default is zero.
    """

    theta0: float
    beta: float
    gamma: float
    sigma: float
    dimension: int
    initial_modes: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.theta0 > 0:
            raise ValueError(f"theta0 must be positive, got {self.theta0}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension}")
        if self.initial_modes is not None:
            object.__setattr__(self, "initial_modes", tuple(float(v) for v in self.initial_modes))
        if self.beta <= 0.5:
            warnings.warn(
                f"beta={self.beta} <= 1/2: outside the regime where consistency and "
                "asymptotic normality of the drift estimators are guaranteed",
                AssumptionWarning,
                stacklevel=2,
            )
        if 2.0 * self.gamma <= self.dimension:
            warnings.warn(
                f"gamma={self.gamma} <= d/2 with d={self.dimension}: the noise is too rough "
                "for well-posedness of the full field (needs 2*gamma > d); estimator "
                "guarantees do not apply",
                AssumptionWarning,
                stacklevel=2,
            )

    def initial_values(self, n_modes: int) -> np.ndarray:
        """First n_modes initial values u_k(0), zero-padded default."""
        u0 = np.zeros(n_modes)
        if self.initial_modes is not None:
            if len(self.initial_modes) < n_modes:
                raise ValueError(
                    f"initial_modes has {len(self.initial_modes)} entries, need {n_modes}"
                )
            u0[:] = self.initial_modes[:n_modes]
        return u0


@dataclass(frozen=True, eq=False)
class EigenSequence:
    """Sorted eigenvalue roots lambda_k = sqrt(-nu_k) on (0, pi)^d.

    lambdas[k-1]**2 is the k-th smallest value of m_1^2 + ... + m_d^2 over
    positive integer tuples, ties kept with multiplicity.  varpi is the growth
    constant: lambda_k^2 * k^(-2/d) -> varpi.
    """

    dimension: int
    lambdas: np.ndarray
    varpi: float

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("lambdas must be a nonempty 1-d array")
        if not (lam[0] > 0 and np.all(np.diff(lam) >= 0)):
            raise ValueError("lambdas must be positive and nondecreasing")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    def __len__(self) -> int:
        return self.lambdas.size


def weyl_constant(dimension: int) -> float:
    """Growth constant of the box spectrum: (2^d / V_d)^(2/d), V_d the unit-ball volume."""
    if dimension not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"unsupported dimension {dimension}; supported: {SUPPORTED_DIMENSIONS}")
    ball_volume = math.pi ** (dimension / 2.0) / math.gamma(dimension / 2.0 + 1.0)
    return (2.0**dimension / ball_volume) ** (2.0 / dimension)


def build_eigensequence(dimension: int, count: int) -> EigenSequence:
    """Enumerate the first `count` eigenvalue roots on (0, pi)^d.

    Does a doubling search on the lattice radius: all points with
    m_1^2+...+m_d^2 <= m_max^2 lie inside the cube [1, m_max]^d, so sorting the
    cube's squared norms yields the correct leading block once the count-th
    value is below m_max^2.
    """
    if dimension not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"unsupported dimension {dimension}; supported: {SUPPORTED_DIMENSIONS}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    varpi = weyl_constant(dimension)
    if dimension == 1:
        lam = np.arange(1, count + 1, dtype=float)
        return EigenSequence(dimension=1, lambdas=lam, varpi=varpi)

    # |nu_count| ~ varpi * count^(2/d) gives the starting radius.
    m_max = int(math.sqrt(varpi) * count ** (1.0 / dimension) * 1.1) + 2
    while True:
        if m_max**dimension > _MAX_LATTICE_POINTS:
            raise ValueError(
                f"count={count} in dimension {dimension} needs {m_max**dimension} lattice "
                "points; enumeration bound overflow"
            )
        axis = np.arange(1, m_max + 1, dtype=np.int64) ** 2
        ssq = axis
        for _ in range(dimension - 1):
            ssq = (ssq[:, None] + axis[None, :]).ravel()
        ssq.sort()
        if ssq.size >= count and ssq[count - 1] <= m_max**2:
            lam = np.sqrt(ssq[:count].astype(float))
            return EigenSequence(dimension=dimension, lambdas=lam, varpi=varpi)
        m_max *= 2


def spectral_sum(eigs: EigenSequence, power: float, count: int) -> float:
    """Sum of lambda_k**power over the first `count` modes."""
    if count < 1 or count > len(eigs):
        raise ValueError(f"count must be in [1, {len(eigs)}], got {count}")
    return float(np.sum(eigs.lambdas[:count] ** power))


def _one_minus_exp_neg(x):
    """1 - exp(-x) without cancellation for small x."""
    return -np.expm1(-x)


def _relative_gap(y):
    """(exp(-y) - 1 + y) / y, i.e. 1 - (1 - exp(-y))/y, stable near zero."""
    y = np.asarray(y, dtype=float)
    small = y < 1e-3
    out = np.empty_like(y)
    ys = y[small]
    out[small] = ys / 2.0 - ys**2 / 6.0 + ys**3 / 24.0
    yl = y[~small]
    out[~small] = 1.0 + np.expm1(-yl) / yl
    return out if out.ndim else float(out)


def second_moment(params: ModelParams, lam: float, t: float) -> float:
    """E[u_k(t)^2] for a zero-started mode with eigenvalue root lam."""
    rate2 = 2.0 * params.theta0 * lam ** (2.0 * params.beta)
    scale = params.sigma**2 * lam ** (-2.0 * params.beta - 2.0 * params.gamma)
    return float(scale * _one_minus_exp_neg(rate2 * t) / (2.0 * params.theta0))


def fourth_moment(params: ModelParams, lam: float, t: float) -> float:
    """E[u_k(t)^4]; Gaussian, so exactly 3 * second_moment^2."""
    return 3.0 * second_moment(params, lam, t) ** 2


def covariance(params: ModelParams, lam: float, t: float, s: float) -> float:
    """E[u_k(t) u_k(s)] for a zero-started mode; argument order does not matter."""
    if t > s:
        t, s = s, t
    rate = params.theta0 * lam ** (2.0 * params.beta)
    scale = params.sigma**2 * lam ** (-2.0 * params.beta - 2.0 * params.gamma)
    # e^{-r(s-t)} - e^{-r(s+t)} = e^{-r(s-t)} * (1 - e^{-2rt}), exact zero at t=0
    return float(
        scale * math.exp(-rate * (s - t)) * _one_minus_exp_neg(2.0 * rate * t) / (2.0 * params.theta0)
    )


def fisher_information(params: ModelParams, eigs: EigenSequence, n_modes: int, horizon: float) -> float:
    """Exact information about the drift in n_modes modes observed on [0, horizon].

    Closed form: (1/(2 theta0)) * sum_k lambda_k^{2 beta} *
    (T - (1 - e^{-2 theta0 lambda_k^{2 beta} T}) / (2 theta0 lambda_k^{2 beta})).
    """
    if n_modes < 1 or n_modes > len(eigs):
        raise ValueError(f"n_modes must be in [1, {len(eigs)}], got {n_modes}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    lam2b = eigs.lambdas[:n_modes] ** (2.0 * params.beta)
    y = 2.0 * params.theta0 * lam2b * horizon
    per_mode = lam2b * horizon * _relative_gap(y)
    return float(np.sum(per_mode) / (2.0 * params.theta0))


def fisher_information_asymptotic(params: ModelParams, n_modes: int, horizon: float) -> float:
    """Large-(N, T) approximation varpi^beta * d * T * N^{2 beta/d + 1} / ((4 beta + 2 d) theta0)."""
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    d = params.dimension
    varpi = weyl_constant(d)
    return (
        varpi**params.beta
        * d
        * horizon
        * n_modes ** (2.0 * params.beta / d + 1.0)
        / ((4.0 * params.beta + 2.0 * d) * params.theta0)
    )
