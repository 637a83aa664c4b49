import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdelab import (
    MissingIncrementsError,
    ModelParams,
    ObservationMatrix,
    SimGrid,
    ZeroDenominatorError,
    build_eigensequence,
    decomposition_terms,
    mle_continuous,
    mle_discrete,
    normalize_error,
    simulate_ensemble,
    subsample,
    theoretical_std,
    upsilon,
)
from spdelab.estimators import _continuous_numerator, _weights


def make_params(**kw):
    base = dict(theta0=1.0, beta=0.6, gamma=0.6, sigma=1.0, dimension=1)
    base.update(kw)
    return ModelParams(**base)


class TestUpsilon:
    def test_examples(self):
        p1 = make_params(beta=1.0, gamma=1.0)
        assert upsilon(p1, 1.0) == pytest.approx(1.0 / math.sqrt(6.0), rel=1e-12)
        assert upsilon(p1, 1.0) == pytest.approx(0.408248, abs=5e-7)
        p2 = make_params(beta=0.6)
        assert upsilon(p2, 1.0) == pytest.approx(1.0 / math.sqrt(4.4), rel=1e-12)
        assert upsilon(p2, 1.0) == pytest.approx(0.476731, abs=5e-7)

    def test_theta_scaling(self):
        base = upsilon(make_params(beta=0.9), 1.3)
        quadrupled = upsilon(make_params(beta=0.9, theta0=4.0), 1.3)
        assert quadrupled == pytest.approx(base / 2.0, rel=1e-12)


class TestNormalizeError:
    def test_zero_at_truth(self):
        p = make_params()
        assert normalize_error(p.theta0, p, 1.0, 20, 5.0) == 0.0

    def test_theoretical_std_value(self):
        p = make_params(beta=0.6)
        assert theoretical_std(p, 1.0, 20, 5.0) == pytest.approx(0.034764, abs=5e-6)

    def test_exact_affine_in_theta_hat(self):
        p = make_params()
        slope = -1.0 / theoretical_std(p, 1.0, 7, 3.0)
        for th in (0.0, 0.5, 1.0, 2.0, -1.0):
            assert normalize_error(th, p, 1.0, 7, 3.0) == pytest.approx(
                (th - p.theta0) * slope, rel=1e-12
            )


def deterministic_obs(theta0=1.0, dt=0.1, m=10, u0=1.0):
    """Single decaying mode with lam = 1 observed exactly."""
    values = u0 * np.exp(-theta0 * dt * np.arange(m + 1))[None, :]
    return ObservationMatrix(values=values, T=dt * m)


class TestMleDiscrete:
    def test_deterministic_hand_value(self):
        p = make_params(beta=0.5, sigma=0.0, initial_modes=(1.0,))
        eigs = build_eigensequence(1, 1)
        rec = mle_discrete(deterministic_obs(dt=0.1), p, eigs)
        assert rec.theta_hat == pytest.approx((1 - math.exp(-0.1)) / 0.1, rel=1e-12)
        assert rec.theta_hat == pytest.approx(0.951626, abs=5e-7)

    def test_deterministic_limit_recovers_drift(self):
        p = make_params(beta=0.5, sigma=0.0, initial_modes=(1.0,))
        eigs = build_eigensequence(1, 1)
        rec = mle_discrete(deterministic_obs(dt=1e-3, m=1000), p, eigs)
        assert abs(rec.theta_hat - 1.0) < 5e-4

    def test_zero_denominator(self):
        p = make_params(sigma=0.0)
        eigs = build_eigensequence(1, 2)
        obs = ObservationMatrix(values=np.zeros((2, 5)), T=1.0)
        with pytest.raises(ZeroDenominatorError):
            mle_discrete(obs, p, eigs)

    @given(exponent=st.integers(-6, 6))
    def test_scale_equivariance_power_of_two_exact(self, exponent):
        p = make_params()
        eigs = build_eigensequence(1, 3)
        rng = np.random.default_rng(5)
        obs = ObservationMatrix(values=rng.standard_normal((3, 12)), T=2.0)
        scaled = ObservationMatrix(values=obs.values * 2.0**exponent, T=2.0)
        assert mle_discrete(scaled, p, eigs).theta_hat == mle_discrete(obs, p, eigs).theta_hat

    def test_scale_equivariance_general(self):
        p = make_params()
        eigs = build_eigensequence(1, 3)
        rng = np.random.default_rng(6)
        obs = ObservationMatrix(values=rng.standard_normal((3, 12)), T=2.0)
        base = mle_discrete(obs, p, eigs).theta_hat
        for c in (0.37, -1.9, 113.0):
            scaled = ObservationMatrix(values=obs.values * c, T=2.0)
            assert mle_discrete(scaled, p, eigs).theta_hat == pytest.approx(base, rel=1e-12)

    def test_tied_mode_permutation_symmetry(self):
        # d=2 spectrum starts 2, 5, 5: rows 1 and 2 share an eigenvalue
        p = make_params(dimension=2, gamma=1.5)
        eigs = build_eigensequence(2, 3)
        rng = np.random.default_rng(7)
        values = rng.standard_normal((3, 20))
        swapped = values[[0, 2, 1]]
        a = mle_discrete(ObservationMatrix(values=values, T=1.0), p, eigs).theta_hat
        b = mle_discrete(ObservationMatrix(values=swapped, T=1.0), p, eigs).theta_hat
        assert a == pytest.approx(b, rel=1e-12)

    def test_monte_carlo_mean_at_reference_config(self):
        """200 replications at the dense-grid reference point.

        The first-order discretization bias of the left-point estimator is
        -theta^2 dt sum(lam^{4b}) / (2 sum(lam^{2b})) plus an O(1/(T J))
        autoregression term; the sample mean must sit within 3 standard
        errors of that prediction (and, at this dt, inside the coarser
        +-0.0074 window around the truth).
        """
        p = make_params()
        n, m, t, reps = 20, 10_000, 5.0, 200
        eigs = build_eigensequence(1, n)
        grid = SimGrid(T=t, M=m, oversample=4)
        thetas = np.empty(reps)
        for r in range(reps):
            ens = simulate_ensemble(p, eigs, grid, n, 314159, r)
            thetas[r] = mle_discrete(subsample(ens), p, eigs).theta_hat
        lam = eigs.lambdas
        s2b = np.sum(lam ** (2 * p.beta * 2))
        s1b = np.sum(lam ** (2 * p.beta))
        predicted = p.theta0 - p.theta0**2 * (t / m) * s2b / (2 * s1b) + 2.0 / (t * s1b)
        se = theoretical_std(p, eigs.varpi, n, t) / math.sqrt(reps)
        assert abs(thetas.mean() - predicted) < 3.0 * se
        assert abs(thetas.mean() - p.theta0) < 0.0074


class TestMleContinuous:
    def test_deterministic_recovery_ito(self):
        p = make_params(beta=0.5, sigma=0.0, initial_modes=(1.0,))
        eigs = build_eigensequence(1, 1)
        grid = SimGrid(T=1.0, M=100, oversample=100)  # 1e4 fine steps
        ens = simulate_ensemble(p, eigs, grid, 1, 0, 0)
        rec = mle_continuous(ens, p, eigs, numerator_mode="ito_identity")
        assert abs(rec.theta_hat - p.theta0) < 1e-4

    def test_fine_riemann_numerator_equals_discrete_numerator(self):
        p = make_params()
        eigs = build_eigensequence(1, 4)
        grid = SimGrid(T=1.0, M=50, oversample=1)
        ens = simulate_ensemble(p, eigs, grid, 4, 3, 0)
        w_num, _ = _weights(p, eigs.lambdas[:4])
        riemann = _continuous_numerator(ens, p, w_num, "fine_riemann")
        u = subsample(ens).values
        left = u[:, :-1]
        discrete = -float(w_num @ np.sum(left * (u[:, 1:] - left), axis=1))
        assert riemann == discrete

    def test_unknown_mode_rejected(self):
        p = make_params()
        eigs = build_eigensequence(1, 2)
        ens = simulate_ensemble(p, eigs, SimGrid(T=1.0, M=4), 2, 0, 0)
        with pytest.raises(ValueError, match="numerator mode"):
            mle_continuous(ens, p, eigs, numerator_mode="midpoint")

    def test_zero_denominator(self):
        p = make_params(sigma=0.0)
        eigs = build_eigensequence(1, 1)
        ens = simulate_ensemble(p, eigs, SimGrid(T=1.0, M=4), 1, 0, 0)
        with pytest.raises(ZeroDenominatorError):
            mle_continuous(ens, p, eigs)


class TestDecomposition:
    def test_requires_increments(self):
        p = make_params()
        eigs = build_eigensequence(1, 2)
        ens = simulate_ensemble(p, eigs, SimGrid(T=1.0, M=4, oversample=2), 2, 0, 0)
        with pytest.raises(MissingIncrementsError):
            decomposition_terms(ens, p, eigs)

    def test_requires_strictly_finer_grid(self):
        p = make_params()
        eigs = build_eigensequence(1, 2)
        ens = simulate_ensemble(
            p, eigs, SimGrid(T=1.0, M=4, oversample=1), 2, 0, 0, with_increments=True
        )
        with pytest.raises(ValueError, match="oversample"):
            decomposition_terms(ens, p, eigs)

    def test_sigma_zero_kills_stochastic_terms(self):
        p = make_params(sigma=0.0, initial_modes=(1.0, 1.0))
        eigs = build_eigensequence(1, 2)
        ens = simulate_ensemble(
            p, eigs, SimGrid(T=1.0, M=5, oversample=4), 2, 0, 0, with_increments=True
        )
        terms = decomposition_terms(ens, p, eigs)
        assert terms.Y_coarse == 0.0 and terms.Y_fine == 0.0
        assert terms.I_coarse > 0 and terms.I_fine > 0

    def test_information_terms_nonnegative(self):
        p = make_params()
        eigs = build_eigensequence(1, 3)
        grid = SimGrid(T=0.5, M=4, oversample=8)
        for rep in range(100):
            ens = simulate_ensemble(p, eigs, grid, 3, 2024, rep, with_increments=True)
            terms = decomposition_terms(ens, p, eigs)
            assert terms.I_coarse >= 0.0
            assert terms.I_fine >= 0.0

    def test_identity_residual_shrinks_as_grid_refines(self):
        """theta~ - theta0 = (theta0 V - sigma Y) / I holds up to the V
        quadrature error, which must decay as the fine grid refines."""
        p = make_params()
        eigs = build_eigensequence(1, 5)
        medians = []
        for oversample in (8, 16, 32, 64):
            grid = SimGrid(T=1.0, M=20, oversample=oversample)
            res = []
            for rep in range(50):
                ens = simulate_ensemble(p, eigs, grid, 5, 909, rep, with_increments=True)
                terms = decomposition_terms(ens, p, eigs)
                rec = mle_discrete(subsample(ens), p, eigs)
                lhs = rec.theta_hat - p.theta0
                rhs = (p.theta0 * terms.V - p.sigma * terms.Y_coarse) / terms.I_coarse
                res.append(abs(lhs - rhs))
            medians.append(np.median(res))
        assert all(b < a for a, b in zip(medians, medians[1:]))

    def test_coarse_increments_consistent_with_fine(self):
        p = make_params()
        eigs = build_eigensequence(1, 2)
        grid = SimGrid(T=1.0, M=5, oversample=4)
        ens = simulate_ensemble(p, eigs, grid, 2, 8, 0, with_increments=True)
        terms = decomposition_terms(ens, p, eigs)
        # recompute Y_coarse by summing fine increments within observation steps
        lam = eigs.lambdas[:2]
        w_y = lam ** (2 * p.beta + p.gamma)
        dw_sum = ens.noise_increments.reshape(2, 5, 4).sum(axis=2)
        left = ens.values[:, ::4][:, :-1]
        expected = float(w_y @ np.sum(left * dw_sum, axis=1))
        assert terms.Y_coarse == pytest.approx(expected, rel=1e-12)


class TestEstimateRecord:
    def test_zscore_matches_normalization(self):
        p = make_params()
        eigs = build_eigensequence(1, 3)
        ens = simulate_ensemble(p, eigs, SimGrid(T=2.0, M=20, oversample=2), 3, 5, 1)
        rec = mle_discrete(subsample(ens), p, eigs)
        assert rec.z_score == pytest.approx(
            normalize_error(rec.theta_hat, p, eigs.varpi, 3, 2.0), rel=1e-12
        )
        assert rec.N == 3 and rec.M == 20 and rec.T == 2.0
        assert rec.replication == 1
