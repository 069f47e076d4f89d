import math
from fractions import Fraction

import numpy as np
import pytest

from rwre import (
    Beta,
    CdfEstimate,
    DiscreteMixture,
    ZPath,
    batch_z_annealed,
    conditional_cdf_oracle,
    conditional_moment_oracle,
    deviation_bound,
    estimate_cdf,
    estimate_cdf_sweep,
    estimate_moment,
    exact_moment,
    phi,
    psi,
    read_cdf_csv,
    sup_loss,
    target_cdf_grid,
    write_cdf_csv,
)

BETA33 = Beta(3.0, 3.0)
BETA43 = Beta(4.0, 3.0)
DISC = DiscreteMixture(((0.3, 0.4), (0.7, 0.7)))


def phi_exact(alpha, beta, i, j):
    if i < alpha or j < beta:
        return Fraction(0)
    num = Fraction(1)
    for l in range(alpha):
        num *= i - l
    for l in range(beta):
        num *= j - l
    den = Fraction(1)
    for l in range(alpha + beta):
        den *= i + j - l
    return num / den


def psi_exact(l, M, i, j):
    if i < M or l <= 0:
        return Fraction(0)
    total = sum(math.comb(i, k) * math.comb(j, M - k) for k in range(min(l, M + 1)))
    return Fraction(total, math.comb(i + j, M))


def make_path(z):
    z = np.asarray(z, dtype=np.int64)
    n = z.size - 1
    return ZPath(n=n, hitting_time=int(n + 2 * z[:n].sum()), z=z, time_is_proxy=True)


class TestPhi:
    def test_spot_values(self):
        assert phi(1, 1, 1, 1) == pytest.approx(0.5, abs=0.0)
        assert phi(2, 3, 1, 7) == 0.0
        assert phi(0, 1, 3, 1) == pytest.approx(0.25, rel=1e-15)

    def test_ratio_form_for_single_order(self):
        for i, j in [(3, 1), (10, 5), (0, 4)]:
            assert phi(0, 1, i, j) == pytest.approx(j / (i + j), rel=1e-14)

    @pytest.mark.parametrize("alpha,beta", [(0, 0), (1, 1), (2, 1), (0, 3), (3, 2)])
    def test_matches_fraction_oracle(self, alpha, beta):
        for i in range(0, 7):
            for j in range(0, 7):
                want = float(phi_exact(alpha, beta, i, j))
                assert phi(alpha, beta, i, j) == pytest.approx(want, rel=1e-13, abs=1e-15)

    def test_bounded_by_inverse_binomial(self):
        rng = np.random.default_rng(0)
        for alpha in range(0, 9):
            for beta in range(0, 9 - alpha):
                cap = 1.0 / math.comb(alpha + beta, alpha)
                ii = rng.integers(0, 10**6, size=200)
                jj = rng.integers(0, 10**6, size=200)
                for i, j in zip(ii, jj):
                    v = phi(alpha, beta, int(i), int(j))
                    assert 0.0 <= v <= cap * (1 + 1e-12)
                assert phi(alpha, beta, alpha, beta) == pytest.approx(cap, rel=1e-12)

    def test_huge_counts_stay_finite(self):
        v = phi(3, 3, 10**10, 10**10)
        assert 0.0 < v < 1.0
        assert v == pytest.approx(float(phi_exact(3, 3, 10**10, 10**10)), rel=1e-12)

    def test_negative_orders_rejected(self):
        with pytest.raises(ValueError):
            phi(-1, 0, 1, 1)
        with pytest.raises(ValueError):
            phi(0, -2, 1, 1)


class TestGeneratingIdentity:
    # sum_{j >= beta} C(i-alpha+j-beta, i-alpha) a^{i+1} (1-a)^j = a^alpha (1-a)^beta
    @pytest.mark.parametrize("a", [0.2, 0.5, 0.8])
    def test_kernel_moment_identity(self, a):
        for alpha in range(4):
            for beta in range(4):
                for i in range(alpha, 13):
                    s = np.arange(0, 4000)
                    terms = np.exp(
                        (i + 1) * math.log(a)
                        + (beta + s) * math.log1p(-a)
                        + _log_comb(i - alpha + s, s)
                    )
                    want = a**alpha * (1 - a) ** beta
                    assert abs(terms.sum() - want) < 1e-10


def _log_comb(nn, kk):
    from scipy import special

    return special.gammaln(nn + 1.0) - special.gammaln(kk + 1.0) - special.gammaln(nn - kk + 1.0)


class TestPsi:
    def test_spot_values(self):
        assert psi(1, 2, 2, 2) == pytest.approx(1 / 6, rel=1e-14)
        assert psi(0, 3, 10, 10) == 0.0
        assert psi(4, 3, 2, 10) == 0.0  # i < M indicator
        assert psi(4, 3, 5, 10) == pytest.approx(1.0, abs=1e-12)

    def test_matches_binomial_formula_small(self):
        for total in range(0, 61, 5):
            for i in range(0, total + 1, 3):
                j = total - i
                for M in range(1, 11):
                    for l in range(0, M + 2):
                        want = float(psi_exact(l, M, i, j))
                        got = psi(l, M, i, j)
                        assert abs(got - want) < 1e-10, (l, M, i, j)

    def test_monotone_in_l_and_endpoints(self):
        i, j, M = 17, 9, 6
        vals = [psi(l, M, i, j) for l in range(M + 2)]
        assert vals[0] == 0.0
        assert vals[-1] == pytest.approx(1.0, abs=1e-12)
        assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))

    def test_huge_counts(self):
        # population ~2e10: the pmf recursion must not overflow or collapse
        i, j, M = 10**10, 2 * 10**10, 8
        vals = [psi(l, M, i, j) for l in range(M + 2)]
        assert vals[0] == 0.0
        assert vals[-1] == pytest.approx(1.0, abs=1e-9)
        assert all(0.0 <= v <= 1.0 for v in vals)
        # draws are i.i.d.-like with success fraction 1/3 in this limit
        from scipy import stats

        want = stats.binom.cdf(np.arange(-1, M + 1), M, 1 / 3)
        np.testing.assert_allclose(vals, want, atol=1e-5)

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            psi(-1, 2, 3, 3)
        with pytest.raises(ValueError):
            psi(4, 2, 3, 3)
        with pytest.raises(ValueError):
            psi(1, 0, 3, 3)


class TestEstimateMoment:
    def test_alpha_zero_visits_all(self):
        zp = make_path([0, 3, 1, 0, 2])
        est = estimate_moment(zp, 0, 1)
        assert est.visits == zp.n

    def test_degenerate_all_zero(self):
        zp = make_path([0, 0, 0, 0, 0, 0])
        est = estimate_moment(zp, 0, 1)
        assert est.value == 0.0
        est = estimate_moment(zp, 1, 1)
        assert est.visits == 0
        assert est.value == 0.0

    def test_hand_computed_average(self):
        zp = make_path([0, 2, 1, 4])
        # pairs (0,2), (2,1), (1,4); alpha=1 counts previous >= 1: two visits
        want = (phi(1, 1, 2, 1) + phi(1, 1, 1, 4)) / 2
        est = estimate_moment(zp, 1, 1)
        assert est.visits == 2
        assert est.value == pytest.approx(want, rel=1e-15)

    def test_monte_carlo_band(self):
        n, reps = 5000, 200
        grid = batch_z_annealed(BETA43, n=n, reps=reps, seed=71)
        m = exact_moment(BETA43, 1, 1)
        cap = 5 * (1 / math.comb(2, 1)) / math.sqrt(n)
        hits = 0
        for row in grid:
            est = estimate_moment(make_path(row), 1, 1)
            hits += abs(est.value - m) < cap
        assert hits >= 0.95 * reps

    def test_deviation_bound_formula(self):
        zp = make_path([0, 2, 1, 4])
        est = estimate_moment(zp, 1, 1)
        want = (zp.n / est.visits) * (1 / math.comb(2, 1)) * math.sqrt(1.0 / (2 * zp.n))
        assert deviation_bound(est, 1.0) == pytest.approx(want, rel=1e-15)
        empty = estimate_moment(make_path([0, 0, 0]), 2, 0)
        assert deviation_bound(empty, 1.0) == math.inf
        with pytest.raises(ValueError):
            deviation_bound(est, 0.0)


class TestEstimateCdf:
    def test_endpoints_and_monotone(self):
        zp = make_path(batch_z_annealed(BETA43, n=400, reps=1, seed=5)[0])
        for M in (1, 2, 5, 9):
            est = estimate_cdf(zp, M)
            assert est.grid_values[0] == 0.0
            if est.visits > 0:
                assert est.grid_values[-1] == 1.0
            assert np.all(np.diff(est.grid_values) >= -1e-15)
            assert est.grid_values.size == M + 2

    def test_degenerate_flagged(self):
        zp = make_path([0, 0, 0, 0])
        est = estimate_cdf(zp, 2)
        assert est.visits == 0
        assert est.meta.get("degenerate") is True
        assert np.all(est.grid_values[:-1] == 0.0)

    def test_rank_one_estimates_left_exit_moment(self):
        # zero-drift spec: counts grow like exp(sqrt(n)) fluctuations, so n
        # stays at the walk-feasible scale and overflowing draws are redrawn
        from rwre import StateOverflowError, derive_seed, simulate_z_branching

        reps, n = 50, 500
        m01 = exact_moment(BETA33, 0, 1)
        hits = 0
        for rep in range(reps):
            seed = derive_seed(13, "rank1", rep)
            for bump in range(10):
                try:
                    zp = simulate_z_branching(BETA33, n, derive_seed(seed, bump))
                    break
                except StateOverflowError:
                    continue
            est = estimate_cdf(zp, 1)
            hits += abs(est.grid_values[1] - m01) < 0.05
        assert hits >= 0.9 * reps

    def test_hand_computed_rank_one(self):
        zp = make_path([0, 3, 2, 0])
        # previous counts 0,3,2; rank 1 keeps pairs (3,2), (2,0)
        v1 = (psi(1, 1, 3, 2) + psi(1, 1, 2, 0)) / 2
        est = estimate_cdf(zp, 1)
        assert est.visits == 2
        assert est.grid_values[1] == pytest.approx(v1, rel=1e-14)

    def test_sweep_matches_direct(self):
        zp = make_path(batch_z_annealed(BETA43, n=600, reps=1, seed=29)[0])
        top = zp.max_level()
        sweep = estimate_cdf_sweep(zp, top)
        assert [e.M for e in sweep] == list(range(1, top + 1))
        for est in sweep:
            direct = estimate_cdf(zp, est.M)
            assert est.visits == direct.visits
            np.testing.assert_allclose(est.grid_values, direct.grid_values, atol=1e-12)

    def test_evaluate_is_right_continuous_step(self):
        est = CdfEstimate(M=1, grid_values=np.array([0.0, 0.4, 1.0]), visits=3, n=3)
        assert est.evaluate(0.0) == 0.0
        assert est.evaluate(0.49) == 0.0
        assert est.evaluate(0.5) == 0.4
        assert est.evaluate(0.99) == 0.4
        assert est.evaluate(1.0) == 1.0


class TestSupLoss:
    def test_degenerate_is_one(self):
        zp = make_path([0, 0, 0, 0])
        est = estimate_cdf(zp, 2)
        assert sup_loss(est, BETA43) == pytest.approx(1.0, abs=1e-12)

    def test_exact_grid_within_oscillation(self):
        from rwre import exact_cdf

        M = 39
        vals = np.array([exact_cdf(BETA33, l / (M + 1)) for l in range(M + 2)])
        est = CdfEstimate(M=M, grid_values=vals, visits=10, n=10)
        # step approximation of a C^1 c.d.f.: loss below max slope / (M+1)
        assert sup_loss(est, BETA33) <= 1.875 / (M + 1)

    def test_population_grid_within_bias_plus_oscillation(self):
        M = 39
        grid = target_cdf_grid(BETA33, M)
        est = CdfEstimate(M=M, grid_values=grid, visits=10, n=10)
        bias = 7.6495 / (2**2 * (M + 2))  # quadratic-smoothness bias bound
        assert sup_loss(est, BETA33) <= bias + 1.875 / (M + 1)

    def test_perfect_uniform_steps(self):
        from rwre import UniformInterval, exact_cdf

        # F is linear with slope 2 on (0.2, 0.7); the step through the exact
        # grid values undershoots by exactly slope * cell width = 0.4
        spec = UniformInterval(0.2, 0.7)
        M = 4
        vals = np.array([exact_cdf(spec, l / 5) for l in range(6)])
        est = CdfEstimate(M=M, grid_values=vals, visits=5, n=5)
        assert sup_loss(est, spec) == pytest.approx(0.4, abs=1e-12)

    def test_discrete_atoms_use_left_limits(self):
        est = CdfEstimate(M=1, grid_values=np.array([0.0, 0.6, 1.0]), visits=4, n=4)
        # on [0, 0.5) the step sits at 0 while the target climbs to 0.3;
        # on [0.5, 1) the step at 0.6 is 0.4 under the post-atom value 1
        assert sup_loss(est, DISC) == pytest.approx(0.4, abs=1e-12)
        flat = CdfEstimate(M=1, grid_values=np.array([0.0, 0.3, 1.0]), visits=4, n=4)
        # the 0.7 atom lies inside [0.5, 1): sup is 1 - 0.3 just below u = 1
        assert sup_loss(flat, DISC) == pytest.approx(0.7, abs=1e-12)


class TestConditionalOracles:
    @pytest.mark.parametrize("alpha,beta", [(0, 0), (1, 1), (2, 3), (3, 2)])
    def test_moment_identity(self, alpha, beta):
        m = exact_moment(BETA43, alpha, beta)
        for i in (alpha, alpha + 1, 7, 15):
            got = conditional_moment_oracle(BETA43, alpha, beta, i)
            assert abs(got - m) < 1e-8

    def test_moment_below_alpha_is_zero(self):
        assert conditional_moment_oracle(BETA43, 2, 1, 1) == pytest.approx(0.0, abs=1e-12)

    def test_trivial_row_sums_to_one(self):
        for i in (0, 4, 9):
            assert conditional_moment_oracle(BETA43, 0, 0, i) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("M", [1, 3])
    def test_cdf_identity(self, M):
        grid = target_cdf_grid(BETA43, M)
        for i in (M, 12):
            for l in range(M + 2):
                got = conditional_cdf_oracle(BETA43, l, M, i)
                assert abs(got - grid[l]) < 1e-8

    def test_cdf_below_rank_is_zero(self):
        assert conditional_cdf_oracle(BETA43, 2, 3, 2) == 0.0

    def test_cdf_top_weight_is_one(self):
        assert conditional_cdf_oracle(BETA43, 4, 3, 5) == pytest.approx(1.0, abs=1e-9)


class TestCdfSerialization:
    def test_round_trip(self, tmp_path):
        zp = make_path(batch_z_annealed(BETA43, n=200, reps=1, seed=99)[0])
        est = estimate_cdf(zp, 3)
        path = tmp_path / "cdf.csv"
        write_cdf_csv(path, est, seed=99)
        back = read_cdf_csv(path)
        assert back.M == est.M
        assert back.visits == est.visits
        assert back.n == est.n
        np.testing.assert_array_equal(back.grid_values, est.grid_values)

    def test_reject_headerless(self, tmp_path):
        path = tmp_path / "cdf.csv"
        path.write_text("l,u,value\n0,0.0,0.0\n")
        with pytest.raises(ValueError):
            read_cdf_csv(path)
