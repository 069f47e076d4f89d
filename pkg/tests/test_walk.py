import math

import numpy as np
import pytest
from scipy import stats

from rwre import (
    Beta,
    DiscreteMixture,
    MaxStepsExceeded,
    RegimeError,
    UniformInterval,
    ZPath,
    batch_z_annealed,
    batch_z_quenched,
    derive_seed,
    exact_moment,
    invariant_tail,
    kernel_row,
    read_zpath_bin,
    read_zpath_csv,
    sample_environment,
    simulate_walk,
    simulate_z_branching,
    write_zpath_bin,
    write_zpath_csv,
)

BETA43 = Beta(4.0, 3.0)
BETA63 = Beta(6.0, 3.0)
UNI = UniformInterval(0.3, 0.9)
POINT_HALF = DiscreteMixture(((1.0, 0.5),))


class TestEnvironment:
    def test_point_mass_everywhere(self):
        env = sample_environment(DiscreteMixture(((1.0, 0.7),)), seed=11)
        for x in (-130, -1, 0, 5, 63, 64, 1000):
            assert env.omega(x) == pytest.approx(0.7, abs=0.0)

    def test_memoized_reads(self):
        env = sample_environment(Beta(3.0, 3.0), seed=2)
        first = env.omega(5)
        assert env.omega(5) == first
        assert env.omega_block(0, 10)[5] == first

    def test_read_order_does_not_matter(self):
        a = sample_environment(BETA43, seed=9)
        b = sample_environment(BETA43, seed=9)
        sites = [200, -3, 0, 64, -200, 17]
        va = [a.omega(x) for x in sites]
        vb = [b.omega(x) for x in reversed(sites)][::-1]
        assert va == vb

    def test_block_matches_pointwise(self):
        env = sample_environment(UNI, seed=4)
        block = env.omega_block(-70, 70)
        for k, x in enumerate(range(-70, 71)):
            assert block[k] == env.omega(x)

    def test_sample_mean_three_sigma(self):
        env = sample_environment(Beta(3.0, 3.0), seed=123)
        vals = env.omega_block(0, 10**5 - 1)
        mean = exact_moment(Beta(3.0, 3.0), 1, 0)
        var = exact_moment(Beta(3.0, 3.0), 2, 0) - mean**2
        assert abs(vals.mean() - mean) < 3 * math.sqrt(var / vals.size)


class TestZPath:
    def test_shape_and_origin_validated(self):
        with pytest.raises(ValueError):
            ZPath(n=3, hitting_time=3, z=np.zeros(3, dtype=np.int64))
        with pytest.raises(ValueError):
            ZPath(n=3, hitting_time=3, z=np.array([1, 0, 0, 0]))

    def test_occupation_counts(self):
        zp = ZPath(n=5, hitting_time=13, z=np.array([0, 2, 0, 1, 4, 9]))
        assert zp.occupation_count(0) == 5
        assert zp.occupation_count(1) == 3
        assert zp.occupation_count(2) == 2
        assert zp.occupation_count(5) == 0
        assert zp.max_level() == 4  # z[n] is beyond the estimation window


class TestWalk:
    def test_near_deterministic_right_drift(self):
        env = sample_environment(DiscreteMixture(((1.0, 1.0 - 1e-12),)), seed=0)
        zp = simulate_walk(env, n=10, seed=1)
        assert zp.hitting_time == 10
        assert np.all(zp.z == 0)

    def test_step_identity(self):
        # z covers sites 0..n only; excursions below 0 add matched step pairs
        env = sample_environment(BETA43, seed=3)
        zp = simulate_walk(env, n=50, seed=7)
        assert zp.hitting_time >= 50 + 2 * int(zp.z.sum())
        assert (zp.hitting_time - zp.n) % 2 == 0
        assert not zp.time_is_proxy

    def test_deterministic_replay(self):
        env1 = sample_environment(BETA43, seed=21)
        env2 = sample_environment(BETA43, seed=21)
        a = simulate_walk(env1, n=80, seed=5)
        b = simulate_walk(env2, n=80, seed=5)
        assert a.hitting_time == b.hitting_time
        assert np.array_equal(a.z, b.z)

    def test_max_steps_exceeded_carries_counts(self):
        env = sample_environment(Beta(3.0, 3.0), seed=1)
        with pytest.raises(MaxStepsExceeded) as err:
            simulate_walk(env, n=200, seed=1, max_steps=50)
        assert err.value.steps_taken == 50
        assert err.value.max_steps == 50
        assert "max_steps" in str(err.value)

    def test_n_validation(self):
        env = sample_environment(BETA43, seed=1)
        with pytest.raises(ValueError):
            simulate_walk(env, n=0, seed=1)

    def test_hitting_time_scale_matches_drift(self):
        # ballistic regime: T_n/n concentrates near (1+E rho)/(1-E rho) = 3 for Beta(6,3)
        times = []
        for rep in range(20):
            env = sample_environment(BETA63, seed=derive_seed(77, "env", rep))
            zp = simulate_walk(env, n=500, seed=derive_seed(77, "walk", rep))
            times.append(zp.hitting_time)
        med = float(np.median(times))
        assert 500 * 3 / 10 < med < 500 * 3 * 10


class TestBranching:
    def test_replay_and_proxy_time(self):
        a = simulate_z_branching(BETA43, n=60, seed=9)
        b = simulate_z_branching(BETA43, n=60, seed=9)
        assert np.array_equal(a.z, b.z)
        assert a.time_is_proxy
        assert a.hitting_time == 60 + 2 * int(a.z[:60].sum())

    def test_geometric_first_step(self):
        # point mass at 1/2, Z_0 = 0: Z_1 counts failures before one success
        reps = 100_000
        grid = batch_z_annealed(POINT_HALF, n=1, reps=reps, seed=31)
        frac0 = np.mean(grid[:, 1] == 0)
        se = math.sqrt(0.25 / reps)
        assert abs(frac0 - 0.5) < 4 * se

    def test_first_step_matches_kernel_chi_square(self):
        reps = 100_000
        grid = batch_z_annealed(BETA43, n=1, reps=reps, seed=57)
        draws = grid[:, 1]
        row = kernel_row(BETA43, 0)
        # merge the tail so every expected cell count stays above 5
        kmax = int(np.searchsorted(np.cumsum(row.probs), 1 - 2e-4))
        counts = np.bincount(np.minimum(draws, kmax), minlength=kmax + 1)
        expect = np.append(row.probs[:kmax], 1.0 - row.probs[:kmax].sum()) * reps
        chi2 = float(((counts - expect) ** 2 / expect).sum())
        assert chi2 < stats.chi2.ppf(0.99, df=kmax)

    def test_quenched_mode_reads_environment(self):
        env = sample_environment(BETA43, seed=5)
        zp = simulate_z_branching(BETA43, n=30, seed=8, mode="quenched", env=env)
        assert zp.n == 30
        with pytest.raises(ValueError):
            simulate_z_branching(BETA43, n=30, seed=8, mode="quenched")
        with pytest.raises(ValueError):
            simulate_z_branching(BETA43, n=30, seed=8, mode="sideways")

    def test_batch_matches_single_draws(self):
        grid = batch_z_annealed(BETA43, n=12, reps=3, seed=44)
        assert grid.shape == (3, 13)
        assert np.all(grid[:, 0] == 0)
        env = sample_environment(BETA43, seed=6)
        gq = batch_z_quenched(env, n=12, reps=3, seed=44)
        assert gq.shape == (3, 13)


class TestCrossSampler:
    @pytest.mark.parametrize("spec", [BETA43, UNI], ids=["beta", "uniform"])
    def test_annealed_means_agree_with_walk(self, spec):
        n, reps = 10, 20_000
        walk_z = np.zeros((reps, n + 1), dtype=np.int64)
        for rep in range(reps):
            env = sample_environment(spec, seed=derive_seed(900, "env", rep))
            walk_z[rep] = simulate_walk(env, n=n, seed=derive_seed(900, "walk", rep)).z
        branch_z = batch_z_annealed(spec, n=n, reps=reps, seed=901)
        for x in range(1, n + 1):
            wm, bm = walk_z[:, x].mean(), branch_z[:, x].mean()
            se = math.sqrt(walk_z[:, x].var(ddof=1) / reps + branch_z[:, x].var(ddof=1) / reps)
            assert abs(wm - bm) < 4 * se, f"coordinate {x}: {wm} vs {bm}"

    def test_quenched_means_agree_with_walk(self):
        n, reps = 10, 20_000
        env_seed = 73
        walk_z = np.zeros((reps, n + 1), dtype=np.int64)
        for rep in range(reps):
            env = sample_environment(BETA43, seed=env_seed)
            walk_z[rep] = simulate_walk(env, n=n, seed=derive_seed(902, "walk", rep)).z
        env = sample_environment(BETA43, seed=env_seed)
        branch_z = batch_z_quenched(env, n=n, reps=reps, seed=903)
        for x in range(1, n + 1):
            wm, bm = walk_z[:, x].mean(), branch_z[:, x].mean()
            se = math.sqrt(walk_z[:, x].var(ddof=1) / reps + branch_z[:, x].var(ddof=1) / reps)
            assert abs(wm - bm) < 4 * se, f"coordinate {x}: {wm} vs {bm}"


class TestKernel:
    @pytest.mark.parametrize("spec", [BETA43, UNI, POINT_HALF], ids=["beta", "uniform", "point"])
    @pytest.mark.parametrize("i", [0, 3, 11])
    def test_row_normalization(self, spec, i):
        row = kernel_row(spec, i)
        assert row.probs.min() >= 0
        assert abs(row.probs.sum() + row.tail_mass - 1.0) < 1e-12
        assert row.tail_mass < 1e-10

    def test_point_mass_geometric_row(self):
        row = kernel_row(POINT_HALF, 0, j_max=30)
        want = 0.5 ** (np.arange(31) + 1.0)
        np.testing.assert_allclose(row.probs, want, rtol=1e-12)

    def test_beta_first_cell(self):
        row = kernel_row(BETA43, 0, j_max=0)
        assert row.probs[0] == pytest.approx(4 / 7, rel=1e-12)

    def test_negative_state_rejected(self):
        with pytest.raises(ValueError):
            kernel_row(BETA43, -1)


class TestInvariantTail:
    def test_level_zero_is_one(self):
        est, se = invariant_tail(BETA43, 0, n_samples=100, seed=1)
        assert est == 1.0
        assert se == 0.0

    def test_recurrent_rejected(self):
        with pytest.raises(RegimeError):
            invariant_tail(Beta(3.0, 3.0), 5)

    def test_negative_level_rejected(self):
        with pytest.raises(ValueError):
            invariant_tail(BETA43, -1)

    def test_monotone_in_level(self):
        vals = [invariant_tail(BETA43, M, n_samples=20_000, seed=3)[0] for M in (1, 2, 5, 10)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert 0 < vals[-1] < vals[0] < 1


class TestSerialization:
    def _sample(self):
        env = sample_environment(BETA43, seed=15)
        return simulate_walk(env, n=40, seed=16)

    def test_csv_round_trip(self, tmp_path):
        zp = self._sample()
        path = tmp_path / "zpath.csv"
        write_zpath_csv(path, zp)
        back = read_zpath_csv(path)
        assert back.n == zp.n
        assert back.hitting_time == zp.hitting_time
        assert back.time_is_proxy == zp.time_is_proxy
        assert np.array_equal(back.z, zp.z)
        assert back.meta["seed"] == 16
        assert back.meta["spec"] == zp.meta["spec"]

    def test_bin_round_trip(self, tmp_path):
        zp = simulate_z_branching(BETA43, n=25, seed=2)
        path = tmp_path / "zpath.bin"
        write_zpath_bin(path, zp)
        back = read_zpath_bin(path)
        assert back.n == zp.n
        assert back.hitting_time == zp.hitting_time
        assert back.time_is_proxy is True
        assert np.array_equal(back.z, zp.z)

    def test_bin_rejects_truncation(self, tmp_path):
        zp = self._sample()
        path = tmp_path / "zpath.bin"
        write_zpath_bin(path, zp)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError):
            read_zpath_bin(path)

    def test_csv_rejects_missing_header(self, tmp_path):
        path = tmp_path / "zpath.csv"
        path.write_text("x,z\n0,0\n")
        with pytest.raises(ValueError):
            read_zpath_csv(path)


class TestSeeds:
    def test_derive_seed_deterministic_and_sensitive(self):
        a = derive_seed(5, "risk", 100, 0)
        assert a == derive_seed(5, "risk", 100, 0)
        assert a != derive_seed(5, "risk", 100, 1)
        assert a != derive_seed(6, "risk", 100, 0)
        assert 0 <= a < 2**64
