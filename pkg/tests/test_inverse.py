"""Inverse and forward problems, subenvironments and chain filtering."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bayesuq.config import MhOptions, SipOptions
from bayesuq.core import BoxSubset, ContractError, RandomVariable
from bayesuq.dram import Chain, run_dram
from bayesuq.inverse import (Environment, EnvironmentConstructionError, ForwardProblemError,
                             SequenceRealizer, StatisticalForwardProblem,
                             StatisticalInverseProblem, derive_seed, filter_chain,
                             projectile_range, solve_sfp, solve_sip)
from bayesuq.likelihood import (BallDropModel, GaussianLikelihood, balldrop_eval,
                                synthetic_ball_drop_data)
from bayesuq.postproc import read_chain

LN_THIRD = -1.0986122886681098
# first two outputs of the reference splitmix64 generator started at state 0
SPLITMIX_0 = 0xE220A8397B1DCDAF
SPLITMIX_1 = 0x6E789E6AA1B965F4


def uniform_prior(lo=8.0, hi=11.0):
    return RandomVariable.uniform(BoxSubset([lo], [hi]))


def ball_drop_ip(n_obs=14, sigma=0.05, noiseless=False):
    h, t = synthetic_ball_drop_data(n_obs, 9.8, sigma)
    if noiseless:
        t = balldrop_eval(9.8, h)
    return StatisticalInverseProblem(uniform_prior(), GaussianLikelihood(BallDropModel(h), t, sigma ** 2))


class CountingLikelihood:
    def __init__(self):
        self.calls = 0

    def __call__(self, theta):
        self.calls += 1
        return -0.5 * float(theta[0] - 9.8) ** 2


class TestEnvironment:
    def test_defaults(self):
        env = Environment()
        assert (env.num_workers, env.num_sub_environments, env.seed, env.verbosity) == (1, 1, 0, 0)

    @pytest.mark.parametrize("w,s", [(8, 8), (8, 4), (8, 1), (6, 3)])
    def test_divisible(self, w, s):
        assert Environment(w, s).workers_per_sub_environment == w // s

    @pytest.mark.parametrize("w,s", [(8, 3), (2, 4), (5, 2)])
    def test_not_divisible(self, w, s):
        with pytest.raises(EnvironmentConstructionError, match="multiple"):
            Environment(w, s)

    @pytest.mark.parametrize("w,s", [(0, 1), (1, 0), (-2, 1), (2.5, 1)])
    def test_nonpositive(self, w, s):
        with pytest.raises(EnvironmentConstructionError):
            Environment(w, s)

    def test_derive_seed_reference(self):
        assert derive_seed(0, 0) == SPLITMIX_0
        assert derive_seed(0, 1) == SPLITMIX_1

    def test_sub_seeds_distinct(self):
        env = Environment(8, 8, seed=12)
        seeds = [env.sub_seed(s) for s in range(8)]
        assert len(set(seeds)) == 8
        assert all(0 <= s < 2 ** 64 for s in seeds)


class TestLnPosterior:
    def test_outside_support_skips_likelihood(self):
        lik = CountingLikelihood()
        ip = StatisticalInverseProblem(uniform_prior(), lik)
        assert ip.ln_posterior(np.array([7.0])) == -math.inf
        assert ip.ln_posterior(np.array([11.5])) == -math.inf
        assert lik.calls == 0
        ip.ln_posterior(np.array([9.0]))
        assert lik.calls == 1

    def test_uniform_prior_cancels(self):
        ip = ball_drop_ip()
        a, b = np.array([9.1]), np.array([10.3])
        d_post = ip.ln_posterior(a) - ip.ln_posterior(b)
        d_like = ip.likelihood.ln_value(a) - ip.likelihood.ln_value(b)
        # adding a constant cancels up to rounding
        assert d_post == pytest.approx(d_like, rel=1e-12, abs=1e-12)

    def test_noiseless_at_truth(self):
        ip = ball_drop_ip(noiseless=True)
        assert ip.ln_posterior(np.array([9.8])) == pytest.approx(LN_THIRD, abs=1e-12)

    def test_domain_mismatch(self):
        h, t = synthetic_ball_drop_data()
        lik = GaussianLikelihood(BallDropModel(h), t, 0.0025, domain=BoxSubset([0.0], [20.0]))
        with pytest.raises(ContractError):
            StatisticalInverseProblem(uniform_prior(), lik)
        lik2 = GaussianLikelihood(BallDropModel(h), t, 0.0025, domain=BoxSubset.unbounded(2))
        with pytest.raises(ContractError):
            StatisticalInverseProblem(uniform_prior(), lik2)


MH_SMALL = MhOptions(raw_chain_size=100, am_init_non_adapt_interval=20, am_adapt_interval=20,
                     dr_max_num_extra_stages=1)


class TestSolveSip:
    def test_eight_subenvironments_combined(self):
        ip = ball_drop_ip()
        env = Environment(8, 8, seed=3)
        chain = solve_sip(ip, env, [9.0], [[0.1]], MH_SMALL)
        assert len(chain) == 800
        seq = [run_dram(ip.ln_posterior, [9.0], [[0.1]], MH_SMALL, env.sub_seed(s),
                        domain=ip.prior.domain) for s in range(8)]
        expected = np.concatenate([c.positions for c in seq])
        assert np.array_equal(chain.positions, expected)
        assert np.array_equal(chain.ln_target, np.concatenate([c.ln_target for c in seq]))

    def test_single_subenvironment_matches_run_dram(self):
        ip = ball_drop_ip()
        env = Environment(1, 1, seed=9)
        chain = solve_sip(ip, env, [9.0], [[0.1]], MH_SMALL)
        ref = run_dram(ip.ln_posterior, [9.0], [[0.1]], MH_SMALL, derive_seed(9, 0),
                       domain=ip.prior.domain)
        assert np.array_equal(chain.positions, ref.positions)

    def test_workers_do_not_change_result(self):
        a = solve_sip(ball_drop_ip(), Environment(4, 4, seed=1), [9.0], [[0.1]], MH_SMALL)
        b = solve_sip(ball_drop_ip(), Environment(8, 4, seed=1), [9.0], [[0.1]], MH_SMALL)
        assert np.array_equal(a.positions, b.positions)

    def test_posterior_replays_chain(self):
        ip = ball_drop_ip()
        chain = solve_sip(ip, Environment(2, 2, seed=4), [9.0], [[0.1]], MH_SMALL)
        draws = np.array([ip.posterior.draw(None) for _ in range(len(chain))])
        assert np.array_equal(draws, chain.positions)
        assert np.array_equal(ip.posterior.draw(None), chain.positions[0])

    def test_compute_solution_off(self, tmp_path):
        ip = ball_drop_ip()
        ip.sip_opts = SipOptions(compute_solution=0)
        opts = MhOptions(raw_chain_data_output_file_name=str(tmp_path / "raw"))
        assert solve_sip(ip, Environment(), [9.0], [[0.1]], opts) is None
        assert ip.posterior is None
        assert list(tmp_path.iterdir()) == []

    def test_output_files(self, tmp_path):
        ip = ball_drop_ip()
        opts = MhOptions(raw_chain_size=50, raw_chain_data_output_file_name="out/raw",
                         raw_chain_data_output_file_type="txt",
                         raw_chain_data_output_allow_all=1,
                         filtered_chain_generate=1, filtered_chain_lag=5,
                         filtered_chain_data_output_file_name="out/filt",
                         filtered_chain_data_output_file_type="m")
        chain = solve_sip(ip, Environment(3, 3, seed=2), [9.0], [[0.1]], opts, tmp_path)
        names = sorted(p.relative_to(tmp_path).as_posix() for p in ip.written)
        assert names == ["out/filt.m", "out/raw.csv", "out/raw_sub0.csv", "out/raw_sub1.csv",
                         "out/raw_sub2.csv"]
        raw = read_chain(tmp_path / "out/raw.csv")
        assert np.array_equal(raw.positions, chain.positions)
        assert np.array_equal(read_chain(tmp_path / "out/raw_sub1.csv").positions,
                              chain.positions[50:100])
        assert len(read_chain(tmp_path / "out/filt.m")) == 30
        assert (tmp_path / "out/filt.m").read_text().startswith("ip_mh_filteredChain = [")

    def test_brooks_gelman_report(self):
        ip = ball_drop_ip()
        opts = MhOptions(raw_chain_size=400, brooks_gelman_monitor=1, brooks_gelman_lag=100)
        solve_sip(ip, Environment(2, 2), [9.0], [[0.1]], opts)
        assert ip.psrf.rhat.shape == (1,)
        assert [m for m, _ in ip.psrf.history] == [100, 200, 300, 400]

    def test_posterior_consistency(self):
        opts = MhOptions(raw_chain_size=20000, am_init_non_adapt_interval=100,
                         am_adapt_interval=100, dr_max_num_extra_stages=1)
        # quadruple the data by repeating the 14 drop heights with fresh noise
        base = 3.0 + 2.0 * np.arange(14)
        noise = np.random.default_rng(2012).standard_normal(56)
        sds = []
        for reps in (1, 4):
            h = np.tile(base, reps)
            t = balldrop_eval(9.8, h) + 0.05 * noise[: h.size]
            ip = StatisticalInverseProblem(uniform_prior(),
                                           GaussianLikelihood(BallDropModel(h), t, 0.05 ** 2))
            chain = solve_sip(ip, Environment(seed=2012), [9.0], [[0.1]], opts)
            x = filter_chain(chain, 0.1, 1).positions[:, 0]
            mean, sd = x.mean(), x.std(ddof=1)
            assert abs(mean - 9.8) < 3 * sd
            assert 8.0 <= x.min() and x.max() <= 11.0
            sds.append(sd)
        assert sds[1] / sds[0] == pytest.approx(0.5, rel=0.3)


class TestFilter:
    def test_figure_count(self):
        assert len(filter_chain(np.zeros(20000), 0.0, 20)) == 1000

    def test_identity(self, rng):
        x = rng.standard_normal(37)
        assert np.array_equal(filter_chain(x, 0.0, 1), x)

    def test_burn_in_and_lag(self):
        out = filter_chain(np.arange(100), 0.5, 5)
        assert out.tolist() == [50, 55, 60, 65, 70, 75, 80, 85, 90, 95]

    def test_chain_object(self):
        c = Chain(np.arange(10.0), -np.arange(10.0))
        f = filter_chain(c, 0.2, 3)
        assert f.positions[:, 0].tolist() == [2.0, 5.0]
        assert f.ln_target.tolist() == [-2.0, -5.0]

    def test_empty_result(self):
        with pytest.raises(ValueError, match="filtering removed all states"):
            filter_chain(np.arange(10), 0.5, 6)

    @pytest.mark.parametrize("p,lag", [(-0.1, 1), (1.0, 1), (0.0, 0), (0.0, 1.5)])
    def test_bad_arguments(self, p, lag):
        with pytest.raises(ValueError):
            filter_chain(np.arange(10), p, lag)

    @given(st.integers(1, 3000), st.floats(0.0, 0.99), st.integers(1, 50))
    def test_count_matches_counting_oracle(self, n, p, lag):
        b = 0
        while b + 1 <= p * n:
            b += 1
        # walk the chain, taking the first state of each complete block of lag
        kept, i = [], b
        while i + lag <= n:
            kept.append(i)
            i += lag
        if not kept:
            with pytest.raises(ValueError):
                filter_chain(np.arange(n), p, lag)
        else:
            assert filter_chain(np.arange(n), p, lag).tolist() == kept


class TestForward:
    @pytest.mark.parametrize("g,expected", [(8.0, 3.125), (9.8, 2.5510204081632653),
                                            (11.0, 2.2727272727272729)])
    def test_range_closed_form(self, g, expected):
        fp = StatisticalForwardProblem(None, lambda x: projectile_range(x[0], 0.0, math.pi / 4, 5.0))
        q = solve_sfp(fp, np.full(50, g))
        assert q.shape == (50, 1)
        assert np.max(np.abs(q - expected)) <= 1e-12

    def test_constant_qoi(self, rng):
        fp = StatisticalForwardProblem(None, lambda x: 4.0)
        assert np.all(solve_sfp(fp, rng.standard_normal(30)) == 4.0)

    def test_count_preserved(self, rng):
        fp = StatisticalForwardProblem(rng.uniform(8, 11, 777), lambda x: x[0] ** 2)
        assert fp.solve().shape == (777, 1)

    def test_vector_qoi(self):
        fp = StatisticalForwardProblem(None, lambda x: [x[0], 2 * x[0]])
        assert solve_sfp(fp, [1.0, 2.0]).tolist() == [[1.0, 2.0], [2.0, 4.0]]

    def test_failure_reports_index(self):
        fp = StatisticalForwardProblem(None, lambda x: projectile_range(x[0], 0.0, 0.3, 5.0))
        with pytest.raises(ForwardProblemError) as exc:
            solve_sfp(fp, [9.0, 9.5, -1.0, 9.8])
        assert exc.value.index == 2

    def test_nonfinite_reports_index(self):
        fp = StatisticalForwardProblem(None, lambda x: math.inf if x[0] > 1 else 0.0)
        with pytest.raises(ForwardProblemError) as exc:
            solve_sfp(fp, [0.0, 2.0])
        assert exc.value.index == 1

    def test_empty_samples(self):
        with pytest.raises(ContractError):
            solve_sfp(StatisticalForwardProblem(None, lambda x: x), [])

    def test_from_random_variable(self):
        fp = StatisticalForwardProblem(uniform_prior(), lambda x: x[0])
        q = fp.solve(n=200, rng=0)
        assert q.shape == (200, 1) and 8.0 <= q.min() and q.max() <= 11.0
        with pytest.raises(ContractError):
            StatisticalForwardProblem(uniform_prior(), lambda x: x).solve()

    def test_from_posterior_sequence(self):
        ip = ball_drop_ip()
        chain = solve_sip(ip, Environment(seed=1), [9.0], [[0.1]], MH_SMALL)
        q = StatisticalForwardProblem(ip.posterior, lambda x: x[0]).solve()
        assert np.array_equal(q[:, 0], chain.positions[:, 0])


class TestProjectileRange:
    def test_no_speed(self):
        assert projectile_range(9.8, 0.0, 0.7, 0.0) == 0.0

    def test_vertical(self):
        assert projectile_range(9.8, 0.0, math.pi / 2, 5.0) == pytest.approx(0.0, abs=1e-15)

    def test_height_increases_range(self):
        assert projectile_range(9.8, 2.0, math.pi / 4, 5.0) > projectile_range(9.8, 0.0, math.pi / 4, 5.0)

    def test_horizontal_launch(self):
        # t = sqrt(2 h / g), x = v0 t
        assert projectile_range(9.8, 4.9, 0.0, 3.0) == pytest.approx(3.0, rel=1e-14)

    @pytest.mark.parametrize("g", [0.0, -9.8])
    def test_bad_gravity(self, g):
        with pytest.raises(ValueError):
            projectile_range(g, 0.0, 0.5, 5.0)

    def test_negative_speed(self):
        with pytest.raises(ValueError):
            projectile_range(9.8, 0.0, 0.5, -1.0)


class TestSequenceRealizer:
    def test_cyclic_replay(self):
        r = SequenceRealizer([1.0, 2.0, 3.0])
        assert [r.realization()[0] for _ in range(7)] == [1, 2, 3, 1, 2, 3, 1]
        r.reset()
        assert r.realization()[0] == 1.0
        assert len(r) == 3

    def test_empty(self):
        with pytest.raises(ContractError):
            SequenceRealizer(np.zeros((0, 1)))
