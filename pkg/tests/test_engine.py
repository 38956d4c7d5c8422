import math

import numpy as np
import pytest
from scipy.special import logsumexp
from toy_model import ToyFixedProposal, ToyProgram, exact_evidence

from ddsmc import rng
from ddsmc.engine import (
    Hooks,
    PriorProposal,
    SmcConfig,
    choose_rows,
    ess,
    lineage_matrix,
    normalize_weights,
    resample_multinomial,
    resample_systematic,
    smc_run,
)
from ddsmc.errors import ArgumentError, DegenerateWeightsError, ProposalSupportError
from ddsmc.stats import categorical_from_uniform


class TestNormalizeWeights:
    def test_uniform(self):
        w, log_mean = normalize_weights(np.array([-3.0, -3.0, -3.0]))
        np.testing.assert_allclose(w, np.full(3, 1 / 3))
        assert log_mean == pytest.approx(-3.0)

    def test_support_collapse(self):
        w, log_mean = normalize_weights(np.array([0.0, -np.inf]))
        np.testing.assert_array_equal(w, [1.0, 0.0])
        assert log_mean == pytest.approx(math.log(0.5))

    def test_shift_invariance(self):
        lw = np.array([-1.0, 0.5, 2.0, -7.0])
        w1, m1 = normalize_weights(lw)
        w2, m2 = normalize_weights(lw + 123.0)
        np.testing.assert_allclose(w1, w2, atol=1e-14)
        assert m2 - m1 == pytest.approx(123.0, abs=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateWeightsError):
            normalize_weights(np.array([-np.inf, -np.inf]))

    def test_sum_is_one(self):
        g = rng.generator(1, 0)
        for _ in range(50):
            w, _ = normalize_weights(g.standard_normal(32) * 50)
            assert abs(w.sum() - 1.0) < 1e-12


class TestEss:
    def test_uniform(self):
        assert ess(np.full(4, 0.25)) == pytest.approx(4.0)

    def test_one_hot(self):
        assert ess(np.array([0.0, 1.0, 0.0])) == pytest.approx(1.0)

    def test_direct_formula(self):
        assert ess(np.array([0.5, 0.25, 0.25])) == pytest.approx(1 / 0.375)


class TestResamplers:
    def test_single_support(self):
        g = rng.generator(0, 0)
        np.testing.assert_array_equal(resample_multinomial(np.array([1.0]), 5, g), np.zeros(5))
        np.testing.assert_array_equal(resample_systematic(np.array([1.0]), 5, g), np.zeros(5))

    def test_systematic_stratification(self):
        for seed in range(50):
            idx = resample_systematic(np.array([0.5, 0.5]), 2, rng.generator(seed, 1))
            assert sorted(idx.tolist()) == [0, 1]

    def test_multinomial_counts(self):
        g = rng.generator(7, 2)
        idx = resample_multinomial(np.array([0.2, 0.8]), 100_000, g)
        ones = int((idx == 1).sum())
        sd = math.sqrt(100_000 * 0.8 * 0.2)
        assert abs(ones - 80_000) < 3 * sd

    def test_systematic_copy_counts_near_expectation(self):
        w = np.array([0.13, 0.4, 0.27, 0.2])
        for seed in range(20):
            idx = resample_systematic(w, 100, rng.generator(seed, 3))
            counts = np.bincount(idx, minlength=4)
            # stratified counts can differ from P*w by at most 1
            assert np.all(np.abs(counts - 100 * w) <= 1.0 + 1e-9)

    def test_zero_weight_never_selected(self):
        w = np.array([0.0, 0.5, 0.0, 0.5, 0.0])
        for seed in range(10):
            for fn in (resample_multinomial, resample_systematic):
                idx = fn(w, 64, rng.generator(seed, 4))
                assert set(idx.tolist()) <= {1, 3}


class TestChooseRows:
    def test_matches_scalar_rule_fuzz(self):
        g = rng.generator(17, 0)
        for _ in range(200):
            c = int(g.integers(2, 7))
            row = g.random(c) * (g.random(c) < 0.7)  # sprinkle zeros
            if row.sum() == 0:
                row[int(g.integers(c))] = 0.5
            probs = np.tile(row / row.sum(), (4, 1))
            u = g.random(4)
            got = choose_rows(probs, u)
            want = [categorical_from_uniform(probs[i], u[i]) for i in range(4)]
            np.testing.assert_array_equal(got, want)

    def test_rounding_overshoot_falls_back(self):
        probs = np.array([[0.7, 0.3, 0.0]])
        got = choose_rows(probs, np.array([1.0 - 1e-16]))
        assert got[0] == 1


class TestSmcRun:
    def cfg(self, particles=8, seed=0, **kw):
        return SmcConfig(particles=particles, master_seed=seed, **kw)

    def test_single_particle_prior(self):
        run = smc_run(ToyProgram(), PriorProposal(), self.cfg(particles=1, seed=3))
        # one particle: log_marginal is that trajectory's total log-likelihood
        assert run.log_marginal == pytest.approx(run.mean_final_log_weight, abs=1e-12)
        assert run.log_incr.shape == (2, 1)
        assert run.log_marginal == pytest.approx(float(run.log_incr.sum()), abs=1e-12)

    def test_deterministic_rerun(self):
        a = smc_run(ToyProgram(), PriorProposal(), self.cfg(seed=11))
        b = smc_run(ToyProgram(), PriorProposal(), self.cfg(seed=11))
        assert a.log_marginal == b.log_marginal
        np.testing.assert_array_equal(a.choices, b.choices)
        np.testing.assert_array_equal(a.final_weights, b.final_weights)
        c = smc_run(ToyProgram(), PriorProposal(), self.cfg(seed=12))
        assert a.log_marginal != c.log_marginal

    def test_resample_policies(self):
        always = smc_run(ToyProgram(), PriorProposal(), self.cfg(seed=2))
        assert always.resampled[0] and not always.resampled[-1]
        never = smc_run(
            ToyProgram(), PriorProposal(),
            self.cfg(seed=2, resample_policy="ess", ess_threshold=1e-9),
        )
        assert not never.resampled.any()
        np.testing.assert_array_equal(never.ancestors, np.tile(np.arange(8), (2, 1)))

    def test_ess_policy_triggers_on_threshold_one(self):
        run = smc_run(
            ToyProgram(), PriorProposal(),
            self.cfg(seed=2, resample_policy="ess", ess_threshold=1.0),
        )
        # ESS < P holds except in measure-zero ties, so it resamples like always
        assert run.resampled[0]

    def test_unbiased_evidence_all_combinations(self):
        z_true = exact_evidence()
        proposals = {"prior": PriorProposal, "q": ToyFixedProposal}
        for resampler in ("systematic", "multinomial"):
            for name, make in proposals.items():
                runs = 2000
                est = np.empty(runs)
                for r in range(runs):
                    run = smc_run(
                        ToyProgram(), make(),
                        SmcConfig(particles=8, master_seed=10_000 + r, resampler=resampler),
                    )
                    est[r] = math.exp(run.log_marginal)
                se = est.std(ddof=1) / math.sqrt(runs)
                assert abs(est.mean() - z_true) < 3 * se, (resampler, name)

    def test_proposal_support_violation_detected(self):
        class BadProposal:
            kind = "bad"

            def probs(self, program, i, prior):
                q = np.full_like(prior, 1.0 / prior.shape[1])
                return q

        class ZeroPriorProgram(ToyProgram):
            def prior_probs(self, i):
                p = super().prior_probs(i)
                p = p.copy()
                p[:, 0] = 0.0
                return p / p.sum(axis=1, keepdims=True)

        with pytest.raises(ProposalSupportError):
            smc_run(ZeroPriorProgram(), BadProposal(), self.cfg(seed=123))

    def test_degeneracy_reports_step(self):
        class DoomedProgram(ToyProgram):
            def apply(self, i, choices):
                out = super().apply(i, choices)
                if i == 1:
                    return np.full_like(out, -np.inf)
                return out

        with pytest.raises(DegenerateWeightsError) as exc_info:
            smc_run(DoomedProgram(), PriorProposal(), self.cfg(seed=5))
        assert exc_info.value.step == 1

    def test_step_log_mean_matches_direct_formula_after_resample(self):
        # with resample-every-step, each step contribution is log((1/P) sum W)
        run = smc_run(ToyProgram(), PriorProposal(), self.cfg(particles=64, seed=9))
        w0 = np.exp(run.log_incr[0])
        assert run.step_log_mean_w[0] == pytest.approx(math.log(w0.mean()), abs=1e-12)
        assert run.log_marginal == pytest.approx(float(run.step_log_mean_w.sum()), abs=1e-12)

    def test_final_log_weights_carry_evidence_scale(self):
        # reconstruct from raw increments: within a segment ancestry is the
        # identity, and each resample folds the segment's log mean weight
        # into a common carry shared by all offspring
        for policy, kw in (("always", {}), ("ess", {"ess_threshold": 0.6})):
            run = smc_run(
                ToyProgram(), PriorProposal(),
                self.cfg(particles=32, seed=21, resample_policy=policy, **kw),
            )
            carry, acc = 0.0, np.zeros(32)
            for i in range(run.n_steps):
                acc = acc + run.log_incr[i]
                if run.resampled[i]:
                    carry += logsumexp(acc) - math.log(32)
                    acc = np.zeros(32)
            final = carry + acc
            np.testing.assert_allclose(run.final_log_acc, final, rtol=0, atol=1e-12)
            assert run.mean_final_log_weight == pytest.approx(float(final.mean()), abs=1e-12)
            # log-mean of final particle weights telescopes to the evidence
            got = logsumexp(run.final_log_acc) - math.log(32)
            assert got == pytest.approx(run.log_marginal, abs=1e-10)

    def test_record_trajectories_off(self):
        run = smc_run(
            ToyProgram(), PriorProposal(),
            self.cfg(seed=2, record_trajectories=False),
        )
        assert run.choices is None and run.ancestors is None
        assert math.isfinite(run.log_marginal)

    def test_hooks_called_in_order(self):
        calls = []

        class Spy(Hooks):
            def pre_apply(self, i, program, prior, q):
                calls.append(("pre", i))

            def post_apply(self, i, program, choices, incr):
                calls.append(("post", i))

            def post_resample(self, i, program, idx):
                calls.append(("res", i))

        smc_run(ToyProgram(), PriorProposal(), self.cfg(seed=1), hooks=Spy())
        assert calls == [("pre", 0), ("post", 0), ("res", 0), ("pre", 1), ("post", 1)]

    def test_config_validation(self):
        with pytest.raises(ArgumentError):
            SmcConfig(particles=0).validate()
        with pytest.raises(ArgumentError):
            SmcConfig(particles=1, resampler="bogus").validate()
        with pytest.raises(ArgumentError):
            SmcConfig(particles=1, ess_threshold=0.0).validate()


class TestLineage:
    def test_hand_case(self):
        ancestors = np.array(
            [
                [0, 1, 2],  # step 0: identity
                [2, 2, 0],  # resample before step 1
                [1, 0, 1],  # resample before step 2
            ],
            dtype=np.int64,
        )
        lin = lineage_matrix(ancestors)
        np.testing.assert_array_equal(lin[2], [0, 1, 2])
        np.testing.assert_array_equal(lin[1], [1, 0, 1])
        np.testing.assert_array_equal(lin[0], [2, 2, 2])
