import math

import numpy as np
import pytest

from ddsmc import rng
from ddsmc.errors import ArgumentError
from ddsmc.stats import categorical_sample
from ddsmc.urn import UrnState, urn_apply, urn_assignment_weights, urn_frame_init


def run_one_frame(n_pixels: int, alpha: float, g) -> UrnState:
    state = UrnState()
    for _ in range(n_pixels):
        w = urn_assignment_weights(state, alpha)
        state = urn_apply(state, categorical_sample(w, g))
    return state


class TestFrameInit:
    def test_rho_zero_keeps_sizes(self):
        s = UrnState(cs=(0, 1, 1), ms=(5, 3))
        out = urn_frame_init(s, 0.0, rng.generator(0, 0))
        assert out.ms == (5, 3)
        assert out.cs == ()

    def test_rho_one_kills_everything(self):
        s = UrnState(ms=(5, 3, 1))
        out = urn_frame_init(s, 1.0, rng.generator(0, 0))
        assert out.ms == (0, 0, 0)

    def test_dead_clusters_stay_dead(self):
        s = UrnState(ms=(0, 7))
        for seed in range(20):
            out = urn_frame_init(s, 0.5, rng.generator(seed, 1))
            assert out.ms[0] == 0

    def test_expected_survival(self):
        # E[m'] = m (1 - rho) at rho = 0.32
        m, rho, n = 40, 0.32, 100_000
        g = rng.generator(12, 0)
        total = 0
        for _ in range(n):
            total += urn_frame_init(UrnState(ms=(m,)), rho, g).ms[0]
        se = math.sqrt(m * rho * (1 - rho) / n)
        assert abs(total / n - m * (1 - rho)) < 3 * se

    def test_bad_rho(self):
        with pytest.raises(ArgumentError):
            urn_frame_init(UrnState(ms=(3,)), 1.5, rng.generator(0, 0))


class TestWeights:
    def test_empty_state(self):
        w = urn_assignment_weights(UrnState(), 0.1)
        np.testing.assert_array_equal(w, [0.1])

    def test_existing_clusters(self):
        w = urn_assignment_weights(UrnState(ms=(2, 1)), 0.1)
        np.testing.assert_array_equal(w, [2.0, 1.0, 0.1])

    def test_dead_cluster_weight_exactly_zero(self):
        w = urn_assignment_weights(UrnState(ms=(0, 3)), 0.1)
        assert w[0] == 0.0
        np.testing.assert_array_equal(w, [0.0, 3.0, 0.1])


class TestApply:
    def test_first_pixel(self):
        out = urn_apply(UrnState(), 0)
        assert out.cs == (0,) and out.ms == (1,) and out.K == 1

    def test_increment(self):
        out = urn_apply(UrnState(ms=(2, 1)), 1)
        assert out.ms == (2, 2) and out.K == 2

    def test_birth(self):
        out = urn_apply(UrnState(ms=(2, 1)), 2)
        assert out.ms == (2, 1, 1) and out.K == 3

    def test_out_of_range(self):
        with pytest.raises(ArgumentError):
            urn_apply(UrnState(ms=(2,)), 2)


class TestProperties:
    def test_crp_expected_cluster_count(self):
        # single frame is a CRP: E[K] = sum alpha/(alpha+i); alpha=1, n=5
        alpha, n, runs = 1.0, 5, 100_000
        exact = sum(alpha / (alpha + i) for i in range(n))
        assert exact == pytest.approx(137 / 60)
        g = rng.generator(2025, 4)
        ks = np.empty(runs)
        for r in range(runs):
            ks[r] = run_one_frame(n, alpha, g).K
        se = ks.std(ddof=1) / math.sqrt(runs)
        assert abs(ks.mean() - exact) < 3 * se

    def test_sum_conservation_fuzz(self):
        g = rng.generator(8, 8)
        state = UrnState()
        for frame in range(30):
            state = urn_frame_init(state, 0.32, g)
            start_total = state.total
            n_px = int(g.integers(0, 12))
            for i in range(n_px):
                w = urn_assignment_weights(state, 0.5)
                state = urn_apply(state, categorical_sample(w, g))
                assert state.total == start_total + i + 1
                assert all(c < state.K for c in state.cs)
            # dead clusters never get reassigned
            dead = {k for k, m in enumerate(state.ms) if m == 0 and k < state.K}
            assert not any(c in dead and state.ms[c] == 0 for c in state.cs)

    def test_states_are_values(self):
        s = UrnState(ms=(1,))
        out = urn_apply(s, 0)
        assert s.ms == (1,)
        assert out.ms == (2,)
