"""Branching estimator: labels, generator algebra, ODE oracles, bookkeeping."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hawkesmm.branching import (
    BranchLabel,
    BranchingEstimate,
    GeneratorPoly,
    ParticleConfig,
    _run_tree,
    centered_generator,
    estimate_u,
    run_particle,
    sample_label,
    saturated_generator,
    taylor_generator,
)
from hawkesmm.errors import NumericalError
from hawkesmm.hawkes import ASK, BID, IntensitySpec, MarketState
from hawkesmm.kernels import ExpSumKernel

ZERO_KERNEL = ExpSumKernel(weights=(), rates=())
ONE_EXP = ExpSumKernel(weights=(0.9,), rates=(1.0,))
NO_STATE = MarketState(0, (), ())


def const_poly(kappa):
    return GeneratorPoly(kernel=ZERO_KERNEL, f0=lambda t, s: kappa)


def full_poly():
    """All six monomials with the manufactured solution U(t, i) = b·i·(T−t).

    With a memoryless kernel the jump operators only shift inventory, so the
    differences are ∓b·(T−t) and the constant term can be chosen to cancel
    every other monomial exactly.
    """
    b, c1a, c1b, c2a, c2b, lam, T = 0.5, 0.12, 0.1, 0.08, 0.06, 0.25, 0.8

    def f0(t, s):
        h = T - t
        return (
            b * s.inventory
            + (c1a - c1b) * b * h
            - (c2a + c2b) * (b * h) ** 2
            - lam * b * s.inventory * h
        )

    poly = GeneratorPoly(
        kernel=ZERO_KERNEL,
        f0=f0,
        f1=lambda t, s: lam,
        f2_1_ask=lambda t, s: c1a,
        f2_1_bid=lambda t, s: c1b,
        f2_2_ask=lambda t, s: c2a,
        f2_2_bid=lambda t, s: c2b,
    )
    return poly, T, lambda t, i: b * i * (T - t)


class TestBranchLabel:
    def test_sign_counts_missing_jumps(self):
        assert BranchLabel("quad", ASK, (1,)).sign == 1
        assert BranchLabel("quad", ASK, (0,)).sign == -1
        assert BranchLabel("quad", BID, (0, 0)).sign == 1
        assert BranchLabel("quad", BID, (0, 1)).sign == -1
        assert BranchLabel("quad", BID, (1, 1)).sign == 1
        assert BranchLabel("const").sign == 1

    def test_degree_is_child_count(self):
        assert BranchLabel("const").degree == 0
        assert BranchLabel("linear").degree == 0
        assert BranchLabel("quad", ASK, (0, 1)).degree == 2


class TestGeneratorPoly:
    def test_full_polynomial_has_fourteen_labels(self):
        poly, _, _ = full_poly()
        labels = poly.labels
        assert len(labels) == 14
        assert len(set(labels)) == 14

    def test_absent_terms_drop_their_labels(self):
        assert len(const_poly(1.0).labels) == 1
        no_linear = GeneratorPoly(
            kernel=ZERO_KERNEL,
            f0=lambda t, s: 1.0,
            f2_1_ask=lambda t, s: 1.0,
            f2_2_ask=lambda t, s: 1.0,
            f2_1_bid=lambda t, s: 1.0,
            f2_2_bid=lambda t, s: 1.0,
        )
        assert len(no_linear.labels) == 13
        one_sided = GeneratorPoly(
            kernel=ZERO_KERNEL, f0=lambda t, s: 1.0, f2_1_ask=lambda t, s: 1.0
        )
        assert len(one_sided.labels) == 3

    def test_evaluate_at_origin_returns_f0(self):
        poly, _, _ = full_poly()
        state = MarketState(3, (), ())
        assert poly.evaluate(0.2, state, 0.0, 0.0, 0.0) == poly.f0(0.2, state)

    def test_evaluate_sums_monomials(self):
        poly, _, _ = full_poly()
        state = MarketState(1, (), ())
        u, da, db = 0.7, -0.3, 0.4
        want = (
            poly.f0(0.1, state)
            + 0.25 * u
            + 0.12 * da
            + 0.1 * db
            + 0.08 * da**2
            + 0.06 * db**2
        )
        assert poly.evaluate(0.1, state, u, da, db) == pytest.approx(want, rel=1e-14)

    def test_coefficient_dispatch(self):
        poly, _, _ = full_poly()
        state = MarketState(0, (), ())
        assert poly.coefficient(BranchLabel("linear"))(0, state) == 0.25
        assert poly.coefficient(BranchLabel("quad", ASK, (1,)))(0, state) == 0.12
        assert poly.coefficient(BranchLabel("quad", BID, (0, 1)))(0, state) == 0.06


class TestTaylorGenerator:
    def make_spec(self, mu=1.0):
        return IntensitySpec(mu=mu, kernel=ZERO_KERNEL, k_over_sigma=20.0)

    def test_centered_at_zero_gives_known_coefficients(self):
        poly = taylor_generator(self.make_spec(), penalty=0.0)
        e1 = math.exp(-1.0)
        assert poly.f0(0.0, NO_STATE) == pytest.approx(2 * 0.05 * e1, rel=1e-12)
        assert poly.f2_1_ask(0.0, NO_STATE) == pytest.approx(e1, rel=1e-12)
        assert poly.f2_1_bid(0.0, NO_STATE) == pytest.approx(e1, rel=1e-12)
        assert poly.f2_2_ask(0.0, NO_STATE) == pytest.approx(10 * e1, rel=1e-12)
        assert poly.f2_2_bid(0.0, NO_STATE) == pytest.approx(10 * e1, rel=1e-12)

    def test_no_discount_means_no_linear_term(self):
        poly = taylor_generator(self.make_spec(), penalty=0.1)
        assert poly.f1 is None
        assert len(poly.labels) == 13

    def test_discount_adds_linear_term(self):
        poly = taylor_generator(self.make_spec(), penalty=0.1, r=0.02)
        assert poly.f1(0.0, NO_STATE) == -0.02
        assert len(poly.labels) == 14

    def test_penalty_enters_constant_term(self):
        poly = taylor_generator(self.make_spec(), penalty=0.3)
        short = MarketState(-4, (), ())
        flat = MarketState(0, (), ())
        assert poly.f0(0.0, short) - poly.f0(0.0, flat) == pytest.approx(
            -0.3 * 16, rel=1e-12
        )

    def test_zero_model_vanishes(self):
        poly = taylor_generator(self.make_spec(mu=0.0), penalty=0.0)
        state = MarketState(0, (), ())
        for coef in (poly.f0, poly.f2_1_ask, poly.f2_2_bid):
            assert coef(0.0, state) == 0.0

    def test_center_at_kink_rejected(self):
        with pytest.raises(ValueError, match="linear"):
            taylor_generator(self.make_spec(), penalty=0.1, i0_ask=0.05)
        with pytest.raises(ValueError, match="linear"):
            taylor_generator(self.make_spec(), penalty=0.1, i0_bid=0.2)

    @given(i0=st.floats(-0.4, 0.04), inc=st.floats(-0.1, 0.1))
    @settings(max_examples=100, deadline=None)
    def test_matches_second_order_expansion_of_income(self, i0, inc):
        # independent route: numerical derivatives of phi*(σ/k)*e^{(k/σ)I − 1}
        phi = 0.7
        spec = IntensitySpec(mu=phi, kernel=ZERO_KERNEL, k_over_sigma=20.0)
        poly = taylor_generator(spec, penalty=0.0, i0_ask=i0, i0_bid=i0)
        income = lambda x: phi * 0.05 * mpmath.e ** (20.0 * x - 1.0)
        h0 = float(income(i0))
        h1 = float(mpmath.diff(income, i0, 1))
        h2 = float(mpmath.diff(income, i0, 2))
        want = h0 + h1 * (inc - i0) + 0.5 * h2 * (inc - i0) ** 2
        # strip the bid side's constant contribution, leaving the ask expansion
        bid_const = phi * mpmath.e ** (20.0 * i0 - 1.0) * (0.05 - i0 + 10.0 * i0**2)
        got = poly.evaluate(0.0, NO_STATE, 0.0, inc, 0.0) - bid_const
        assert float(got) == pytest.approx(want, rel=1e-9, abs=1e-12)

    @given(i0=st.floats(-0.5, 0.045), mu=st.floats(0.01, 3.0))
    @settings(max_examples=100, deadline=None)
    def test_quadratic_coefficients_positive(self, i0, mu):
        spec = IntensitySpec(mu=mu, kernel=ZERO_KERNEL, k_over_sigma=20.0)
        poly = taylor_generator(spec, penalty=0.1, i0_ask=i0, i0_bid=i0)
        assert poly.f2_2_ask(0.0, NO_STATE) > 0
        assert poly.f2_2_bid(0.0, NO_STATE) > 0


class TestSaturatedGenerator:
    def test_linear_income_with_full_intensity_slope(self):
        spec = IntensitySpec(mu=0.4, kernel=ZERO_KERNEL, k_over_sigma=20.0)
        poly = saturated_generator(spec, penalty=0.2)
        assert poly.f2_1_ask(0.0, NO_STATE) == pytest.approx(0.4, rel=1e-14)
        assert poly.f2_2_ask is None and poly.f2_2_bid is None
        assert poly.f0(0.0, MarketState(2, (), ())) == pytest.approx(-0.8, rel=1e-14)
        assert len(poly.labels) == 5  # const + two epsilon values per side


class TestCenteredGenerator:
    def make_spec(self, mu=1.0):
        return IntensitySpec(mu=mu, kernel=ZERO_KERNEL, k_over_sigma=20.0)

    def test_agrees_with_taylor_when_both_centers_quote(self):
        spec = self.make_spec(mu=0.7)
        mixed = centered_generator(spec, penalty=0.3, i0_ask=-0.1, i0_bid=0.02)
        plain = taylor_generator(spec, penalty=0.3, i0_ask=-0.1, i0_bid=0.02)
        state = MarketState(-3, (), ())
        for name in ("f0", "f2_1_ask", "f2_1_bid", "f2_2_ask", "f2_2_bid"):
            got = getattr(mixed, name)(0.0, state)
            want = getattr(plain, name)(0.0, state)
            assert got == pytest.approx(want, rel=1e-14)
        assert [lab for lab in mixed.labels] == [lab for lab in plain.labels]

    def test_agrees_with_saturated_when_both_centers_saturate(self):
        spec = self.make_spec(mu=0.4)
        mixed = centered_generator(spec, penalty=0.2, i0_ask=0.05, i0_bid=0.3)
        plain = saturated_generator(spec, penalty=0.2)
        state = MarketState(2, (), ())
        assert mixed.f2_2_ask is None and mixed.f2_2_bid is None
        assert mixed.f0(0.0, state) == pytest.approx(plain.f0(0.0, state), rel=1e-14)
        assert mixed.f2_1_ask(0.0, state) == pytest.approx(0.4, rel=1e-14)
        assert mixed.f2_1_bid(0.0, state) == pytest.approx(0.4, rel=1e-14)
        assert len(mixed.labels) == 5

    def test_mixed_sides_take_their_own_regimes(self):
        # ask center quotes, bid center saturates: quadratic ask, linear bid
        spec = self.make_spec(mu=0.7)
        mixed = centered_generator(spec, penalty=0.0, i0_ask=-0.05, i0_bid=0.25)
        plain = taylor_generator(spec, penalty=0.0, i0_ask=-0.05, i0_bid=-0.05)
        assert mixed.f2_2_ask is not None and mixed.f2_2_bid is None
        assert len(mixed.labels) == 9  # const + (2 + 4) ask + 2 bid
        for name in ("f2_1_ask", "f2_2_ask"):
            got = getattr(mixed, name)(0.0, NO_STATE)
            want = getattr(plain, name)(0.0, NO_STATE)
            assert got == pytest.approx(want, rel=1e-14)
        assert mixed.f2_1_bid(0.0, NO_STATE) == pytest.approx(0.7, rel=1e-14)

    @given(
        i0=st.floats(-0.3, 0.04),
        inc_a=st.floats(-0.08, 0.08),
        inc_b=st.floats(-0.08, 0.08),
    )
    @settings(max_examples=100, deadline=None)
    def test_mixed_evaluation_splits_into_per_side_incomes(self, i0, inc_a, inc_b):
        # independent route: ask side reproduces the quadratic expansion of
        # phi (σ/k) e^{(k/σ)I − 1} at i0, bid side the exact linear phi·I
        phi = 0.6
        spec = IntensitySpec(mu=phi, kernel=ZERO_KERNEL, k_over_sigma=20.0)
        mixed = centered_generator(spec, penalty=0.0, i0_ask=i0, i0_bid=1.0)
        income = lambda x: phi * 0.05 * mpmath.e ** (20.0 * x - 1.0)
        h0 = float(income(i0))
        h1 = float(mpmath.diff(income, i0, 1))
        h2 = float(mpmath.diff(income, i0, 2))
        ask_part = h0 + h1 * (inc_a - i0) + 0.5 * h2 * (inc_a - i0) ** 2
        bid_part = phi * inc_b
        got = mixed.evaluate(0.0, NO_STATE, 0.0, inc_a, inc_b)
        assert got == pytest.approx(ask_part + bid_part, rel=1e-9, abs=1e-12)


class TestSampleLabel:
    def test_uniform_probability(self):
        poly, _, _ = full_poly()
        rng = np.random.default_rng(0)
        label, prob = sample_label(rng, poly)
        assert prob == pytest.approx(1 / 14)
        assert label in poly.labels

    def test_single_term_is_certain(self):
        rng = np.random.default_rng(0)
        label, prob = sample_label(rng, const_poly(2.0))
        assert label.tag == "const"
        assert prob == 1.0

    def test_empty_generator_rejected(self):
        with pytest.raises(ValueError, match="no terms"):
            sample_label(np.random.default_rng(0), GeneratorPoly(kernel=ZERO_KERNEL))

    def test_frequencies_uniform_within_multinomial_bands(self):
        poly, _, _ = full_poly()
        rng = np.random.default_rng(123)
        n = 100_000
        counts = {}
        for _ in range(n):
            label, _ = sample_label(rng, poly)
            counts[label] = counts.get(label, 0) + 1
        p = 1 / 14
        sigma = math.sqrt(n * p * (1 - p))
        assert set(counts) == set(poly.labels)
        for label, count in counts.items():
            assert abs(count - n * p) <= 3 * sigma


class TestRunParticle:
    def test_root_after_horizon_rejected(self):
        cfg = ParticleConfig(horizon=1.0, seed=0)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="horizon"):
            run_particle(1.0, NO_STATE, const_poly(1.0), cfg, rng)

    def test_zero_generator_estimates_zero_exactly(self):
        cfg = ParticleConfig(horizon=1.0, seed=5)
        est = estimate_u(0.0, NO_STATE, const_poly(0.0), cfg, 500)
        assert est.mean == 0.0
        assert est.stderr == 0.0

    def test_supercritical_tree_raises_with_advice(self):
        # only branching monomials, lifetimes so short no path reaches the
        # horizon within the cap, and order-one node weights so the running
        # product cannot underflow to an exact zero along the way
        poly = GeneratorPoly(kernel=ZERO_KERNEL, f2_2_ask=lambda t, s: 200.0)
        cfg = ParticleConfig(
            horizon=1.0, seed=1, lifetime_rate=2000.0, max_particles=500
        )
        with pytest.raises(NumericalError, match="supercritical"):
            estimate_u(0.0, NO_STATE, poly, cfg, 50)


class TestOracles:
    def test_constant_generator_integrates_to_linear_value(self):
        kappa = 0.3
        cfg = ParticleConfig(horizon=1.0, seed=7)
        est = estimate_u(0.0, NO_STATE, const_poly(kappa), cfg, 100_000)
        assert abs(est.mean - kappa) <= 3 * est.stderr
        assert est.stderr < 0.002

    def test_linear_generator_matches_exponential_ode(self):
        kappa, lam = 0.3, 0.5
        poly = GeneratorPoly(
            kernel=ZERO_KERNEL, f0=lambda t, s: kappa, f1=lambda t, s: lam
        )
        want = kappa / lam * (math.exp(lam) - 1.0)
        cfg = ParticleConfig(horizon=1.0, seed=7)
        est = estimate_u(0.0, NO_STATE, poly, cfg, 100_000)
        assert abs(est.mean - want) <= 3 * est.stderr
        assert est.stderr < 0.005

    def test_all_label_types_reproduce_manufactured_solution(self):
        poly, horizon, solution = full_poly()
        cfg = ParticleConfig(horizon=horizon, seed=314)
        for inventory in (2, -1):
            state = MarketState(inventory, (), ())
            est = estimate_u(0.0, state, poly, cfg, 150_000)
            want = solution(0.0, inventory)
            assert abs(est.mean - want) <= 3 * est.stderr
            assert est.stderr <= 0.05

    def test_unbiased_across_twenty_seeds(self):
        kappa, lam = 0.4, 0.3
        poly = GeneratorPoly(
            kernel=ZERO_KERNEL, f0=lambda t, s: kappa, f1=lambda t, s: lam
        )
        want = kappa / lam * (math.exp(lam * 0.9) - 1.0)
        means, errs = [], []
        for seed in range(20):
            cfg = ParticleConfig(horizon=0.9, seed=seed)
            est = estimate_u(0.0, NO_STATE, poly, cfg, 4000)
            means.append(est.mean)
            errs.append(est.stderr)
        pooled_mean = np.mean(means)
        pooled_err = math.sqrt(np.sum(np.square(errs))) / len(errs)
        assert abs(pooled_mean - want) <= 3 * pooled_err


class TestWeightBookkeeping:
    def test_label_sequence_probability_reciprocal(self):
        poly, horizon, _ = full_poly()
        cfg = ParticleConfig(horizon=horizon, seed=42)
        seen_surviving = False
        for seed in range(30):
            rng = np.random.default_rng(seed)
            trace = []
            value, size = _run_tree(0.0, MarketState(1, (), ()), poly, cfg, rng, trace)
            assert size >= 1
            if not trace:
                continue  # first lifetime crossed the horizon
            seen_surviving = True
            inv_product = 1.0
            seq_prob = 1.0
            for label, prob in trace:
                assert prob == pytest.approx(1 / 14)
                assert label in poly.labels
                inv_product *= 1.0 / prob
                seq_prob *= prob
            assert inv_product == pytest.approx(1.0 / seq_prob, rel=1e-9)
        assert seen_surviving


class TestEstimateU:
    def test_requires_two_trees(self):
        cfg = ParticleConfig(horizon=1.0, seed=0)
        with pytest.raises(ValueError, match="n_trees"):
            estimate_u(0.0, NO_STATE, const_poly(1.0), cfg, 1)

    def test_deterministic_by_seed(self):
        poly, horizon, _ = full_poly()
        cfg = ParticleConfig(horizon=horizon, seed=88)
        a = estimate_u(0.0, NO_STATE, poly, cfg, 2000)
        b = estimate_u(0.0, NO_STATE, poly, cfg, 2000)
        assert a == b
        c = estimate_u(0.0, NO_STATE, poly, ParticleConfig(horizon=horizon, seed=89), 2000)
        assert c.mean != a.mean

    def test_doubling_trees_halves_squared_stderr(self):
        cfg = ParticleConfig(horizon=1.0, seed=3)
        small = estimate_u(0.0, NO_STATE, const_poly(0.5), cfg, 50_000)
        large = estimate_u(0.0, NO_STATE, const_poly(0.5), cfg, 100_000)
        ratio = (large.stderr**2 * 2) / small.stderr**2
        assert 0.8 <= ratio <= 1.2

    def test_tree_size_statistics(self):
        poly, horizon, _ = full_poly()
        cfg = ParticleConfig(horizon=horizon, seed=9)
        est = estimate_u(0.0, NO_STATE, poly, cfg, 5000)
        assert est.mean_tree_size >= 1.0
        assert est.max_tree_size >= est.mean_tree_size
        assert est.max_tree_size <= cfg.max_particles

    def test_tree_sizes_stationary_across_seeds(self):
        poly, horizon, _ = full_poly()

        def sizes(seed):
            cfg = ParticleConfig(horizon=horizon, seed=seed)
            streams = np.random.SeedSequence(seed).spawn(2000)
            out = []
            for stream in streams:
                _, size = _run_tree(
                    0.0, NO_STATE, poly, cfg, np.random.default_rng(stream)
                )
                out.append(size)
            return np.array(out)

        _, p = stats.ks_2samp(sizes(101), sizes(202))
        assert p > 0.01


class TestExport:
    def make_estimate(self):
        spec = IntensitySpec(mu=0.1, kernel=ONE_EXP, k_over_sigma=20.0)
        poly = taylor_generator(spec, penalty=0.1)
        cfg = ParticleConfig(horizon=1.0, seed=11)
        state = MarketState(-2, (0.5,), (0.0,))
        return estimate_u(0.0, state, poly, cfg, 1000)

    def test_csv_layout_and_determinism(self, tmp_path):
        est = self.make_estimate()
        assert est.csv_header() == (
            "t",
            "i",
            "c_a1",
            "c_b1",
            "mean",
            "stderr",
            "n_trees",
            "mean_tree_size",
        )
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        est.to_csv(p1)
        est.to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,i,c_a1,c_b1,mean,stderr,n_trees,mean_tree_size"
        assert lines[1].startswith("0,-2,0.5,0,")


class TestParticleConfig:
    def test_default_lifetime_rate_is_reciprocal_horizon(self):
        cfg = ParticleConfig(horizon=4.0, seed=0)
        assert cfg.lifetime_rate == pytest.approx(0.25)

    def test_dict_roundtrip(self):
        cfg = ParticleConfig(horizon=2.0, seed=5, lifetime_rate=0.7, max_particles=10)
        assert ParticleConfig.from_dict(cfg.to_dict()) == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            ParticleConfig(horizon=0.0, seed=0)
        with pytest.raises(ValueError):
            ParticleConfig(horizon=1.0, seed=0, lifetime_rate=-1.0)
        with pytest.raises(ValueError):
            ParticleConfig(horizon=1.0, seed=0, max_particles=0)
