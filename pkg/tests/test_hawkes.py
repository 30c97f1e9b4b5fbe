"""Thinning simulator: intensities, state recursion, exactness, determinism."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hawkesmm.errors import NumericalError
from hawkesmm.hawkes import (
    ASK,
    BID,
    EventLog,
    IntensitySpec,
    MarketState,
    advance,
    apply_event,
    base_intensity,
    controlled_intensity,
    simulate,
    simulate_price,
    time_change,
)
from hawkesmm.kernels import ExpSumKernel, theta_to_c

TWO_EXP = ExpSumKernel(weights=(0.45, 0.45), rates=(1.0, 1.0))
ZERO_KERNEL = ExpSumKernel(weights=(), rates=())


def spec_two_exp():
    return IntensitySpec(mu=0.1, kernel=TWO_EXP, k_over_sigma=20.0)


def flat(ask=0.0, bid=0.0):
    return lambda t, s: (ask, bid)


class TestIntensities:
    def test_baseline_only(self):
        s = spec_two_exp().zero_state()
        assert base_intensity(spec_two_exp(), s, ASK) == pytest.approx(0.1)

    def test_affine_sum(self):
        st_ = MarketState(inventory=0, c_ask=np.array([0.45, 0.45]), c_bid=np.zeros(2))
        assert base_intensity(spec_two_exp(), st_, ASK) == pytest.approx(1.0)
        assert base_intensity(spec_two_exp(), st_, BID) == pytest.approx(0.1)

    def test_identity_when_no_baseline(self):
        spec = IntensitySpec(mu=0.0, kernel=TWO_EXP, k_over_sigma=20.0)
        st_ = MarketState(inventory=0, c_ask=np.array([0.3, 0.2]), c_bid=np.zeros(2))
        assert base_intensity(spec, st_, ASK) == pytest.approx(0.5)

    def test_zero_spread_is_base(self):
        st_ = MarketState(inventory=0, c_ask=np.array([0.45, 0.45]), c_bid=np.zeros(2))
        assert controlled_intensity(spec_two_exp(), st_, ASK, 0.0) == pytest.approx(1.0)

    def test_damping_closed_form(self):
        # base 1.0, k/sigma=20, spread 0.05 -> e^{-1}
        st_ = MarketState(inventory=0, c_ask=np.array([0.45, 0.45]), c_bid=np.zeros(2))
        got = controlled_intensity(spec_two_exp(), st_, ASK, 0.05)
        assert got == pytest.approx(math.exp(-1), rel=1e-12)

    def test_huge_spread_suppresses(self):
        st_ = MarketState(inventory=0, c_ask=np.array([0.45, 0.45]), c_bid=np.zeros(2))
        assert controlled_intensity(spec_two_exp(), st_, ASK, 1e3) == pytest.approx(0.0, abs=1e-300)

    def test_negative_spread_rejected(self):
        with pytest.raises(ValueError):
            controlled_intensity(spec_two_exp(), spec_two_exp().zero_state(), ASK, -0.01)


class TestStateRecursion:
    def test_advance_zero_dt(self):
        s = MarketState(inventory=3, c_ask=np.array([1.0, 2.0]), c_bid=np.array([0.5, 0.0]), clock=1.0)
        assert advance(s, TWO_EXP, 0.0) is s

    def test_advance_exact_decay(self):
        s = MarketState(inventory=0, c_ask=np.array([1.0]), c_bid=np.array([0.0]))
        out = advance(s, ExpSumKernel(weights=(1.0,), rates=(1.0,)), 1.0)
        assert out.c_ask[0] == pytest.approx(math.exp(-1), rel=1e-14)
        assert out.clock == pytest.approx(1.0)

    @given(a=st.floats(0.0, 3.0), b=st.floats(0.0, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_advance_semigroup(self, a, b):
        k = ExpSumKernel(weights=(0.45, 0.45), rates=(1.0, 2.5))
        s = MarketState(inventory=1, c_ask=np.array([0.7, 0.2]), c_bid=np.array([0.1, 0.9]))
        two = advance(advance(s, k, a), k, b)
        one = advance(s, k, a + b)
        assert np.allclose(two.c_ask, one.c_ask, rtol=0, atol=1e-14)
        assert np.allclose(two.c_bid, one.c_bid, rtol=0, atol=1e-14)

    def test_ask_event_sells(self):
        s = spec_two_exp().zero_state()
        out = apply_event(s, TWO_EXP, ASK)
        assert out.inventory == -1
        assert np.allclose(out.c_ask, [0.45, 0.45])
        assert np.all(out.c_bid == 0.0)

    def test_bid_event_buys(self):
        out = apply_event(spec_two_exp().zero_state(), TWO_EXP, BID)
        assert out.inventory == 1
        assert np.allclose(out.c_bid, [0.45, 0.45])


class TestSimulate:
    def test_pure_poisson_rate(self):
        spec = IntensitySpec(mu=1.0, kernel=ZERO_KERNEL, k_over_sigma=20.0)
        log = simulate(spec, flat(), horizon=1000.0, seed=42)
        for side in (ASK, BID):
            rate = len(log.times(side)) / 1000.0
            assert abs(rate - 1.0) < 3.0 * math.sqrt(1000.0) / 1000.0

    def test_huge_spread_kills_flow(self):
        spec = IntensitySpec(mu=0.1, kernel=TWO_EXP, k_over_sigma=20.0)
        log = simulate(spec, flat(1e3, 1e3), horizon=100.0, seed=0)
        assert len(log) == 0

    def test_deterministic_byte_identical(self):
        spec = spec_two_exp()
        a = simulate(spec, flat(), horizon=500.0, seed=777)
        b = simulate(spec, flat(), horizon=500.0, seed=777)
        assert a.csv_bytes() == b.csv_bytes()

    def test_internal_state_matches_convolution(self):
        # reconstructing c from raw event times must reproduce the simulator's state
        spec = spec_two_exp()
        seen: list[MarketState] = []
        log = simulate(spec, flat(), horizon=300.0, seed=11, on_event=seen.append)
        ask_times = log.times(ASK)
        bid_times = log.times(BID)
        for state in seen[::7]:
            t = state.clock
            want_ask = theta_to_c(ask_times[ask_times <= t], TWO_EXP, t)
            want_bid = theta_to_c(bid_times[bid_times <= t], TWO_EXP, t)
            assert np.allclose(state.c_ask, want_ask, rtol=0, atol=1e-10)
            assert np.allclose(state.c_bid, want_bid, rtol=0, atol=1e-10)

    def test_excited_start_accepted(self):
        spec = spec_two_exp()
        hot = MarketState(inventory=-10, c_ask=np.array([0.0, 10.0]), c_bid=np.array([0.0, 10.0]))
        log = simulate(spec, flat(0.02, 0.02), horizon=5.0, seed=3, initial=hot)
        assert len(log) > 0  # strong excitation produces flow despite the quotes

    def test_explosion_guard(self):
        unstable = IntensitySpec(
            mu=0.5, kernel=ExpSumKernel(weights=(1.5,), rates=(1.0,)), k_over_sigma=20.0
        )
        with pytest.raises(NumericalError):
            simulate(unstable, flat(), horizon=500.0, seed=1, max_events=2000)

    def test_compensator_increments_are_unit_exponential(self):
        spec = spec_two_exp()
        log = simulate(spec, flat(), horizon=10_000.0, seed=12345)
        for side in (ASK, BID):
            inc = time_change(spec, log.times(side), 10_000.0)
            assert stats.kstest(inc, "expon").pvalue > 0.01


class TestTimeChange:
    def test_poisson_increments(self):
        spec = IntensitySpec(mu=2.0, kernel=ZERO_KERNEL, k_over_sigma=20.0)
        inc = time_change(spec, [0.5, 1.0, 2.0], horizon=2.0)
        assert np.allclose(inc, [1.0, 1.0, 2.0])

    def test_hand_computed_two_events(self):
        spec = IntensitySpec(
            mu=0.1, kernel=ExpSumKernel(weights=(0.9,), rates=(1.0,)), k_over_sigma=20.0
        )
        inc = time_change(spec, [1.0, 2.0], horizon=2.0)
        # first: baseline only; second: baseline + one decaying excitation
        assert inc[0] == pytest.approx(0.1)
        assert inc[1] == pytest.approx(0.1 + 0.9 * (1 - math.exp(-1)), rel=1e-12)


class TestEventLog:
    def test_csv_layout(self, tmp_path):
        log = EventLog(events=((0.5, ASK, 0.05), (1.25, BID, 0.0)))
        path = tmp_path / "events.csv"
        log.to_csv(path)
        text = path.read_text(encoding="utf-8")
        assert text.splitlines()[0] == "time,side,spread"
        assert text == log.csv_bytes().decode("utf-8")
        assert "\r" not in text

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            EventLog(events=((1.0, ASK, 0.0), (1.0, BID, 0.0)))

    def test_negative_spread_rejected(self):
        with pytest.raises(ValueError):
            EventLog(events=((1.0, ASK, -0.5),))


class TestPricePath:
    def test_riskless_constant(self):
        path = simulate_price(lambda t, p: 0.0, sigma=0.0, horizon=1.0, dt=0.1, seed=0, p0=5.0)
        assert np.allclose(path, 5.0)

    def test_deterministic(self):
        a = simulate_price(lambda t, p: -p, sigma=0.3, horizon=1.0, dt=0.01, seed=9)
        b = simulate_price(lambda t, p: -p, sigma=0.3, horizon=1.0, dt=0.01, seed=9)
        assert np.array_equal(a, b)
        assert len(a) == 101
