import numpy as np
import pytest

from stlcbf.formulas import (
    Affine,
    Always,
    And,
    Ball,
    Eventually,
    Interval,
    Pred,
    PredicateDef,
    Until,
)
from stlcbf.monitor import (
    SampledSignal,
    SignalDomainError,
    eval_boolean,
    eval_robustness,
    monitor_verdict,
)
from helpers_stl import (
    brute_boolean,
    brute_robustness,
    random_formula,
    scalar_predicates,
    signal_for,
)


def const_signal(value, t_end=10.0, n=11):
    ts = np.linspace(0, t_end, n)
    return SampledSignal(ts, np.full((n, 1), float(value)))


TABLE = scalar_predicates()  # over0: x>=0, over1: x>=1, under2: x<=2, near0


class TestBoolean:
    def test_constant_always(self):
        sig = const_signal(1.0)
        assert eval_boolean(Always(Interval(0, 5), Pred("over0")), sig, 0.0, TABLE)

    def test_crossing_signal(self):
        ts = np.linspace(0, 10, 21)
        xs = np.linspace(-1, 1, 21)[:, None]
        sig = SampledSignal(ts, xs)
        f_ev = Eventually(Interval(0, 10), Pred("over0"))
        f_alw = Always(Interval(0, 10), Pred("over0"))
        assert eval_boolean(f_ev, sig, 0.0, TABLE)
        assert not eval_boolean(f_alw, sig, 0.0, TABLE)

    def test_until_three_phase(self):
        # left-clause true on [0, 1.5], right-clause true from 1.4 on
        left = PredicateDef("left", Affine((-1.0,), 1.5))   # x <= 1.5
        right = PredicateDef("right", Affine((1.0,), -1.4))  # x >= 1.4
        table = {"left": left, "right": right}
        ts = np.linspace(0, 3, 31)
        sig = SampledSignal(ts, ts[:, None])  # x(t) = t
        f = Until(Interval(1, 2), Pred("left"), Pred("right"))
        assert eval_boolean(f, sig, 0.0, table)
        # witness must lie in [1.4, 1.5]: brute scan over the same sampling
        assert brute_boolean(f, sig, 0.0, table)
        tight = Until(Interval(1.6, 2.0), Pred("left"), Pred("right"))
        assert not eval_boolean(tight, sig, 0.0, table)

    def test_window_beyond_domain(self):
        sig = const_signal(1.0, t_end=4.0)
        with pytest.raises(SignalDomainError):
            eval_boolean(Always(Interval(0, 5), Pred("over0")), sig, 0.0, TABLE)


class TestRobustness:
    def test_constant_always(self):
        sig = const_signal(1.0)
        assert eval_robustness(
            Always(Interval(0, 5), Pred("over0")), sig, 0.0, TABLE
        ) == pytest.approx(1.0)

    def test_conjunction_is_min(self):
        table = {
            "a": PredicateDef("a", Affine((1.0,), 0.0)),   # h = x
            "b": PredicateDef("b", Affine((1.0,), 2.0)),   # h = x + 2
        }
        sig = const_signal(1.0)
        f = And((Pred("a"), Pred("b")))
        assert eval_robustness(f, sig, 0.0, table) == pytest.approx(1.0)

    def test_interpolated_endpoint_counts(self):
        # samples at 0 and 2 with a dip at 1 that only interpolation sees
        sig = SampledSignal([0.0, 2.0], [[2.0], [-2.0]])
        f = Always(Interval(0, 1), Pred("over0"))
        # at the window endpoint t=1 the interpolated value is exactly 0
        assert eval_robustness(f, sig, 0.0, TABLE) == pytest.approx(0.0)
        assert eval_boolean(f, sig, 0.0, TABLE)  # boundary counts as true


class TestBruteForceEquivalence:
    def test_random_cases_match_oracle(self):
        rng = np.random.default_rng(1234)
        names = list(TABLE)
        for _ in range(200):
            f = random_formula(rng, depth=int(rng.integers(1, 4)), names=names)
            sig = signal_for(rng, f, max_samples=30)
            want_b = brute_boolean(f, sig, 0.0, TABLE)
            want_r = brute_robustness(f, sig, 0.0, TABLE)
            assert eval_boolean(f, sig, 0.0, TABLE) == want_b
            assert eval_robustness(f, sig, 0.0, TABLE) == want_r

    def test_sign_consistency(self):
        rng = np.random.default_rng(555)
        names = list(TABLE)
        for _ in range(200):
            f = random_formula(rng, depth=2, names=names)
            sig = signal_for(rng, f, max_samples=25)
            rob = eval_robustness(f, sig, 0.0, TABLE)
            sat = eval_boolean(f, sig, 0.0, TABLE)
            if rob > 0:
                assert sat
            elif rob < 0:
                assert not sat


class TestRefinementMonotonicity:
    def test_always_only_formulas_never_flip_to_violated(self):
        # predicates concave along segments: refining adds interior points
        # whose values stay above the endpoint minimum
        rng = np.random.default_rng(99)
        table = {
            "band": PredicateDef("band", Ball((0.0,), 2.0)),
            "hi": PredicateDef("hi", Affine((1.0,), 0.5)),
        }
        for _ in range(60):
            n = int(rng.integers(4, 10))
            ts = np.sort(rng.uniform(0.0, 10.0, n))
            ts[0], ts[-1] = 0.0, 10.0
            ts = np.unique(ts)
            xs = rng.uniform(-1.8, 1.8, (len(ts), 1))
            coarse = SampledSignal(ts, xs)
            # refine: midpoints of every pair, same interpolant
            mid = (ts[:-1] + ts[1:]) / 2
            all_t = np.sort(np.concatenate([ts, mid]))
            fine = SampledSignal(all_t, np.vstack([coarse.state_at(t) for t in all_t]))
            f = Always(
                Interval(0, round(float(rng.uniform(2, 8)), 1)),
                Pred(str(rng.choice(["band", "hi"]))),
            )
            if eval_boolean(f, coarse, 0.0, table):
                assert eval_boolean(f, fine, 0.0, table)


def test_verdict_bundle():
    sig = const_signal(1.0)
    v = monitor_verdict(Always(Interval(0, 5), Pred("over0")), sig, TABLE)
    assert v.satisfied and v.robustness == pytest.approx(1.0)
