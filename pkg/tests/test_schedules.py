import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from losslab.schedules import (
    PRESETS,
    Constant,
    CosineRestarts,
    LinearDecay,
    StepDecay,
    Warmup,
    from_dict,
    lr_at,
    lr_table,
    restart_epochs,
    scale_lr_for_batch,
    to_dict,
)


def simulated_cosine(spec, epochs, ipe):
    """Stateful reference: advance T_cur by 1/ipe per step and reset once it passes T_i."""
    out, t_cur, t_i = [], 0.0, float(spec.t0)
    for _ in range(epochs * ipe):
        if t_cur > t_i + 1e-12:
            t_cur -= t_i
            t_i *= spec.t_mult
        out.append(spec.eta_min + 0.5 * (spec.eta_max - spec.eta_min) * (1 + math.cos(math.pi * t_cur / t_i)))
        t_cur += 1.0 / ipe
    return out


class TestCosine:
    def test_endpoints_exact(self):
        s = CosineRestarts(1e-6, 0.05, 10, 2)
        assert lr_at(s, 0) == 0.05
        assert lr_at(s, 10) == 1e-6
        assert lr_at(s, 30) == 1e-6
        assert lr_at(s, 10, 1, 100) == pytest.approx(0.05, rel=1e-4)

    def test_restart_epochs(self):
        assert restart_epochs(CosineRestarts(1e-6, 0.05, 10, 2), 200) == [10, 30, 70, 150]
        assert restart_epochs(CosineRestarts(0, 1, 5, 1), 20) == [5, 10, 15]

    @pytest.mark.parametrize("t0,t_mult,ipe", [(10, 2, 1), (3, 2, 7), (2, 1.5, 4), (4, 1, 3)])
    def test_matches_stateful_reference(self, t0, t_mult, ipe):
        s = CosineRestarts(0.001, 0.1, t0, t_mult)
        got = [lr for _, _, lr in lr_table(s, 40, ipe)]
        ref = simulated_cosine(s, 40, ipe)
        assert max(abs(a - b) for a, b in zip(got, ref)) < 1e-12

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0, 0.5), st.floats(0, 1), st.integers(1, 20), st.sampled_from([1, 2, 3]),
        st.integers(0, 300), st.integers(0, 9),
    )
    def test_bounded(self, eta_min, span, t0, t_mult, epoch, it):
        s = CosineRestarts(eta_min, eta_min + span, t0, t_mult)
        lr = lr_at(s, epoch, it, 10)
        assert s.eta_min - 1e-15 <= lr <= s.eta_max + 1e-15

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            CosineRestarts(0.1, 0.01, 10)
        with pytest.raises(ValueError):
            CosineRestarts(0, 0.1, 0)
        with pytest.raises(ValueError):
            CosineRestarts(0, 0.1, 10, 0.5)
        with pytest.raises(TypeError):
            restart_epochs(Constant(0.1), 10)


class TestWarmup:
    def test_ramp_hits_peak(self):
        s = Warmup(2.5, 200, Constant(2.5))
        assert lr_at(s, 0, 0, 1000) == 0.0
        assert lr_at(s, 0, 100, 1000) == 1.25
        assert lr_at(s, 0, 200, 1000) == 2.5
        assert lr_at(s, 0, 199, 1000) < 2.5

    def test_global_step_across_epochs(self):
        s = Warmup(1.0, 10, Constant(1.0))
        assert lr_at(s, 1, 2, 4) == pytest.approx(0.6)
        assert lr_at(s, 2, 2, 4) == 1.0

    def test_tail_continues_after_ramp(self):
        s = Warmup(2.5, 200, StepDecay(2.5, 10, (60,)))
        assert lr_at(s, 61, 0, 400) == pytest.approx(0.25)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 10), st.integers(1, 500), st.integers(1, 50))
    def test_monotone_ramp(self, peak, w, ipe):
        s = Warmup(peak, w, Constant(peak))
        rates = [lr_at(s, g // ipe, g % ipe, ipe) for g in range(w + 1)]
        assert all(b >= a for a, b in zip(rates, rates[1:]))
        assert rates[-1] == peak


class TestStepAndLinear:
    def test_step_milestones(self):
        s = StepDecay(0.05, 5, (60, 120, 160))
        assert lr_at(s, 59) == 0.05
        assert lr_at(s, 60) == pytest.approx(0.01)
        assert lr_at(s, 160) == pytest.approx(0.05 / 125)

    def test_linear(self):
        s = LinearDecay(1.0, 0.0, 10)
        assert lr_at(s, 5) == 0.5
        assert lr_at(s, 20) == 0.0

    def test_step_milestones_must_increase(self):
        with pytest.raises(ValueError):
            StepDecay(0.1, 10, (5, 5))

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            lr_at(Constant(0.1), -1)


def test_linear_scaling_rule():
    assert scale_lr_for_batch(0.05, 128, 8192) == pytest.approx(3.2)
    with pytest.raises(ValueError):
        scale_lr_for_batch(0.1, 0, 10)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_dict_round_trip(name):
    s = PRESETS[name]
    assert from_dict(to_dict(s)) == s


def test_unknown_kind():
    with pytest.raises(ValueError):
        from_dict({"kind": "exponential"})
