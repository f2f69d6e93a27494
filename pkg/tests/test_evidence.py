import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragfield.errors import InvalidInputError, UndefinedScoreError
from fragfield.evidence import (
    EvaluationSample,
    calibrate_weights,
    exceedance_from_categorical,
    read_calibration_samples,
    soft_confusion,
    soft_f1,
    weight_from_f1,
)


class TestExceedance:
    def test_cumulative(self):
        y = exceedance_from_categorical([0.2, 0.3, 0.5])
        assert y == pytest.approx([1.0, 0.8, 0.5])

    def test_zero(self):
        assert exceedance_from_categorical([0, 0, 0]) == pytest.approx([0, 0, 0])

    def test_certain_complete(self):
        assert exceedance_from_categorical([0, 0, 1]) == pytest.approx([1, 1, 1])

    def test_residual_mass(self):
        # sum < 1 leaves the remainder in the implicit no-damage bucket
        y = exceedance_from_categorical([0.1, 0.1, 0.1])
        assert y == pytest.approx([0.3, 0.2, 0.1])

    def test_rejects_oversum(self):
        with pytest.raises(InvalidInputError):
            exceedance_from_categorical([0.6, 0.6, 0.2])

    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=5).filter(
            lambda xs: sum(xs) <= 1.0
        )
    )
    @settings(max_examples=200)
    def test_monotone_nonincreasing(self, s):
        y = exceedance_from_categorical(s)
        assert np.all(np.diff(y) <= 1e-12)
        assert np.all((y >= 0) & (y <= 1))


class TestSoftConfusion:
    def test_single_positive(self):
        smp = EvaluationSample(o=(1, 1, 1), g=(0.9, 0.9, 0.9))
        assert soft_confusion([smp], 0) == pytest.approx((0.9, 0.0, 0.1))

    def test_single_negative(self):
        smp = EvaluationSample(o=(0, 0, 0), g=(0.9, 0.9, 0.9))
        assert soft_confusion([smp], 0) == pytest.approx((0.0, 0.9, 0.0))

    def test_perfect_hard(self):
        samples = [
            EvaluationSample(o=(1, 1, 0), g=(1, 1, 0)),
            EvaluationSample(o=(1, 0, 0), g=(1, 0, 0)),
        ]
        for j in range(3):
            tp, fp, fn = soft_confusion(samples, j)
            assert fp == 0.0 and fn == 0.0

    def test_reduces_to_hard_confusion(self):
        rng = np.random.default_rng(5)
        samples = []
        for _ in range(200):
            d = rng.integers(0, 4)
            o = tuple(1.0 if d >= j else 0.0 for j in (1, 2, 3))
            gd = rng.integers(0, 4)
            g = tuple(1.0 if gd >= j else 0.0 for j in (1, 2, 3))
            samples.append(EvaluationSample(o=o, g=g))
        for j in range(3):
            tp, fp, fn = soft_confusion(samples, j)
            hard_tp = sum(s.g[j] == 1 and s.o[j] == 1 for s in samples)
            hard_fp = sum(s.g[j] == 1 and s.o[j] == 0 for s in samples)
            hard_fn = sum(s.g[j] == 0 and s.o[j] == 1 for s in samples)
            assert (tp, fp, fn) == (hard_tp, hard_fp, hard_fn)

    def test_tp_fn_sum_to_positives(self):
        rng = np.random.default_rng(6)
        samples = [
            EvaluationSample(
                o=(1, 1, 1) if rng.random() < 0.5 else (0, 0, 0),
                g=tuple(rng.uniform(0, 1, 3)),
            )
            for _ in range(50)
        ]
        tp, _, fn = soft_confusion(samples, 1)
        assert tp + fn == pytest.approx(sum(s.o[1] for s in samples))

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            soft_confusion([], 0)

    def test_sample_validation(self):
        with pytest.raises(InvalidInputError):
            EvaluationSample(o=(0, 1, 0), g=(0.5, 0.5, 0.5))  # increasing o
        with pytest.raises(InvalidInputError):
            EvaluationSample(o=(1, 0.5, 0), g=(0.5, 0.5, 0.5))  # non-binary o


class TestSoftF1:
    def test_values(self):
        assert soft_f1(0.9, 0.0, 0.1) == pytest.approx(1.8 / 1.9)
        assert soft_f1(1, 0, 0) == 1.0
        assert soft_f1(1, 1, 1) == 0.5

    def test_undefined(self):
        with pytest.raises(UndefinedScoreError):
            soft_f1(0, 0, 0)


class TestWeightFromF1:
    def test_zero(self):
        assert weight_from_f1(0.0) == 0.0

    def test_exact_quarter_loss(self):
        assert weight_from_f1(0.75) == pytest.approx(4.0, abs=1e-12)

    def test_typical_value(self):
        assert weight_from_f1(0.90) == pytest.approx(-2 * math.log2(0.1), abs=1e-12)

    def test_perfect_clamps_with_warning(self):
        with pytest.warns(RuntimeWarning):
            assert weight_from_f1(1.0) == 30.0

    def test_near_perfect_clamps(self):
        with pytest.warns(RuntimeWarning):
            assert weight_from_f1(1 - 2**-20) == 30.0

    def test_custom_cap(self):
        with pytest.warns(RuntimeWarning):
            assert weight_from_f1(1.0, w_max=12.5) == 12.5

    @given(st.floats(0.0, 0.99))
    @settings(max_examples=100)
    def test_halving_law(self, f1):
        # +2 weight units <=> halving the residual error
        lhs = weight_from_f1(f1) + 2.0
        rhs = weight_from_f1(1.0 - (1.0 - f1) / 2.0)
        assert lhs == pytest.approx(rhs, abs=1e-9)

    @given(st.floats(0.0, 0.95), st.floats(0.001, 0.04))
    @settings(max_examples=100)
    def test_monotone(self, f1, df):
        assert weight_from_f1(f1 + df) > weight_from_f1(f1)


class TestCalibration:
    def _write(self, path, rows):
        with open(path, "w") as fh:
            fh.write("sample_id,o_mod,o_ext,o_comp,g_mod,g_ext,g_comp\n")
            for r in rows:
                fh.write(",".join(str(v) for v in r) + "\n")

    def test_round_trip_and_weights(self, tmp_path):
        path = tmp_path / "cal.csv"
        self._write(
            path,
            [
                ("s1", 1, 1, 0, 0.95, 0.8, 0.1),
                ("s2", 1, 0, 0, 0.9, 0.2, 0.05),
                ("s3", 0, 0, 0, 0.1, 0.05, 0.02),
            ],
        )
        samples = read_calibration_samples(path)
        assert len(samples) == 3
        w = calibrate_weights(samples)
        assert w.shape == (3,)
        assert np.all(w >= 0)
        # manual check of state 0
        tp, fp, fn = soft_confusion(samples, 0)
        assert w[0] == pytest.approx(weight_from_f1(soft_f1(tp, fp, fn)))

    def test_missing_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        with open(path, "w") as fh:
            fh.write("sample_id,o_mod,o_ext,g_mod,g_ext,g_comp\n")
            fh.write("s1,1,0,0.9,0.2,0.1\n")
        with pytest.raises(InvalidInputError, match="o_comp"):
            read_calibration_samples(path)

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        self._write(path, [("s1", 1, 1, 0, 0.9, 0.8, 0.1), ("s2", 1, "x", 0, 0.9, 0.8, 0.1)])
        with pytest.raises(InvalidInputError, match=":3:"):
            read_calibration_samples(path)
