"""Connectome feature construction: correlation, vectorization,
standardization, masking and augmentation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaformer.data import (
    AAL,
    CC200,
    DOS160,
    AtlasSpec,
    Connectome,
    NoiseMask,
    RoiTimeSeries,
    apply_mask,
    augment_noise,
    pearson_fc,
    sample_mask,
    standardize_apply,
    standardize_fit,
    vectorize_lower,
)
from metaformer.errors import (
    AlreadyStandardizedError,
    AtlasMismatchError,
    ConstantRoiError,
    EmptyInputError,
    LengthMismatchError,
    MixedAtlasError,
    NonFiniteError,
    NotSquareError,
    NotSymmetricError,
)


def ts(values, name="T", subject="s0"):
    values = np.asarray(values, dtype=np.float64)
    return RoiTimeSeries(subject, AtlasSpec(name, values.shape[1]), values)


def conn(features, name="T", subject="s0", standardized=False):
    features = np.asarray(features, dtype=np.float64)
    k = int(round((1 + math.sqrt(1 + 8 * len(features))) / 2))
    return Connectome(subject, AtlasSpec(name, k), features, standardized)


class TestAtlasSpec:
    def test_builtin_feature_lengths(self):
        assert AAL.feature_len == 6670
        assert CC200.feature_len == 19900
        assert DOS160.feature_len == 12720

    def test_builtin_roi_counts(self):
        assert (AAL.k, CC200.k, DOS160.k) == (116, 200, 160)


class TestPearsonFc:
    def test_identical_columns_perfectly_correlated(self):
        x = np.array([1.0, 2.0, 5.0, 3.0])
        c = pearson_fc(ts(np.column_stack([x, x])))
        assert c[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_negated_column_anticorrelated(self):
        x = np.array([1.0, 2.0, 5.0, 3.0])
        c = pearson_fc(ts(np.column_stack([x, -x])))
        assert c[0, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_hand_computed_coefficient(self):
        # Direct covariance/variance evaluation as the oracle.
        x = np.array([1.0, 2.0, 3.0])
        y = np.array([1.0, 2.0, 4.0])
        xc, yc = x - x.mean(), y - y.mean()
        expected = (xc * yc).sum() / math.sqrt((xc ** 2).sum() * (yc ** 2).sum())
        c = pearson_fc(ts(np.column_stack([x, y])))
        assert c[0, 1] == pytest.approx(expected, abs=1e-12)
        assert c[0, 1] == pytest.approx(0.9819805, abs=1e-7)

    def test_diagonal_exactly_one_and_symmetric(self):
        rng = np.random.default_rng(7)
        c = pearson_fc(ts(rng.normal(size=(50, 8))))
        assert (np.diag(c) == 1.0).all()
        assert np.array_equal(c, c.T)
        assert (np.abs(c) <= 1.0).all()

    def test_constant_roi_rejected(self):
        values = np.ones((5, 3))
        values[:, 0] = [1, 2, 3, 4, 5]
        values[:, 2] = [2, 1, 3, 5, 4]
        with pytest.raises(ConstantRoiError) as err:
            pearson_fc(ts(values))
        assert err.value.column == 1

    def test_nonfinite_rejected_at_construction(self):
        values = np.ones((4, 2))
        values[1, 1] = np.nan
        with pytest.raises(NonFiniteError):
            ts(values)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 30), st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
    def test_affine_invariance_positive_scale(self, k, a, b):
        rng = np.random.default_rng(k)
        base = rng.normal(size=(20, k))
        c0 = pearson_fc(ts(base))
        mapped = base.copy()
        mapped[:, 0] = a * mapped[:, 0] + b
        c1 = pearson_fc(ts(mapped))
        assert np.abs(c0 - c1).max() < 1e-9

    def test_negative_scale_flips_sign(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=(30, 4))
        c0 = pearson_fc(ts(base))
        mapped = base.copy()
        mapped[:, 2] = -2.0 * mapped[:, 2] + 1.0
        c1 = pearson_fc(ts(mapped))
        expected = c0.copy()
        expected[2, :] *= -1
        expected[:, 2] *= -1
        np.fill_diagonal(expected, 1.0)
        assert np.abs(c1 - expected).max() < 1e-9


class TestVectorizeLower:
    def test_three_by_three_order(self):
        a, b, c = 0.1, 0.2, 0.3
        m = np.array([[1, a, b], [a, 1, c], [b, c, 1]])
        out = vectorize_lower(m)
        assert out.tolist() == [a, b, c]

    @pytest.mark.parametrize("k,expected", [(116, 6670), (200, 19900), (160, 12720)])
    def test_atlas_lengths(self, k, expected):
        rng = np.random.default_rng(k)
        sym = rng.normal(size=(k, k))
        sym = (sym + sym.T) / 2
        assert len(vectorize_lower(sym)) == expected

    def test_not_square(self):
        with pytest.raises(NotSquareError):
            vectorize_lower(np.ones((3, 4)))

    def test_not_symmetric(self):
        m = np.eye(3)
        m[0, 1] = 0.5
        with pytest.raises(NotSymmetricError):
            vectorize_lower(m)

    @settings(max_examples=29, deadline=None)
    @given(st.integers(2, 30))
    def test_roundtrip_length_matches_atlas(self, k):
        rng = np.random.default_rng(k + 1000)
        series = ts(rng.normal(size=(k + 2, k)))
        vec = vectorize_lower(pearson_fc(series))
        assert len(vec) == series.atlas.feature_len


class TestStandardize:
    def test_single_sample_degenerate(self):
        c = conn([0.5, -0.5, 0.0])
        state = standardize_fit([c])
        assert np.array_equal(state.mean, c.features)
        assert (state.std == 1.0).all()
        assert state.degenerate.all()

    def test_two_sample_population_convention(self):
        # population std of {0, 2} is 1, sample std would be sqrt(2)
        atlas = AtlasSpec("T", 3)
        zeros = Connectome("a", atlas, np.zeros(3))
        twos = Connectome("b", atlas, np.full(3, 2.0))
        state = standardize_fit([zeros, twos])
        assert np.array_equal(state.mean, np.ones(3))
        assert np.array_equal(state.std, np.ones(3))

    def test_zero_mean_unit_std_input_gives_identity_state(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(40, 6))
        x = (x - x.mean(0)) / x.std(0)
        atlas = AtlasSpec("T", 4)
        state = standardize_fit([Connectome(f"s{i}", atlas, row) for i, row in enumerate(x)])
        assert np.abs(state.mean).max() < 1e-9
        assert np.abs(state.std - 1.0).max() < 1e-9

    def test_apply_zscores_the_fitting_set(self):
        rng = np.random.default_rng(5)
        atlas = AtlasSpec("T", 4)
        conns = [Connectome(f"s{i}", atlas, rng.uniform(-1, 1, 6)) for i in range(25)]
        state = standardize_fit(conns)
        z = np.stack([standardize_apply(state, c).features for c in conns])
        assert np.abs(z.mean(0)).max() < 1e-9
        assert np.abs(z.std(0) - 1.0).max() < 1e-9

    def test_apply_unit_state_shifts_by_mean(self):
        # state (mean 1, std 1) maps a vector of 2s to a vector of 1s
        atlas = AtlasSpec("T", 3)
        state = standardize_fit([Connectome("a", atlas, np.zeros(3)),
                                 Connectome("b", atlas, np.full(3, 2.0))])
        out = standardize_apply(state, Connectome("c", atlas, np.full(3, 2.0)))
        assert np.array_equal(out.features, np.ones(3))
        assert out.standardized

    def test_degenerate_feature_passes_through_centered(self):
        atlas = AtlasSpec("T", 3)
        fit_set = [Connectome("a", atlas, [0.2, -0.4, 0.8]),
                   Connectome("b", atlas, [0.2, 0.4, 0.4])]
        state = standardize_fit(fit_set)
        assert state.degenerate[0] and not state.degenerate[1]
        out = standardize_apply(state, Connectome("c", atlas, [0.9, 0.0, 0.0]))
        assert out.features[0] == pytest.approx(0.9 - 0.2, abs=1e-12)

    def test_errors(self):
        atlas = AtlasSpec("T", 3)
        other = AtlasSpec("U", 3)
        c = Connectome("a", atlas, [0.1, 0.2, 0.3])
        with pytest.raises(EmptyInputError):
            standardize_fit([])
        with pytest.raises(MixedAtlasError):
            standardize_fit([c, Connectome("b", other, [0.1, 0.2, 0.3])])
        state = standardize_fit([c])
        with pytest.raises(AtlasMismatchError):
            standardize_apply(state, Connectome("b", other, [0.1, 0.2, 0.3]))
        std = standardize_apply(state, Connectome("b", atlas, [0.1, 0.2, 0.3]))
        with pytest.raises(AlreadyStandardizedError):
            standardize_apply(state, std)


class TestAugment:
    def make_standardized(self, k):
        rng = np.random.default_rng(11)
        atlas = AtlasSpec("T", k)
        return Connectome("s", atlas, rng.normal(size=atlas.feature_len), standardized=True)

    def test_p_zero_identity(self):
        c = self.make_standardized(5)
        out = augment_noise(c, 0.0, 0.5, np.random.default_rng(0))
        assert out is c

    def test_sigma_zero_identity_values(self):
        c = self.make_standardized(5)
        out = augment_noise(c, 1.0, 0.0, np.random.default_rng(0))
        assert np.array_equal(out.features, c.features)

    def test_half_normal_mean_displacement(self):
        # E|N(0, sigma^2)| = sigma * sqrt(2/pi), n = 6670 features
        c = self.make_standardized(116)
        out = augment_noise(c, 1.0, 0.01, np.random.default_rng(1))
        mean_abs = np.abs(out.features - c.features).mean()
        expected = 0.01 * math.sqrt(2 / math.pi)
        assert expected * 0.8 < mean_abs < expected * 1.2

    def test_same_seed_same_output(self):
        c = self.make_standardized(10)
        a = augment_noise(c, 0.5, 0.1, np.random.default_rng(9))
        b = augment_noise(c, 0.5, 0.1, np.random.default_rng(9))
        assert np.array_equal(a.features, b.features)


class TestMask:
    @pytest.mark.parametrize("n,ratio,zeros", [(10, 0.1, 1), (6670, 0.1, 667),
                                               (19900, 0.1, 1990), (12720, 0.1, 1272)])
    def test_exact_zero_count(self, n, ratio, zeros):
        m = sample_mask(n, ratio, np.random.default_rng(0))
        assert m.n_masked == zeros

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10000), st.sampled_from([0.05, 0.1, 0.25]))
    def test_zero_count_matches_round(self, n, ratio):
        m = sample_mask(n, ratio, np.random.default_rng(n))
        assert m.n_masked == int(round(ratio * n))
        assert np.isin(m.mask, (0.0, 1.0)).all()

    def test_deterministic_given_seed(self):
        a = sample_mask(500, 0.1, np.random.default_rng(4))
        b = sample_mask(500, 0.1, np.random.default_rng(4))
        assert np.array_equal(a.mask, b.mask)

    def test_apply_mask_elementwise(self):
        c = Connectome("s", AtlasSpec("T", 3), np.array([1.0, 2.0, 3.0]), standardized=True)
        m = NoiseMask(0, np.array([1.0, 0.0, 1.0]))
        assert apply_mask(c, m).features.tolist() == [1.0, 0.0, 3.0]

    def test_apply_all_ones_identity(self):
        c = Connectome("s", AtlasSpec("T", 3), np.array([1.0, 2.0, 3.0]), standardized=True)
        out = apply_mask(c, NoiseMask(0, np.ones(3)))
        assert np.array_equal(out.features, c.features)

    def test_apply_all_zeros(self):
        c = Connectome("s", AtlasSpec("T", 3), np.array([1.0, 2.0, 3.0]), standardized=True)
        out = apply_mask(c, NoiseMask(0, np.zeros(3)))
        assert (out.features == 0.0).all()

    def test_length_mismatch(self):
        c = Connectome("s", AtlasSpec("T", 3), np.array([1.0, 2.0, 3.0]), standardized=True)
        with pytest.raises(LengthMismatchError):
            apply_mask(c, NoiseMask(0, np.ones(4)))
