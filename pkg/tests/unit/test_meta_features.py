import math

import numpy as np
import pytest
from statsmodels.tsa.stattools import adfuller

from src.data.models import META_FEATURE_NAMES, TimeSeriesWindow
from src.services.meta_features import (
    adf_lag_order, adf_pvalue, adf_stationarity_ratio, adf_statistic, ar1_fit, autocorrelation,
    extract_batch, extract_meta_features, feature_frame, multivariate_features, rate_of_change,
    spectral_features, spectral_profile, statistical_features,
)
from src.utils.errors import LagTooLarge, NonFiniteInput, WindowTooShort


# --- независимый оракул по формулам таблицы признаков ---

def _oracle_dft_amplitudes(x):
    # прямое ДПФ матрицей exp(-2πi·kj/n), без БПФ
    n = len(x)
    bins = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * bins * np.arange(n)[None, :] / n)
    return np.abs(basis @ (x - x.mean()))


def _oracle_variable(x):
    n = len(x)
    m = sum(x) / n
    m2 = sum((v - m) ** 2 for v in x) / n
    m3 = sum((v - m) ** 3 for v in x) / n
    m4 = sum((v - m) ** 4 for v in x) / n
    std = math.sqrt(m2)
    skew = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    kurt = m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0

    den = sum((v - m) ** 2 for v in x)
    acf1 = sum((x[i] - m) * (x[i + 1] - m) for i in range(n - 1)) / den if den > 0 else 0.0

    ratios = [(x[i + 1] - x[i]) / x[i] for i in range(n - 1) if abs(x[i]) > 1e-8]
    roc_mean = sum(ratios) / len(ratios) if ratios else 0.0
    roc_std = math.sqrt(sum((r - roc_mean) ** 2 for r in ratios) / len(ratios)) if ratios else 0.0

    prev, nxt = x[:-1], x[1:]
    pm, nm = sum(prev) / (n - 1), sum(nxt) / (n - 1)
    sxx = sum((p - pm) ** 2 for p in prev)
    phi = sum((p - pm) * (q - nm) for p, q in zip(prev, nxt)) / sxx
    c = nm - phi * pm
    resid = [q - c - phi * p for p, q in zip(prev, nxt)]
    rm = sum(resid) / len(resid)
    resid_std = math.sqrt(sum((r - rm) ** 2 for r in resid) / len(resid))

    amplitudes = _oracle_dft_amplitudes(np.asarray(x))
    psd = amplitudes ** 2 / n
    freq_mean = psd.mean()
    peak_bin = max(range(1, len(psd)), key=lambda k: (psd[k], -k))
    total = psd[1:].sum()
    entropy = -sum(p / total * math.log(p / total) for p in psd[1:] if p > 0)
    a_mean = amplitudes.mean()
    s2 = sum((a - a_mean) ** 2 for a in amplitudes)
    s_skew = sum((a - a_mean) ** 3 for a in amplitudes) / s2 ** 1.5
    s_kurt = sum((a - a_mean) ** 4 for a in amplitudes) / s2 ** 2

    frame = max(8, n // 4)
    hop = frame // 2
    centered = np.asarray(x) - m
    spectra = [np.abs(np.fft.rfft(centered[s:s + frame])) for s in range(0, n - frame + 1, hop)]
    flux = [math.sqrt(sum((b - a) ** 2 for a, b in zip(spectra[i - 1], spectra[i])))
            for i in range(1, len(spectra))]
    variation = sum(flux) / len(flux) if flux else 0.0

    return [m, std, min(x), max(x), skew, kurt, acf1, roc_mean, roc_std, phi, resid_std,
            freq_mean, peak_bin / n, entropy, s_skew, s_kurt, variation]


def _oracle_pairs(values):
    n, d = values.shape
    if d == 1:
        var = float(np.var(values[:, 0]))
        return [var, var, var, 0.0, 1.0, 0.0]
    covs, corrs = [], []
    for i in range(d):
        for j in range(i + 1, d):
            a, b = values[:, i], values[:, j]
            am, bm = a.mean(), b.mean()
            cov = sum((a[t] - am) * (b[t] - bm) for t in range(n)) / n
            sa, sb = math.sqrt(sum((v - am) ** 2 for v in a) / n), math.sqrt(sum((v - bm) ** 2 for v in b) / n)
            covs.append(cov)
            corrs.append(cov / (sa * sb) if sa > 0 and sb > 0 else 0.0)
    covs, corrs = np.array(covs), np.array(corrs)
    return [covs.mean(), covs.max(), covs.min(), covs.std(), corrs.mean(), corrs.std()]


def oracle_features(values):
    per_variable = np.array([_oracle_variable(list(values[:, i])) for i in range(values.shape[1])]).mean(axis=0)
    stationary = np.mean([
        adfuller(values[:, i], maxlag=adf_lag_order(len(values)), regression="c", autolag="AIC")[1] < 0.05
        for i in range(values.shape[1])
    ])
    return np.concatenate([per_variable[:7], [stationary], per_variable[7:], _oracle_pairs(values)])


def random_window(rng, t_in, d):
    # смесь уровня, тренда, сезонности и шума: все признаки невырождены
    t = np.arange(t_in)[:, None]
    return (rng.uniform(1, 5, size=d) + rng.normal(scale=0.02, size=d) * t
            + rng.uniform(0, 2, size=d) * np.sin(2 * np.pi * t / rng.integers(4, 30))
            + rng.normal(size=(t_in, d)))


class TestFeatureOracle:
    @pytest.mark.parametrize("d", [1, 3, 7])
    def test_matches_formula_oracle(self, d):
        rng = np.random.default_rng(d)
        for _ in range(5):
            values = random_window(rng, 96, d)
            got = extract_meta_features(values).values
            np.testing.assert_allclose(got, oracle_features(values), rtol=1e-8, atol=1e-10)

    @pytest.mark.slow
    def test_matches_formula_oracle_many_windows(self):
        rng = np.random.default_rng(2024)
        for index in range(1000):
            d = (1, 3, 7)[index % 3]
            values = random_window(rng, 96, d)
            got = extract_meta_features(values).values
            np.testing.assert_allclose(got, oracle_features(values), rtol=1e-8, atol=1e-10)


class TestStatisticalFeatures:
    def test_constant_window(self):
        vector = extract_meta_features(np.full(96, 5.0))
        assert vector["mean"] == 5.0
        assert vector["std"] == 0.0
        assert vector["min"] == vector["max"] == 5.0
        assert vector["skewness"] == 0.0
        assert vector["kurtosis"] == 0.0
        assert vector["roc_mean"] == 0.0
        assert vector["roc_std"] == 0.0
        assert np.all(np.isfinite(vector.values))

    def test_alternating_series(self):
        vector = extract_meta_features(np.tile([1.0, -1.0], 48))
        assert vector["mean"] == pytest.approx(0.0, abs=1e-12)
        assert vector["std"] == pytest.approx(1.0)
        assert vector["skewness"] == pytest.approx(0.0, abs=1e-12)
        assert vector["kurtosis"] == pytest.approx(-2.0)

    def test_small_examples(self):
        assert statistical_features([1, 2, 3])[0] == 2.0
        assert statistical_features([1, 2, 3])[4] == pytest.approx(0.0, abs=1e-12)
        mean, std, *_ = statistical_features([0, 0, 0, 4])
        assert mean == 1.0
        assert std == pytest.approx(math.sqrt(3))

    def test_affine_invariance(self, rng):
        values = random_window(rng, 96, 3)
        base = extract_meta_features(values)
        moved = extract_meta_features(2.5 * values + 7.0)
        for name in ("skewness", "kurtosis", "autocorr_mean", "crosscorr_mean", "crosscorr_std"):
            assert moved[name] == pytest.approx(base[name], rel=1e-8, abs=1e-10)
        assert moved["mean"] == pytest.approx(2.5 * base["mean"] + 7.0)
        assert moved["std"] == pytest.approx(2.5 * base["std"])
        assert moved["max"] == pytest.approx(2.5 * base["max"] + 7.0)


class TestTemporalFeatures:
    def test_autocorrelation_examples(self):
        assert autocorrelation([1, -1, 1, -1], 1) == pytest.approx(-0.75)
        assert autocorrelation([3, 3, 3, 3], 1) == 0.0
        assert autocorrelation([1, 2, 3, 4, 5], 0) == pytest.approx(1.0)

    def test_lag_too_large(self):
        with pytest.raises(LagTooLarge):
            autocorrelation([1, 2, 3], 3)

    def test_rate_of_change(self):
        assert rate_of_change([1, 2, 4, 8]) == (pytest.approx(1.0), pytest.approx(0.0))
        assert rate_of_change([5, 5, 5]) == (0.0, 0.0)
        assert rate_of_change([0, 1, 2])[0] == pytest.approx(1.0)

    def test_ar1_exact_recurrence(self):
        x = 0.5 ** np.arange(32)
        phi, residual_std = ar1_fit(x)
        assert phi == pytest.approx(0.5, abs=1e-9)
        assert residual_std == pytest.approx(0.0, abs=1e-9)

    def test_ar1_constant(self):
        assert ar1_fit(np.full(10, 2.0)) == (0.0, 0.0)

    def test_ar1_recovers_coefficient(self):
        estimates = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = np.zeros(96)
            for t in range(1, 96):
                x[t] = 0.8 * x[t - 1] + 0.1 * rng.normal()
            estimates.append(ar1_fit(x)[0])
        assert abs(np.median(estimates) - 0.8) <= 0.15


class TestStationarity:
    def test_lag_rule(self):
        assert adf_lag_order(96) == 11
        assert adf_lag_order(8) == 2

    def test_constant_variables_are_stationary(self):
        assert adf_stationarity_ratio(np.full((20, 3), 1.5)) == 1.0
        assert adf_pvalue(np.full(20, 1.5)) == 0.0

    def test_ratio_is_a_multiple_of_one_over_d(self, rng):
        walk = np.cumsum(rng.normal(size=(96, 1)), axis=0)
        noise = rng.normal(size=(96, 3))
        ratio = adf_stationarity_ratio(np.hstack([noise, walk]))
        assert ratio * 4 == pytest.approx(round(ratio * 4))

    def test_matches_reference_adf(self, rng):
        x = np.cumsum(rng.normal(size=96)) + rng.normal(size=96)
        reference = adfuller(x, maxlag=11, regression="c", autolag="AIC")[1]
        assert adf_pvalue(x) == pytest.approx(reference, rel=1e-6)

    @pytest.mark.parametrize("kind", ["noise", "walk", "ar", "trend"])
    def test_statistic_and_lag_match_statsmodels(self, kind):
        rng = np.random.default_rng(len(kind))
        for _ in range(25):
            e = rng.normal(size=96)
            x = {
                "noise": e,
                "walk": np.cumsum(e),
                "ar": np.array([0.9 ** np.arange(k + 1)[::-1] @ e[:k + 1] for k in range(96)]),
                "trend": 0.05 * np.arange(96) + np.sin(np.arange(96) / 3) + 0.3 * e,
            }[kind]
            statistic, pvalue, used_lag, *_ = adfuller(x, maxlag=11, regression="c", autolag="AIC")
            got_statistic, got_lag = adf_statistic(x, 11)
            assert got_lag == used_lag
            assert got_statistic == pytest.approx(statistic, rel=1e-9)
            assert adf_pvalue(x) == pytest.approx(pvalue, rel=1e-6)

    def test_short_series_use_small_lag(self, rng):
        x = np.cumsum(rng.normal(size=12))
        reference = adfuller(x, maxlag=adf_lag_order(12), regression="c", autolag="AIC")
        assert adf_statistic(x, adf_lag_order(12)) == (pytest.approx(reference[0], rel=1e-9), reference[2])

    def test_white_noise_is_usually_stationary(self):
        hits = sum(adf_pvalue(np.random.default_rng(seed).normal(size=96)) < 0.05 for seed in range(200))
        assert hits / 200 >= 0.95


class TestSpectralFeatures:
    def test_profile_is_one_sided(self):
        profile = spectral_profile(np.random.default_rng(0).normal(size=96))
        assert profile.psd.shape == (49,)
        assert np.all(profile.psd >= 0)
        assert profile.bin_frequencies[-1] == pytest.approx(0.5)

    def test_sinusoid_peak_and_entropy(self):
        x = np.sin(2 * np.pi * 8 * np.arange(96) / 96)
        _, freq_peak, entropy, *_ = spectral_features(x)
        assert freq_peak == pytest.approx(8 / 96)
        assert entropy == pytest.approx(0.0, abs=1e-6)

    def test_zero_energy_conventions(self):
        assert spectral_features(np.full(16, 3.0)) == (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_white_noise_entropy_near_flat_limit(self):
        # для экспоненциально распределённых бинов энтропия ниже ln(N) примерно на 1 - γ
        limit = math.log(48)
        medians = np.median([
            spectral_features(np.random.default_rng(seed).normal(size=96))[2] for seed in range(100)
        ])
        assert abs(medians - limit) / limit < 0.15
        assert medians <= limit

    def test_entropy_bounded_by_bin_count(self, rng):
        for _ in range(20):
            assert spectral_features(rng.normal(size=64))[2] <= math.log(33)


class TestMultivariateFeatures:
    def test_perfect_correlation(self, rng):
        x = rng.normal(size=50)
        _, _, _, _, corr_mean, corr_std = multivariate_features(np.column_stack([x, x]))
        assert corr_mean == pytest.approx(1.0)
        assert corr_std == pytest.approx(0.0, abs=1e-12)

    def test_anticorrelation(self, rng):
        x = rng.normal(size=50)
        assert multivariate_features(np.column_stack([x, -x]))[4] == pytest.approx(-1.0)

    def test_zero_variance_pair(self, rng):
        values = np.column_stack([rng.normal(size=30), np.ones(30)])
        assert multivariate_features(values)[4] == 0.0

    def test_univariate_convention(self, rng):
        x = rng.normal(size=40)
        cov_mean, cov_max, cov_min, cov_std, corr_mean, corr_std = multivariate_features(x)
        assert cov_mean == cov_max == cov_min == pytest.approx(np.var(x))
        assert (cov_std, corr_mean, corr_std) == (0.0, 1.0, 0.0)

    def test_three_variables_match_pair_loop(self, rng):
        values = rng.normal(size=(40, 3))
        np.testing.assert_allclose(multivariate_features(values), _oracle_pairs(values), rtol=1e-10, atol=1e-12)


class TestExtraction:
    def test_errors(self):
        with pytest.raises(WindowTooShort):
            extract_meta_features(np.ones(7))
        with pytest.raises(NonFiniteInput):
            extract_meta_features(np.array([1.0] * 9 + [np.inf]))

    def test_deterministic(self, rng):
        values = random_window(rng, 48, 2)
        first = extract_meta_features(TimeSeriesWindow.from_values(values)).values
        second = extract_meta_features(values.copy()).values
        assert first.tobytes() == second.tobytes()

    def test_batch_with_threads_keeps_order(self, rng):
        windows = [random_window(rng, 32, 2) for _ in range(6)]
        serial = extract_batch(windows)
        parallel = extract_batch(windows, threads=3)
        np.testing.assert_array_equal(serial, parallel)
        assert serial.shape == (6, 24)

    def test_feature_frame_columns(self, rng):
        frame = feature_frame(extract_batch([random_window(rng, 32, 1)]), ["w0"])
        assert list(frame.columns) == ["sample_id"] + list(META_FEATURE_NAMES)
