"""Извлечение 24 мета-признаков окна временного ряда.

Статистические, временные и спектральные признаки считаются по каждой
переменной и усредняются по d переменным; многомерные признаки считаются
по всем неупорядоченным парам переменных (i < j).
"""
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft, stats
from statsmodels.tsa.adfvalues import mackinnonp
from statsmodels.tsa.stattools import acf
from statsmodels.tsa.tsatools import add_trend, lagmat

from ..data.models import (
    META_FEATURE_NAMES, MetaFeatureVector, SpectralProfile, TimeSeriesWindow,
)
from ..utils.errors import LagTooLarge, WindowTooShort
from ..utils.logger import logger

ROC_EPSILON = 1e-8
ADF_SIGNIFICANCE = 0.05

WindowLike = Union[TimeSeriesWindow, np.ndarray, Sequence]


def _as_series(series, min_length: int) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.shape[0] < min_length:
        raise WindowTooShort(f"Series has {x.shape[0]} steps, at least {min_length} required")
    return x


def _as_window(window: WindowLike) -> TimeSeriesWindow:
    if isinstance(window, TimeSeriesWindow):
        return window
    return TimeSeriesWindow.from_values(window)


# --- статистические признаки ---

def statistical_features(series) -> Tuple[float, float, float, float, float, float]:
    x = _as_series(series, 2)
    mean = float(np.mean(x))
    centered = x - mean
    m2 = float(np.mean(centered ** 2))
    std = math.sqrt(m2)
    if m2 ** 2 == 0.0:
        # включая дисперсию на грани исчезновения в float64
        skewness = kurtosis = 0.0
    else:
        # смещённые моменты, эксцесс за вычетом 3
        skewness = float(np.mean(centered ** 3)) / m2 ** 1.5
        kurtosis = float(np.mean(centered ** 4)) / m2 ** 2 - 3.0
    return mean, std, float(np.min(x)), float(np.max(x)), skewness, kurtosis


# --- временные признаки ---

def autocorrelation(series, lag: int = 1) -> float:
    x = _as_series(series, 1)
    if lag < 0 or lag >= x.shape[0]:
        raise LagTooLarge(f"Lag {lag} must be below series length {x.shape[0]}", lag=lag)
    centered = x - x.mean()
    if not np.any(centered):
        return 0.0
    value = acf(x, nlags=lag, adjusted=False, fft=False)[lag]
    return float(np.clip(value, -1.0, 1.0))


def adf_lag_order(n_obs: int) -> int:
    """Правило Шверта, ограниченное степенями свободы регрессии с константой."""
    schwert = int(math.floor(12.0 * (n_obs / 100.0) ** 0.25))
    return max(0, min(schwert, n_obs // 2 - 2))


def _lagged_design(x: np.ndarray, lags: int) -> Tuple[np.ndarray, np.ndarray]:
    """Регрессоры ADF: уровень x[t-1] и lags лагов разностей; отклик Δx[t]."""
    xdiff = np.diff(x)
    design = lagmat(xdiff[:, None], lags, trim="both", original="in")
    n_obs = design.shape[0]
    design[:, 0] = x[-n_obs - 1:-1]
    return design, xdiff[-n_obs:]


def _least_squares(design: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, float, int]:
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    residual = target - design @ coef
    return coef, float(residual @ residual), int(rank)


def _aic(design: np.ndarray, target: np.ndarray) -> float:
    # AIC гауссовой МНК-регрессии в той же нормировке, что у statsmodels OLS
    _, ssr, rank = _least_squares(design, target)
    n_obs = target.shape[0]
    with np.errstate(divide="ignore"):
        llf = -0.5 * n_obs * (math.log(2.0 * math.pi) + np.log(ssr / n_obs) + 1.0)
    return float(-2.0 * llf + 2.0 * rank)


def adf_statistic(series, max_lag: int) -> Tuple[float, int]:
    """t-статистика при уровне и выбранный по AIC лаг (0..max_lag, при равенстве меньший).

    Лаги сравниваются на общей выборке, затем выбранная регрессия пересчитывается на полной.
    """
    x = _as_series(series, 8)
    design, target = _lagged_design(x, max_lag)
    full = add_trend(design, "c", prepend=True)
    # add_trend пропускает константу, если в design уже есть постоянный столбец
    start = full.shape[1] - design.shape[1] + 1
    _, lag = min((_aic(full[:, :start + lag], target), lag) for lag in range(max_lag + 1))

    design, target = _lagged_design(x, lag)
    design = add_trend(design[:, :lag + 1], "c")
    coef, ssr, rank = _least_squares(design, target)
    pinv = np.linalg.pinv(design)
    variance = ssr / (target.shape[0] - rank) * float(pinv[0] @ pinv[0])
    return float(coef[0] / math.sqrt(variance)), lag


def adf_pvalue(series) -> float:
    """p-value теста Дики-Фуллера (константа, без тренда, лаг по AIC не выше правила Шверта).

    Постоянный ряд → 0; сбой регрессии → 1.
    """
    x = _as_series(series, 8)
    if np.ptp(x) == 0.0:
        return 0.0
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            statistic, _ = adf_statistic(x, adf_lag_order(x.shape[0]))
    except (ValueError, ZeroDivisionError, np.linalg.LinAlgError) as e:
        logger.debug("ADF regression failed", error=str(e), length=x.shape[0])
        return 1.0
    pvalue = float(mackinnonp(statistic, regression="c", N=1))
    return pvalue if math.isfinite(pvalue) else 1.0


def adf_stationarity_ratio(window: WindowLike) -> float:
    window = _as_window(window)
    stationary = sum(
        adf_pvalue(window.values[:, i]) < ADF_SIGNIFICANCE for i in range(window.d)
    )
    return stationary / window.d


def rate_of_change(series) -> Tuple[float, float]:
    x = _as_series(series, 2)
    previous = x[:-1]
    keep = np.abs(previous) > ROC_EPSILON
    if not np.any(keep):
        return 0.0, 0.0
    ratios = np.diff(x)[keep] / previous[keep]
    return float(np.mean(ratios)), float(np.std(ratios))


def ar1_fit(series) -> Tuple[float, float]:
    """МНК-подгонка x[t+1] = c + φ·x[t] + ε[t]; возвращает φ и std остатков."""
    x = _as_series(series, 3)
    if np.ptp(x[:-1]) == 0.0:
        # регрессор постоянен: φ не определён, остаются только отклонения от константы
        return 0.0, float(np.std(x[1:]))
    fit = stats.linregress(x[:-1], x[1:])
    residual = x[1:] - (fit.intercept + fit.slope * x[:-1])
    return float(fit.slope), float(np.std(residual))


# --- спектральные признаки ---

def spectral_profile(series) -> SpectralProfile:
    """Односторонняя периодограмма центрированного ряда, |DFT|²/T."""
    x = _as_series(series, 8)
    spectrum = fft.rfft(x - x.mean())
    amplitudes = np.abs(spectrum)
    return SpectralProfile(
        psd=amplitudes ** 2 / x.shape[0],
        amplitudes=amplitudes,
        bin_frequencies=fft.rfftfreq(x.shape[0]),
    )


def _spectral_shape(amplitudes: np.ndarray) -> Tuple[float, float]:
    centered = amplitudes - amplitudes.mean()
    spread = float(np.sum(centered ** 2))
    if spread == 0.0:
        return 0.0, 0.0
    skewness = float(np.sum(centered ** 3)) / spread ** 1.5
    kurtosis = float(np.sum(centered ** 4)) / spread ** 2
    return skewness, kurtosis


def spectral_variation(series) -> float:
    """Средний спектральный поток по прямоугольным кадрам длины max(8, T/4) с шагом в полкадра."""
    x = _as_series(series, 8)
    x = x - x.mean()
    frame = max(8, x.shape[0] // 4)
    hop = max(1, frame // 2)
    frames = sliding_window_view(x, frame)[::hop]
    if frames.shape[0] < 2:
        return 0.0
    spectrogram = np.abs(fft.rfft(frames, axis=1))
    flux = np.sqrt(np.sum(np.diff(spectrogram, axis=0) ** 2, axis=1))
    return float(np.mean(flux))


def spectral_features(series) -> Tuple[float, float, float, float, float, float]:
    profile = spectral_profile(series)
    psd = profile.psd
    freq_mean = float(np.mean(psd))
    energy = psd[1:]
    if not np.any(energy > 0.0):
        return freq_mean, 0.0, 0.0, 0.0, 0.0, 0.0

    # DC-бин исключён; при равенстве побеждает самая низкая частота
    freq_peak = float(profile.bin_frequencies[1 + int(np.argmax(energy))])
    entropy = float(stats.entropy(energy))
    skewness, kurtosis = _spectral_shape(profile.amplitudes)
    return freq_mean, freq_peak, entropy, skewness, kurtosis, spectral_variation(series)


# --- многомерные признаки ---

def multivariate_features(window: WindowLike) -> Tuple[float, float, float, float, float, float]:
    window = _as_window(window)
    values = window.values
    if window.d == 1:
        variance = float(np.var(values[:, 0]))
        return variance, variance, variance, 0.0, 1.0, 0.0

    covariance = np.cov(values, rowvar=False, bias=True)
    scale = np.sqrt(np.diag(covariance))
    denominator = np.outer(scale, scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        correlation = np.where(denominator > 0.0, covariance / denominator, 0.0)
    correlation = np.clip(correlation, -1.0, 1.0)

    upper = np.triu_indices(window.d, k=1)
    covs = covariance[upper]
    corrs = correlation[upper]
    return (
        float(np.mean(covs)), float(np.max(covs)), float(np.min(covs)), float(np.std(covs)),
        float(np.mean(corrs)), float(np.std(corrs)),
    )


# --- сборка вектора ---

def extract_meta_features(window: WindowLike) -> MetaFeatureVector:
    window = _as_window(window)
    per_variable = []
    for i in range(window.d):
        x = window.values[:, i]
        mean, std, lo, hi, skewness, kurtosis = statistical_features(x)
        roc_mean, roc_std = rate_of_change(x)
        phi, residual_std = ar1_fit(x)
        spectral = spectral_features(x)
        per_variable.append(
            (mean, std, lo, hi, skewness, kurtosis, autocorrelation(x, 1),
             roc_mean, roc_std, phi, residual_std) + spectral
        )
    averaged = np.mean(np.asarray(per_variable), axis=0)

    values = np.empty(len(META_FEATURE_NAMES))
    values[0:7] = averaged[0:7]
    values[7] = adf_stationarity_ratio(window)
    values[8:18] = averaged[7:17]
    values[18:24] = multivariate_features(window)
    return MetaFeatureVector.from_values(values)


def extract_batch(windows: Iterable[WindowLike], threads: int = 1) -> np.ndarray:
    """Матрица n × 24; порядок строк совпадает с порядком окон."""
    windows = list(windows)
    if threads > 1 and len(windows) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vectors = list(pool.map(extract_meta_features, windows))
    else:
        vectors = [extract_meta_features(w) for w in windows]
    logger.debug("Meta-features extracted", windows=len(vectors), threads=threads)
    if not vectors:
        return np.empty((0, len(META_FEATURE_NAMES)))
    return np.stack([v.values for v in vectors])


def feature_frame(features: np.ndarray, sample_ids: List[str] = None) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(features, dtype=np.float64), columns=list(META_FEATURE_NAMES))
    if sample_ids is not None:
        frame.insert(0, "sample_id", list(sample_ids))
    return frame
