"""Классический зоопарк моделей и генератор синтетических наборов задач.

Зоопарк из простых прогнозистов позволяет прогнать весь конвейер
(признаки → шарды → fusor → отчёты) на настольном масштабе без глубоких моделей.
"""
import warnings
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from statsmodels.tsa.ar_model import AutoReg

from ..data.models import ZOO_METHODS, MetaShard, Split, TimeSeriesWindow, ZooMethod
from ..utils.errors import InvalidOrder, InvalidPeriod, InvalidWidth, InvalidZooMethod
from ..utils.logger import logger
from .meta_dataset import collect_meta_sample

DEFAULT_ZOO = ("seasonal_naive:24", "ar_p:1", "naive_last")

REGIMES = ("seasonal", "random_walk", "mean_reverting")


def parse_zoo_method(text: Union[str, ZooMethod]) -> ZooMethod:
    if isinstance(text, ZooMethod):
        return text
    name, _, raw = str(text).strip().partition(":")
    if name not in ZOO_METHODS:
        raise InvalidZooMethod(f"Unknown zoo method '{text}'", known=list(ZOO_METHODS))
    if name == "naive_last":
        if raw:
            raise InvalidZooMethod("naive_last takes no parameter", method=text)
        return ZooMethod(name=name)
    error = {"seasonal_naive": InvalidPeriod, "moving_average": InvalidWidth, "ar_p": InvalidOrder}[name]
    try:
        param = int(raw)
    except ValueError:
        raise error(f"Zoo method '{text}' needs an integer parameter", method=text)
    if param < 1:
        raise error(f"Zoo method '{text}' needs a positive parameter", method=text)
    return ZooMethod(name=name, param=param)


def _ar_forecast(x: np.ndarray, order: int, t_out: int) -> np.ndarray:
    if np.ptp(x) == 0.0:
        return np.full(t_out, x[-1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = AutoReg(x, lags=order, trend="c").fit()
        return np.asarray(fit.forecast(steps=t_out), dtype=np.float64)


def synthetic_zoo_forecast(window, method: Union[str, ZooMethod], t_out: int) -> np.ndarray:
    """Прогноз T_out × d одной классической моделью по каждой переменной отдельно."""
    method = parse_zoo_method(method)
    if not isinstance(window, TimeSeriesWindow):
        array = np.asarray(window, dtype=np.float64)
        values = array[:, None] if array.ndim == 1 else array
    else:
        values = window.values
    if t_out < 1:
        raise InvalidZooMethod("Forecast horizon must be positive", t_out=t_out)
    t_in = values.shape[0]
    steps = np.arange(t_out)

    if method.name == "naive_last":
        return np.repeat(values[-1:], t_out, axis=0)

    if method.name == "seasonal_naive":
        period = method.param
        if period > t_in:
            raise InvalidPeriod(f"Period {period} exceeds window length {t_in}", period=period)
        return values[t_in - period + steps % period]

    if method.name == "moving_average":
        width = method.param
        if width > t_in:
            raise InvalidWidth(f"Width {width} exceeds window length {t_in}", width=width)
        return np.repeat(values[-width:].mean(axis=0, keepdims=True), t_out, axis=0)

    order = method.param
    # на каждый из order+1 коэффициентов нужно больше одного наблюдения
    if t_in < 2 * order + 2:
        raise InvalidOrder(f"AR order {order} is too large for window length {t_in}", order=order)
    return np.column_stack([_ar_forecast(values[:, i], order, t_out) for i in range(values.shape[1])])


def zoo_predictions(window, zoo: Sequence[Union[str, ZooMethod]], t_out: int) -> np.ndarray:
    return np.stack([synthetic_zoo_forecast(window, method, t_out) for method in zoo])


def zoo_roster(zoo: Sequence[Union[str, ZooMethod]]) -> List[str]:
    return [parse_zoo_method(method).label for method in zoo]


# --- синтетические задачи ---

class TaskFamily(BaseModel):
    """Семейство задач: смесь режимов и их масштабы."""
    model_config = ConfigDict(frozen=True)

    task_id: str = Field(min_length=1)
    regime_shares: Tuple[float, float, float] = (0.2, 0.4, 0.4)
    period: int = Field(default=24, gt=1)
    amplitude: float = 10.0
    seasonal_noise: float = 0.3
    step_noise: float = 1.0
    ar_coef: float = Field(default=0.3, gt=-1, lt=1)
    level: float = 0.0
    n_vars: int = Field(default=1, ge=1)


def simulate_regime(regime: str, length: int, family: TaskFamily, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(length)
    shape = (length, family.n_vars)
    if regime == "seasonal":
        phase = rng.uniform(0.0, 2.0 * np.pi, size=family.n_vars)
        wave = family.amplitude * np.sin(2.0 * np.pi * t[:, None] / family.period + phase)
        return family.level + wave + family.seasonal_noise * rng.standard_normal(shape)
    if regime == "random_walk":
        start = family.level + family.amplitude * rng.standard_normal(family.n_vars)
        return start + np.cumsum(family.step_noise * rng.standard_normal(shape), axis=0)
    if regime == "mean_reverting":
        noise = family.step_noise * rng.standard_normal(shape)
        x = np.empty(shape)
        x[0] = noise[0] / np.sqrt(1.0 - family.ar_coef ** 2)
        for i in range(1, length):
            x[i] = family.ar_coef * x[i - 1] + noise[i]
        return family.level + x
    raise ValueError(f"Unknown regime {regime}")


def simulate_windows(family: TaskFamily, n_samples: int, t_in: int, t_out: int,
                     seed: Union[int, np.random.SeedSequence] = 0
                     ) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Окна n × T_in × d, истинные горизонты n × T_out × d и режим каждого сэмпла."""
    rng = np.random.default_rng(seed)
    shares = np.asarray(family.regime_shares, dtype=np.float64)
    regimes = rng.choice(len(REGIMES), size=n_samples, p=shares / shares.sum())
    series = np.stack([simulate_regime(REGIMES[r], t_in + t_out, family, rng) for r in regimes])
    return series[:, :t_in], series[:, t_in:], [REGIMES[r] for r in regimes]


def make_task(family: TaskFamily, n_samples: int, t_in: int, t_out: int,
              zoo: Sequence[Union[str, ZooMethod]] = DEFAULT_ZOO,
              seed: Union[int, np.random.SeedSequence] = 0,
              split: Split = Split.META_TRAIN) -> MetaShard:
    roster = zoo_roster(zoo)
    windows, truths, _ = simulate_windows(family, n_samples, t_in, t_out, seed)
    samples = [
        collect_meta_sample(window, zoo_predictions(window, zoo, t_out), truth, roster)
        for window, truth in zip(windows, truths)
    ]
    return MetaShard.from_samples(family.task_id, samples, split=split)


def make_task_suite(families: Sequence[TaskFamily], n_train: int, n_test: int,
                    t_in: int = 96, t_out: int = 24,
                    zoo: Sequence[Union[str, ZooMethod]] = DEFAULT_ZOO,
                    seed: int = 0) -> Dict[str, Dict[Split, MetaShard]]:
    """Для каждого семейства строит шард meta_train и шард test с независимыми сидами."""
    suite: Dict[str, Dict[Split, MetaShard]] = {}
    for family, child in zip(families, np.random.SeedSequence(seed).spawn(len(families))):
        train_seed, test_seed = child.spawn(2)
        suite[family.task_id] = {
            Split.META_TRAIN: make_task(family, n_train, t_in, t_out, zoo, train_seed, Split.META_TRAIN),
            Split.TEST: make_task(family, n_test, t_in, t_out, zoo, test_seed, Split.TEST),
        }
        logger.debug("Synthetic task built", task_id=family.task_id, n_train=n_train, n_test=n_test)
    return suite
