"""Метрики, сравнение методов по задачам, zero-shot протокол и таблица лидеров."""
import io
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..data.models import (
    FusorModel, MetaShard, MetricsReport, MetricValues, Split, TrainConfig, ZeroShotReport,
)
from ..utils.errors import InsufficientTasks, ShapeMismatch, UnknownMethod, UnknownTask
from ..utils.logger import logger
from .baselines import (
    SimilarityEnsemble, best_individual, forward_selection_ensemble, mean_ensemble, median_ensemble,
    oracle_selection, topk_select, validation_scores,
)
from .fusor import fuse_batch, fuse_shard, predict_weights_batch, train_fusor
from .meta_dataset import group_by_task, merge_shards

MAPE_EPSILON = 1e-8
METRIC_NAMES = ("mse", "mae", "rmse", "mape")

SIMPLE_METHODS = ("fused", "mean", "median", "forward", "zeroshot", "best-individual", "oracle")
PARAMETRIC_METHODS = ("topk", "topk-median", "portfolio")


# --- метрики ---

def compute_metrics(predictions, truths, epsilon: float = MAPE_EPSILON) -> MetricValues:
    """MSE и MAE: средние по всем элементам всех сэмплов; MAPE только по элементам с |truth| > ε."""
    if len(predictions) != len(truths):
        raise ShapeMismatch("Predictions and truths lists differ in length",
                            predictions=len(predictions), truths=len(truths))
    residuals, kept_truths = [], []
    for index, (prediction, truth) in enumerate(zip(predictions, truths)):
        prediction = np.asarray(prediction, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        if prediction.shape != truth.shape:
            raise ShapeMismatch("Prediction and truth shapes differ", sample=index,
                                prediction=prediction.shape, truth=truth.shape)
        residuals.append((truth - prediction).reshape(-1))
        kept_truths.append(truth.reshape(-1))
    if not residuals:
        raise ShapeMismatch("Metrics need at least one sample")

    residual = np.concatenate(residuals)
    truth = np.concatenate(kept_truths)
    mse = float(np.mean(residual ** 2))
    mask = np.abs(truth) > epsilon
    mape = float(100.0 * np.mean(np.abs(residual[mask]) / np.abs(truth[mask]))) if mask.any() else None
    if mape is None:
        logger.warning("MAPE undefined: all truth values are zero",
                       warning="AllTruthZero", elements=residual.shape[0])
    return MetricValues(
        mse=mse,
        mae=float(np.mean(np.abs(residual))),
        rmse=math.sqrt(mse),
        mape=mape,
        sample_count=len(residuals),
        element_count=int(residual.shape[0]),
        mape_count=int(mask.sum()),
    )


# --- методы сравнения ---

def parse_methods(text: Union[str, Sequence[str]], topk_sweep: Sequence[int] = ()) -> List[str]:
    """Разбирает список методов; K у topk-методов проверяется позже, на ростере."""
    items = [m.strip() for m in text.split(",")] if isinstance(text, str) else [m.strip() for m in text]
    methods: List[str] = []
    for method in [m for m in items if m]:
        name, _, raw = method.partition(":")
        if name in SIMPLE_METHODS and not raw:
            pass
        elif name in PARAMETRIC_METHODS:
            if not raw.isdigit():
                raise UnknownMethod(f"Method '{method}' needs an integer K, e.g. {name}:3")
        else:
            raise UnknownMethod(f"Unknown method '{method}'",
                                known=list(SIMPLE_METHODS) + [f"{p}:K" for p in PARAMETRIC_METHODS])
        if method not in methods:
            methods.append(method)
    for k in topk_sweep:
        for name in ("topk", "topk-median"):
            if f"{name}:{k}" not in methods:
                methods.append(f"{name}:{k}")
    if not methods:
        raise UnknownMethod("No methods selected")
    return methods


class MethodRunner:
    """Считает прогнозы методов на тестовых шардах.

    Валидационные шарды (meta_train/meta_val той же задачи) дают оценки моделей для
    top-k, best-individual и forward selection; шарды других задач питают zero-shot ансамбль.
    """

    def __init__(self, validation: Dict[str, MetaShard], model: Optional[FusorModel] = None):
        self.validation = validation
        self.model = model

    def _validation_shard(self, shard: MetaShard) -> MetaShard:
        if shard.task_id in self.validation:
            return self.validation[shard.task_id]
        logger.warning("No validation shard for task, scoring models on the test shard",
                       task_id=shard.task_id)
        return shard

    def predict(self, method: str, shard: MetaShard) -> np.ndarray:
        name, _, raw = method.partition(":")
        if name == "fused":
            if self.model is None:
                raise UnknownMethod("Method 'fused' requires a fusor model")
            return fuse_shard(self.model, shard)[1]
        if name == "mean":
            return mean_ensemble(shard, shard.roster)
        if name == "median":
            return median_ensemble(shard, shard.roster)
        if name == "oracle":
            return oracle_selection(shard)[1]

        scores = validation_scores(self._validation_shard(shard))
        if name in ("topk", "portfolio"):
            return mean_ensemble(shard, topk_select(scores, int(raw)))
        if name == "topk-median":
            return median_ensemble(shard, topk_select(scores, int(raw)))
        if name == "best-individual":
            return mean_ensemble(shard, [best_individual(scores)])
        if name == "forward":
            selection = forward_selection_ensemble(self._validation_shard(shard))
            weights = np.broadcast_to(selection.weights, (shard.n_samples, len(shard.roster)))
            return fuse_batch(weights, shard.predictions)
        if name == "zeroshot":
            others = [s for task_id, s in self.validation.items() if task_id != shard.task_id]
            if not others:
                raise InsufficientTasks("Zero-shot ensemble needs at least one other task",
                                        task_id=shard.task_id)
            return SimilarityEnsemble(others).fuse_shard(shard)
        raise UnknownMethod(f"Unknown method '{method}'")


def evaluate_methods(test_shards: Sequence[MetaShard], methods: Sequence[str],
                     model: Optional[FusorModel] = None,
                     validation: Optional[Dict[str, MetaShard]] = None
                     ) -> Tuple[MetricsReport, Dict[str, Dict[str, np.ndarray]]]:
    """Отчёт метрик и прогнозы каждого метода по каждой задаче."""
    runner = MethodRunner(validation or {}, model)
    report = MetricsReport()
    outputs: Dict[str, Dict[str, np.ndarray]] = {}
    for shard in test_shards:
        for method in methods:
            predicted = runner.predict(method, shard)
            report.add(shard.task_id, method, compute_metrics(list(predicted), list(shard.truths)))
            outputs.setdefault(shard.task_id, {})[method] = predicted
        logger.info("Task evaluated", task_id=shard.task_id, methods=list(methods),
                    n_samples=shard.n_samples)
    return report, outputs


def split_by_role(shards: Sequence[MetaShard]) -> Tuple[List[MetaShard], Dict[str, MetaShard]]:
    """Делит шарды на тестовые (по одному на задачу) и обучающие/валидационные."""
    test, train = [], []
    for shard in shards:
        (test if shard.split == Split.TEST else train).append(shard)
    validation = {
        task_id: merge_shards(task_shards, split=Split.META_TRAIN)
        for task_id, task_shards in group_by_task(train).items()
    }
    test_by_task = [merge_shards(task_shards) for task_shards in group_by_task(test).values()]
    return test_by_task, validation


# --- zero-shot протокол ---

def zero_shot_protocol(shards: Sequence[MetaShard], held_out_task: str,
                       config: Optional[TrainConfig] = None) -> ZeroShotReport:
    """Fusor A учится на всех задачах, fusor B на всех, кроме отложенной; оба
    оцениваются на тестовом шарде отложенной задачи."""
    test_shards, validation = split_by_role(shards)
    tasks = sorted(set(validation) | {s.task_id for s in test_shards})
    if len(tasks) < 2:
        raise InsufficientTasks("Zero-shot protocol needs at least two tasks", tasks=tasks)
    if held_out_task not in tasks:
        raise UnknownTask(f"Unknown task '{held_out_task}'", tasks=tasks)
    test = next((s for s in test_shards if s.task_id == held_out_task), None)
    if test is None:
        raise UnknownTask(f"Task '{held_out_task}' has no test shard", task_id=held_out_task)
    others = [s for task_id, s in validation.items() if task_id != held_out_task]
    if not others:
        raise InsufficientTasks("No training shards outside the held-out task", task_id=held_out_task)

    normal_model = train_fusor(list(validation.values()), config)
    zero_shot_model = train_fusor(others, config)

    normal, _ = evaluate_methods([test], ["fused", "mean", "best-individual"], normal_model, validation)
    zero_shot = MetricsReport()
    zero_shot.add(held_out_task, "zeroshot-fused",
                  compute_metrics(list(fuse_shard(zero_shot_model, test)[1]), list(test.truths)))
    renamed = MetricsReport()
    for method, values in normal.entries[held_out_task].items():
        renamed.add(held_out_task, "normal-fused" if method == "fused" else method, values)

    logger.info(
        "Zero-shot protocol finished",
        held_out_task=held_out_task,
        normal_mse=renamed.get(held_out_task, "normal-fused").mse,
        zero_shot_mse=zero_shot.get(held_out_task, "zeroshot-fused").mse,
    )
    return ZeroShotReport(held_out_task=held_out_task, normal=renamed, zero_shot=zero_shot)


# --- таблица лидеров ---

def _format(value: Optional[float]) -> str:
    return "" if value is None else format(value, ".10g")


def leaderboard(report: MetricsReport, methods: Optional[Sequence[str]] = None,
                metrics: Sequence[str] = METRIC_NAMES) -> pd.DataFrame:
    """Строка на задачу, колонка на пару метод × метрика; best_/second_ колонки называют
    лучший и второй метод по каждой метрике (равенство решает порядок методов)."""
    methods = list(methods or report.methods)
    rows = []
    for task_id in report.tasks:
        row: Dict[str, str] = {"task": task_id}
        for metric in metrics:
            ranked = []
            for position, method in enumerate(methods):
                values = report.entries[task_id].get(method)
                value = getattr(values, metric) if values is not None else None
                row[f"{method}_{metric}"] = _format(value)
                if value is not None:
                    ranked.append((value, position, method))
            ranked.sort()
            row[f"best_{metric}"] = ranked[0][2] if ranked else ""
            row[f"second_{metric}"] = ranked[1][2] if len(ranked) > 1 else ""
        rows.append(row)

    columns = ["task"] + [f"{m}_{metric}" for m in methods for metric in metrics]
    columns += [f"{mark}_{metric}" for metric in metrics for mark in ("best", "second")]
    return pd.DataFrame(rows, columns=columns)


def leaderboard_csv(report: MetricsReport, methods: Optional[Sequence[str]] = None,
                    metrics: Sequence[str] = METRIC_NAMES) -> str:
    buffer = io.StringIO()
    leaderboard(report, methods, metrics).to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


# --- время инференса ---

def time_inference(model: FusorModel, features: np.ndarray, predictions: np.ndarray,
                   repeats: int = 50) -> float:
    """Медиана (мс) предсказания весов и слияния для одного батча."""
    timings = []
    for _ in range(max(1, repeats)):
        started = time.perf_counter()
        fuse_batch(predict_weights_batch(model, features), predictions)
        timings.append((time.perf_counter() - started) * 1000.0)
    median = float(np.median(timings))
    logger.debug("Inference timed", batch=int(np.shape(features)[0]), median_ms=median)
    return median
