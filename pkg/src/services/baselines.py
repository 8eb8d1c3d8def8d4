"""Статические ансамбли и селекторы, с которыми сравнивается fusor."""
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import huber, softmax
from scipy.spatial.distance import cdist, pdist

from ..data.models import (
    ForwardSelectionResult, FusionWeights, MetaFeatureVector, MetaShard, PredictionTensor,
    RankFirstReport, TaskProfile, ValidationScoreTable,
)
from ..utils.errors import EmptyDataset, EmptySubset, KOutOfRange, RosterMismatch, UnknownMethod
from ..utils.logger import logger
from .fusor import compute_feature_stats, standardize_features

Subset = Sequence[Union[str, int]]
SELECTION_CRITERIA = ("mse", "huber")


def per_sample_errors(predictions: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """MSE каждой модели на каждом сэмпле: n × k."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    residual = predictions - truths[:, None]
    return (residual ** 2).reshape(residual.shape[0], residual.shape[1], -1).mean(axis=2)


def validation_scores(shard: MetaShard) -> ValidationScoreTable:
    """Средний MSE каждой модели по всем элементам шарда."""
    if shard.n_samples == 0:
        raise EmptyDataset("Validation scores need a non-empty shard", task_id=shard.task_id)
    errors = per_sample_errors(shard.predictions, shard.truths).mean(axis=0)
    return ValidationScoreTable(roster=shard.roster, scores=tuple(float(e) for e in errors))


def topk_select(scores: ValidationScoreTable, k_sel: int) -> List[str]:
    k = len(scores.roster)
    if not 1 <= k_sel <= k:
        raise KOutOfRange(f"k_sel must lie in [1, {k}]", k_sel=k_sel, k=k)
    # стабильная сортировка сохраняет порядок ростера при равных ошибках
    order = np.argsort(np.asarray(scores.scores), kind="stable")
    return [scores.roster[i] for i in order[:k_sel]]


def best_individual(scores: ValidationScoreTable) -> str:
    return topk_select(scores, 1)[0]


def _subset_indices(roster: Sequence[str], subset: Subset) -> List[int]:
    if subset is None or len(subset) == 0:
        raise EmptySubset("Ensemble subset is empty")
    indices = []
    for member in subset:
        if isinstance(member, (int, np.integer)):
            if not 0 <= member < len(roster):
                raise RosterMismatch("Subset index is outside the roster", index=int(member))
            indices.append(int(member))
        else:
            if member not in roster:
                raise RosterMismatch(f"Model '{member}' is not in the roster", roster=list(roster))
            indices.append(list(roster).index(member))
    return indices


def _unpack(predictions, roster: Optional[Sequence[str]]) -> Tuple[np.ndarray, Sequence[str]]:
    if isinstance(predictions, PredictionTensor):
        return predictions.values, predictions.roster
    if isinstance(predictions, MetaShard):
        return predictions.predictions.astype(np.float64), predictions.roster
    values = np.asarray(predictions, dtype=np.float64)
    return values, roster if roster is not None else [str(i) for i in range(values.shape[-3])]


def mean_ensemble(predictions, subset: Subset, roster: Optional[Sequence[str]] = None) -> np.ndarray:
    """Поэлементное среднее по выбранным срезам; ось моделей третья с конца (k × T × d или n × k × T × d)."""
    values, roster = _unpack(predictions, roster)
    return values[..., _subset_indices(roster, subset), :, :].mean(axis=-3)


def median_ensemble(predictions, subset: Subset, roster: Optional[Sequence[str]] = None) -> np.ndarray:
    values, roster = _unpack(predictions, roster)
    return np.median(values[..., _subset_indices(roster, subset), :, :], axis=-3)


def portfolio_ensemble(shard: MetaShard, scores: ValidationScoreTable, k_sel: int) -> np.ndarray:
    return mean_ensemble(shard, topk_select(scores, k_sel))


def _selection_loss(blend: np.ndarray, truths: np.ndarray, criterion: str, delta: float) -> float:
    residual = blend - truths
    if criterion == "huber":
        return float(np.mean(huber(delta, residual)))
    return float(np.mean(residual ** 2))


def forward_selection_ensemble(shard: MetaShard, max_members: int = 16, criterion: str = "mse",
                               huber_delta: float = 1.0) -> ForwardSelectionResult:
    """Жадный отбор с возвращением: на каждом шаге добавляется модель, лучше всего
    снижающая ошибку равновзвешенного среднего отобранного мультимножества."""
    if shard.n_samples == 0:
        raise EmptyDataset("Forward selection needs a non-empty shard", task_id=shard.task_id)
    if criterion not in SELECTION_CRITERIA:
        raise UnknownMethod(f"Unknown selection criterion '{criterion}'", known=list(SELECTION_CRITERIA))
    if max_members < 1:
        raise KOutOfRange("max_members must be positive", max_members=max_members)

    predictions = shard.predictions.astype(np.float64)
    truths = shard.truths.astype(np.float64)
    k = len(shard.roster)
    running = np.zeros_like(truths)
    counts = np.zeros(k, dtype=np.int64)
    members: List[str] = []
    loss_path: List[float] = []
    best_loss = np.inf

    while len(members) < max_members:
        m = len(members)
        losses = [
            _selection_loss((running * m + predictions[:, i]) / (m + 1), truths, criterion, huber_delta)
            for i in range(k)
        ]
        candidate = int(np.argmin(losses))
        if not losses[candidate] < best_loss:
            break
        best_loss = losses[candidate]
        running = (running * m + predictions[:, candidate]) / (m + 1)
        counts[candidate] += 1
        members.append(shard.roster[candidate])
        loss_path.append(best_loss)

    logger.debug("Forward selection finished", task_id=shard.task_id, members=members, loss=best_loss)
    return ForwardSelectionResult(
        members=tuple(members),
        weights=counts / counts.sum(),
        loss_path=loss_path,
    )


# --- zero-shot ансамбль по сходству задач ---

def task_profiles(shards: Sequence[MetaShard]) -> List[TaskProfile]:
    return [
        TaskProfile(
            task_id=shard.task_id,
            centroid=shard.features.astype(np.float64).mean(axis=0),
            scores=validation_scores(shard),
        )
        for shard in shards
    ]


class SimilarityEnsemble:
    """Смешивает индикаторы лучших моделей обучающих задач с softmax-весами
    по отрицательному евклидову расстоянию до стандартизованных центроидов."""

    def __init__(self, shards: Sequence[MetaShard], temperature: Optional[float] = None):
        shards = [shard for shard in shards if shard.n_samples > 0]
        if not shards:
            raise EmptyDataset("Similarity ensemble needs at least one non-empty shard")
        self.roster = shards[0].roster
        for shard in shards[1:]:
            if shard.roster != self.roster:
                raise RosterMismatch("Shards disagree on model roster", task_id=shard.task_id)

        self.stats = compute_feature_stats(np.concatenate([s.features for s in shards]).astype(np.float64))
        self.profiles = task_profiles(shards)
        self.centroids = standardize_features(self.stats, np.stack([p.centroid for p in self.profiles]))
        indicators = np.zeros((len(self.profiles), len(self.roster)))
        indicators[np.arange(len(self.profiles)), [p.best_index for p in self.profiles]] = 1.0
        self.indicators = indicators
        self.temperature = temperature if temperature is not None else self._median_distance()

    def _median_distance(self) -> float:
        if len(self.profiles) < 2:
            return 1.0
        median = float(np.median(pdist(self.centroids)))
        return median if median > 0.0 else 1.0

    def task_weights(self, features) -> np.ndarray:
        if isinstance(features, MetaFeatureVector):
            features = features.values
        z = standardize_features(self.stats, np.atleast_2d(features))
        distances = cdist(z, self.centroids)
        return softmax(-distances / self.temperature, axis=1)

    def weights(self, features) -> np.ndarray:
        """n × k веса моделей для матрицы признаков."""
        return self.task_weights(features) @ self.indicators

    def fuse_shard(self, shard: MetaShard) -> np.ndarray:
        if shard.roster != self.roster:
            raise RosterMismatch("Shard roster differs from the ensemble roster", task_id=shard.task_id)
        weights = self.weights(shard.features)
        return np.einsum("nk,nktd->ntd", weights, shard.predictions.astype(np.float64))


def zeroshot_similarity_ensemble(train_shards: Sequence[MetaShard], query_features,
                                 temperature: Optional[float] = None) -> FusionWeights:
    ensemble = SimilarityEnsemble(train_shards, temperature)
    return FusionWeights.from_values(ensemble.weights(query_features)[0])


# --- селектор-оракул и анализ первых мест ---

def oracle_selection(shard: MetaShard) -> Tuple[np.ndarray, np.ndarray]:
    """Для каждого сэмпла берёт прогноз модели с наименьшим MSE к истине (равенство: по ростеру)."""
    chosen = np.argmin(per_sample_errors(shard.predictions, shard.truths), axis=1)
    predictions = shard.predictions.astype(np.float64)[np.arange(shard.n_samples), chosen]
    return chosen, predictions


def rank_first_analysis(shards: Union[MetaShard, Sequence[MetaShard]],
                        fused: Optional[Sequence[np.ndarray]] = None) -> RankFirstReport:
    """Доли сэмплов, на которых каждая модель заняла первое место; при равенстве очко делится.

    Если переданы слитые прогнозы (по одному массиву n × T_out × d на шард), дополнительно
    считается доля сэмплов, где fused точнее лучшей в целом модели своей задачи.
    """
    if isinstance(shards, MetaShard):
        shards = [shards]
    shards = list(shards)
    if not shards or all(shard.n_samples == 0 for shard in shards):
        raise EmptyDataset("Rank analysis needs at least one sample")
    roster = shards[0].roster
    for shard in shards[1:]:
        if shard.roster != roster:
            raise RosterMismatch("Shards disagree on model roster", task_id=shard.task_id)
    if fused is not None and len(fused) != len(shards):
        raise EmptyDataset("One fused prediction array is required per shard")

    credit = np.zeros(len(roster))
    total = 0
    beats = 0
    best_names: Dict[str, str] = {}
    for index, shard in enumerate(shards):
        if shard.n_samples == 0:
            continue
        errors = per_sample_errors(shard.predictions, shard.truths)
        winners = errors == errors.min(axis=1, keepdims=True)
        credit += (winners / winners.sum(axis=1, keepdims=True)).sum(axis=0)
        total += shard.n_samples

        if fused is not None:
            best = int(np.argmin(errors.mean(axis=0)))
            best_names[shard.task_id] = roster[best]
            residual = np.asarray(fused[index], dtype=np.float64) - shard.truths.astype(np.float64)
            fused_errors = (residual ** 2).reshape(shard.n_samples, -1).mean(axis=1)
            beats += int(np.sum(fused_errors < errors[:, best]))

    return RankFirstReport(
        task_ids=[shard.task_id for shard in shards],
        sample_count=total,
        fractions={name: float(c / total) for name, c in zip(roster, credit)},
        best_individual=best_names,
        fused_beats_best=beats / total if fused is not None else None,
    )
