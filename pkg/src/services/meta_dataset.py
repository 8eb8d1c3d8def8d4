"""Сбор мета-обучающих триплетов и смешивание задач для обучения fusor'а."""
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import crc32c
import numpy as np

from ..data.models import (
    JointMetaDataset, MetaBatch, MetaSample, MetaShard, PredictionTensor, Split, TimeSeriesWindow,
)
from ..utils.errors import EmptyDataset, RosterMismatch, ShapeMismatch
from ..utils.logger import logger
from .meta_features import extract_meta_features


def collect_meta_sample(window, predictions: Union[PredictionTensor, np.ndarray], truth,
                        roster: Optional[List[str]] = None) -> MetaSample:
    if not isinstance(predictions, PredictionTensor):
        if roster is None:
            raise ShapeMismatch("A roster is required for raw prediction arrays")
        predictions = PredictionTensor.from_values(predictions, roster)

    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim == 1:
        truth = truth[:, None]
    if truth.shape != predictions.values.shape[1:]:
        raise ShapeMismatch(
            "Truth shape disagrees with predictions on T_out/d",
            truth_shape=truth.shape, predictions_shape=predictions.values.shape,
        )

    if not isinstance(window, TimeSeriesWindow):
        window = TimeSeriesWindow.from_values(window)
    if window.d != predictions.d:
        raise ShapeMismatch("Window and predictions disagree on d", window_d=window.d, d=predictions.d)

    return MetaSample(
        meta_features=extract_meta_features(window),
        predictions=predictions,
        truth=truth,
    )


def split_meta_val(shard: MetaShard, fraction: float, seed: int) -> Tuple[MetaShard, Optional[MetaShard]]:
    """Отщепляет сидированную долю задачи под meta_val; в обучении остаётся хотя бы один сэмпл."""
    n = shard.n_samples
    if fraction <= 0 or n < 2:
        return shard, None
    n_val = min(n - 1, max(1, int(math.floor(n * fraction))))
    order = np.random.default_rng([seed, _task_key(shard.task_id)]).permutation(n)
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    return shard.subset(train_idx), shard.subset(val_idx, split=Split.META_VAL)


def _task_key(task_id: str) -> int:
    # стабильный между запусками ключ (hash() для str рандомизирован)
    return crc32c.crc32c(task_id.encode("utf-8"))


def _check_roster(shards: Sequence[MetaShard]) -> None:
    roster = shards[0].roster
    for shard in shards[1:]:
        if shard.roster != roster:
            raise RosterMismatch(
                "Shards disagree on model roster",
                expected=list(roster), task_id=shard.task_id, roster=list(shard.roster),
            )


def _repeated_permutations(size: int, target: int, rng: np.random.Generator) -> np.ndarray:
    repeats = -(-target // size)
    return np.concatenate([rng.permutation(size) for _ in range(repeats)])[:target]


def _oversample(shards: Sequence[MetaShard], target: int, seed_sequence: np.random.SeedSequence) -> List[np.ndarray]:
    children = seed_sequence.spawn(len(shards))
    return [
        _repeated_permutations(shard.n_samples, target, np.random.default_rng(child))
        for shard, child in zip(shards, children)
    ]


def build_joint_dataset(shards: Sequence[MetaShard], seed: int = 0) -> JointMetaDataset:
    shards = list(shards)
    if not shards:
        raise EmptyDataset("At least one shard is required")
    empty = [shard.task_id for shard in shards if shard.n_samples == 0]
    if empty:
        raise EmptyDataset("Shards without samples cannot be mixed", tasks=empty)
    _check_roster(shards)

    target = max(shard.n_samples for shard in shards)
    indices = _oversample(shards, target, np.random.SeedSequence(seed))
    logger.debug(
        "Joint meta-dataset built",
        tasks=[shard.task_id for shard in shards],
        sizes=[shard.n_samples for shard in shards],
        target_size=target,
    )
    return JointMetaDataset(shards=shards, target_size=target, oversample_indices=indices, seed=seed)


def epoch_indices(joint: JointMetaDataset, epoch_seed: Optional[int]) -> List[np.ndarray]:
    if epoch_seed is None:
        return joint.oversample_indices
    return _oversample(joint.shards, joint.target_size, np.random.SeedSequence([joint.seed, epoch_seed]))


def batch_iterator(joint: JointMetaDataset, batch_size: int,
                   epoch_seed: Optional[int] = None) -> Iterator[Tuple[str, MetaBatch]]:
    """Батчи задач по кругу: задача 1, задача 2, …, задача m, снова задача 1."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    sequences = epoch_indices(joint, epoch_seed)
    n_batches = -(-joint.target_size // batch_size)
    for b in range(n_batches):
        for shard, sequence in zip(joint.shards, sequences):
            idx = sequence[b * batch_size:(b + 1) * batch_size]
            yield shard.task_id, MetaBatch(
                task_id=shard.task_id,
                indices=idx,
                features=shard.features[idx],
                predictions=shard.predictions[idx],
                truths=shard.truths[idx],
            )


def batch_samples(shard: MetaShard, batch: MetaBatch) -> List[MetaSample]:
    return [shard.sample(int(i)) for i in batch.indices]


def group_by_task(shards: Sequence[MetaShard]) -> Dict[str, List[MetaShard]]:
    grouped: Dict[str, List[MetaShard]] = {}
    for shard in shards:
        grouped.setdefault(shard.task_id, []).append(shard)
    return grouped


def merge_shards(shards: Sequence[MetaShard], split: Optional[Split] = None) -> MetaShard:
    """Склеивает шарды одной задачи с общей схемой."""
    shards = list(shards)
    if not shards:
        raise EmptyDataset("Nothing to merge")
    _check_roster(shards)
    if len(shards) == 1 and split in (None, shards[0].split):
        return shards[0]
    return MetaShard.from_arrays(
        shards[0].task_id,
        shards[0].roster,
        np.concatenate([s.features for s in shards]),
        np.concatenate([s.predictions for s in shards]),
        np.concatenate([s.truths for s in shards]),
        split=split or shards[0].split,
    )
