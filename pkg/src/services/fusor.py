"""Обучаемый fusor: линейное отображение мета-признаков в softmax-веса моделей зоопарка."""
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import huber, softmax

from ..data.models import (
    D_META, META_FEATURE_NAMES, EpochRecord, FeatureStats, FusionWeights, FusorModel,
    JointMetaDataset, MetaFeatureVector, MetaShard, PredictionTensor, Split, TrainConfig,
    TrainResult,
)
from ..utils.errors import EmptyDataset, NonFiniteLoss, RosterMismatch, ShapeMismatch
from ..utils.logger import logger
from .meta_dataset import batch_iterator, build_joint_dataset, group_by_task, merge_shards, split_meta_val

STD_EPSILON = 1e-8
Z_CLAMP = 10.0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


# --- стандартизация признаков ---

def compute_feature_stats(features: np.ndarray) -> FeatureStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != D_META or features.shape[0] == 0:
        raise EmptyDataset("Feature statistics need a non-empty n x 24 matrix")
    return FeatureStats(
        means=features.mean(axis=0),
        stds=np.maximum(features.std(axis=0), STD_EPSILON),
    )


def standardize_features(stats: FeatureStats, raw) -> np.ndarray:
    if isinstance(raw, MetaFeatureVector):
        raw = raw.values
    raw = np.asarray(raw, dtype=np.float64)
    z = (raw - stats.means) / np.maximum(stats.stds, STD_EPSILON)
    return np.clip(z, -Z_CLAMP, Z_CLAMP)


# --- инференс ---

def initial_model(roster: Sequence[str], stats: FeatureStats, huber_delta: float = 1.0) -> FusorModel:
    """Θ = 0, bias = 0: старт из равновзвешенного ансамбля."""
    k = len(roster)
    return FusorModel(
        theta=np.zeros((D_META, k)),
        bias=np.zeros(k),
        feature_stats=stats,
        roster=tuple(roster),
        huber_delta=huber_delta,
    )


def _weights_from_z(theta: np.ndarray, bias: np.ndarray, z: np.ndarray) -> np.ndarray:
    # scipy softmax вычитает максимум логита перед экспонентой
    return softmax(z @ theta + bias, axis=-1)


def predict_weights(model: FusorModel, features) -> FusionWeights:
    z = standardize_features(model.feature_stats, features)
    return FusionWeights.from_values(_weights_from_z(model.theta, model.bias, z))


def predict_weights_batch(model: FusorModel, features: np.ndarray) -> np.ndarray:
    z = standardize_features(model.feature_stats, np.atleast_2d(features))
    return _weights_from_z(model.theta, model.bias, z)


def fuse(weights: Union[FusionWeights, np.ndarray], predictions: Union[PredictionTensor, np.ndarray]) -> np.ndarray:
    w = weights.weights if isinstance(weights, FusionWeights) else np.asarray(weights, dtype=np.float64)
    values = predictions.values if isinstance(predictions, PredictionTensor) else np.asarray(predictions, dtype=np.float64)
    if w.ndim != 1 or values.ndim != 3 or w.shape[0] != values.shape[0]:
        raise ShapeMismatch("Weights length must equal the number of prediction slices",
                            weights=w.shape, predictions=values.shape)
    return np.tensordot(w, values, axes=(0, 0))


def fuse_batch(weights: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if weights.shape != predictions.shape[:2]:
        raise ShapeMismatch("Batch weights must be n x k", weights=weights.shape, predictions=predictions.shape)
    return np.einsum("nk,nktd->ntd", weights, predictions)


def fuse_shard(model: FusorModel, shard: MetaShard) -> Tuple[np.ndarray, np.ndarray]:
    """Возвращает (веса n × k, слитые прогнозы n × T_out × d)."""
    if tuple(shard.roster) != tuple(model.roster):
        raise RosterMismatch("Shard roster differs from the fusor roster",
                             model=list(model.roster), shard=list(shard.roster))
    weights = predict_weights_batch(model, shard.features)
    return weights, fuse_batch(weights, shard.predictions)


# --- функция потерь и градиенты ---

def huber_loss(prediction, truth, delta: float = 1.0) -> float:
    prediction = np.asarray(prediction, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if prediction.shape != truth.shape:
        raise ShapeMismatch("Prediction and truth shapes differ",
                            prediction=prediction.shape, truth=truth.shape)
    return float(np.mean(huber(delta, prediction - truth)))


def per_sample_huber(fused: np.ndarray, truths: np.ndarray, delta: float) -> np.ndarray:
    residual = fused - np.asarray(truths, dtype=np.float64)
    return huber(delta, residual).reshape(residual.shape[0], -1).mean(axis=1)


def loss_and_gradients(theta: np.ndarray, bias: np.ndarray, z: np.ndarray,
                       predictions: np.ndarray, truths: np.ndarray,
                       delta: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Средний по сэмплам Huber слитого прогноза и его аналитические градиенты по Θ и bias."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    n = predictions.shape[0]
    elements = int(np.prod(predictions.shape[2:]))

    weights = _weights_from_z(theta, bias, z)
    residual = np.einsum("nk,nktd->ntd", weights, predictions) - truths
    loss = float(np.mean(huber(delta, residual).reshape(n, -1).mean(axis=1)))

    grad_fused = np.clip(residual, -delta, delta) / (n * elements)
    grad_weights = np.einsum("ntd,nktd->nk", grad_fused, predictions)
    # якобиан softmax
    grad_logits = weights * (grad_weights - np.sum(weights * grad_weights, axis=1, keepdims=True))
    return loss, z.T @ grad_logits, grad_logits.sum(axis=0)


class AdamOptimizer:
    def __init__(self, shapes: Sequence[Tuple[int, ...]], learning_rate: float):
        self.learning_rate = learning_rate
        self.step_count = 0
        self._m = [np.zeros(shape) for shape in shapes]
        self._v = [np.zeros(shape) for shape in shapes]

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        self.step_count += 1
        correction1 = 1.0 - ADAM_BETA1 ** self.step_count
        correction2 = 1.0 - ADAM_BETA2 ** self.step_count
        for param, grad, m, v in zip(params, grads, self._m, self._v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPSILON)


# --- обучение ---

class FusorTrainer:
    def __init__(self, config: TrainConfig = None):
        self.config = config or TrainConfig()

    def _prepare(self, data) -> Tuple[List[MetaShard], List[MetaShard]]:
        shards = list(data.shards if isinstance(data, JointMetaDataset) else data)
        if not shards or all(shard.n_samples == 0 for shard in shards):
            raise EmptyDataset("No meta-training samples")
        shards = [shard for shard in shards if shard.n_samples > 0]

        train_parts, val_parts = [], []
        for task_id, task_shards in group_by_task(shards).items():
            merged = merge_shards(task_shards, split=Split.META_TRAIN)
            train, val = split_meta_val(merged, self.config.val_fraction, self.config.seed)
            train_parts.append(train)
            if val is not None:
                val_parts.append(val)
        return train_parts, val_parts

    def train(self, data: Union[JointMetaDataset, Sequence[MetaShard]]) -> TrainResult:
        config = self.config
        train_parts, val_parts = self._prepare(data)
        joint = build_joint_dataset(train_parts, seed=config.seed)

        stats = compute_feature_stats(np.concatenate([s.features for s in train_parts]).astype(np.float64))
        model = initial_model(joint.roster, stats, config.huber_delta)
        theta, bias = model.theta.copy(), model.bias.copy()

        if not val_parts:
            logger.warning("No meta_val samples, checkpointing on the training loss")
            val_parts = train_parts
        z_train = {s.task_id: standardize_features(stats, s.features) for s in train_parts}
        z_val = [standardize_features(stats, s.features) for s in val_parts]

        def evaluate(theta: np.ndarray, bias: np.ndarray) -> float:
            losses = [
                per_sample_huber(
                    fuse_batch(_weights_from_z(theta, bias, z), shard.predictions),
                    shard.truths, config.huber_delta,
                )
                for z, shard in zip(z_val, val_parts)
            ]
            return float(np.mean(np.concatenate(losses)))

        best_loss = evaluate(theta, bias)
        best_theta, best_bias, best_epoch = theta.copy(), bias.copy(), 0
        history = [EpochRecord(epoch=0, train_loss=None, val_loss=best_loss, best_val_loss=best_loss)]
        logger.info(
            "Fusor training started",
            tasks=joint.task_ids,
            train_sizes=[s.n_samples for s in train_parts],
            val_sizes=[s.n_samples for s in val_parts],
            target_size=joint.target_size,
            initial_val_loss=best_loss,
        )

        optimizer = AdamOptimizer([theta.shape, bias.shape], config.learning_rate)
        wait = 0
        for epoch in range(1, config.max_epochs + 1):
            batch_losses: List[float] = []
            batches_per_task: Dict[str, int] = {task_id: 0 for task_id in joint.task_ids}
            for task_id, batch in batch_iterator(joint, config.batch_size, epoch_seed=epoch):
                loss, grad_theta, grad_bias = loss_and_gradients(
                    theta, bias, z_train[task_id][batch.indices],
                    batch.predictions, batch.truths, config.huber_delta,
                )
                if not (math.isfinite(loss) and np.all(np.isfinite(grad_theta))):
                    raise NonFiniteLoss(
                        "Fusor loss became non-finite",
                        epoch=epoch, task_id=task_id, batch=batches_per_task[task_id],
                        max_abs_theta=float(np.max(np.abs(theta))),
                    )
                optimizer.step([theta, bias], [grad_theta, grad_bias])
                batch_losses.append(loss)
                batches_per_task[task_id] += 1

            val_loss = evaluate(theta, bias)
            if val_loss < best_loss:
                best_loss, best_theta, best_bias, best_epoch = val_loss, theta.copy(), bias.copy(), epoch
                wait = 0
            else:
                wait += 1

            record = EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(batch_losses)),
                val_loss=val_loss,
                best_val_loss=best_loss,
                batches_per_task=batches_per_task,
            )
            history.append(record)
            logger.info("Fusor epoch finished", **record.model_dump())

            if wait and wait >= config.patience:
                logger.info("Early stopping", epoch=epoch, patience=config.patience)
                break

        logger.info("Fusor training finished", best_epoch=best_epoch, best_val_loss=best_loss)
        trained = model.model_copy(update={"theta": best_theta, "bias": best_bias})
        return TrainResult(model=trained, history=history, best_epoch=best_epoch, best_val_loss=best_loss)


def train_fusor(joint: Union[JointMetaDataset, Sequence[MetaShard]], config: TrainConfig = None) -> FusorModel:
    return FusorTrainer(config).train(joint).model


# --- экспорт ---

def weight_summary(model: FusorModel, shards: Union[MetaShard, Sequence[MetaShard]]) -> pd.DataFrame:
    if isinstance(shards, MetaShard):
        shards = [shards]
    rows = []
    for shard in shards:
        weights, _ = fuse_shard(model, shard)
        for i, name in enumerate(model.roster):
            rows.append({
                "task_id": shard.task_id,
                "model": name,
                "mean_weight": float(weights[:, i].mean()),
                "std_weight": float(weights[:, i].std()),
            })
    return pd.DataFrame(rows, columns=["task_id", "model", "mean_weight", "std_weight"])


def theta_frame(model: FusorModel) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(model.theta), index=list(META_FEATURE_NAMES), columns=list(model.roster))
    frame.index.name = "feature"
    return frame


def export_theta(model: FusorModel, path: Union[str, Path],
                 shards: Optional[Union[MetaShard, Sequence[MetaShard]]] = None) -> List[Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    theta_frame(model).to_csv(path, float_format="%.17g")
    written = [path]
    if shards is not None:
        summary_path = path.with_name(f"{path.stem}_weights.csv")
        weight_summary(model, shards).to_csv(summary_path, index=False, float_format="%.17g")
        written.append(summary_path)
    logger.info("Fusor weights exported", paths=[str(p) for p in written])
    return written
