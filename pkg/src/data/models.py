from pydantic import BaseModel, ConfigDict, Field
from typing import Any, List, Optional, Dict, Tuple
from pathlib import Path
from enum import Enum
import numpy as np

from ..utils.config import settings
from ..utils.errors import (
    WindowTooShort, NonFiniteInput, ShapeMismatch, DuplicateModelName, RosterMismatch, InvalidWeights
)

# Канонический порядок мета-признаков (сверху вниз по таблице признаков)
META_FEATURE_NAMES: Tuple[str, ...] = (
    "mean", "std", "min", "max", "skewness", "kurtosis",
    "autocorr_mean", "stationarity", "roc_mean", "roc_std", "autoreg_coef", "residual_std",
    "freq_mean", "freq_peak", "spectral_entropy", "spectral_skewness", "spectral_kurtosis",
    "spectral_variation",
    "cov_mean", "cov_max", "cov_min", "cov_std", "crosscorr_mean", "crosscorr_std",
)
D_META = len(META_FEATURE_NAMES)
MIN_WINDOW_LENGTH = 8
SIMPLEX_TOLERANCE = 1e-9


class Split(str, Enum):
    META_TRAIN = "meta_train"
    META_VAL = "meta_val"
    TEST = "test"


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class TimeSeriesWindow(ArrayModel):
    """Входное окно X_in: T_in шагов × d переменных."""
    values: np.ndarray

    @classmethod
    def from_values(cls, values) -> "TimeSeriesWindow":
        array = np.asarray(values, dtype=np.float64)
        if array.ndim == 1:
            array = array[:, None]
        if array.ndim != 2 or array.shape[1] < 1:
            raise ShapeMismatch("Window must be a T_in x d matrix", shape=array.shape)
        if array.shape[0] < MIN_WINDOW_LENGTH:
            raise WindowTooShort(
                f"Window has {array.shape[0]} steps, at least {MIN_WINDOW_LENGTH} required",
                t_in=array.shape[0],
            )
        if not np.all(np.isfinite(array)):
            raise NonFiniteInput("Window contains NaN or Inf values")
        array.setflags(write=False)
        return cls(values=array)

    @property
    def t_in(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


class MetaFeatureVector(ArrayModel):
    values: np.ndarray

    @classmethod
    def from_values(cls, values) -> "MetaFeatureVector":
        array = np.asarray(values, dtype=np.float64).reshape(-1)
        if array.shape[0] != D_META:
            raise ShapeMismatch(f"Expected {D_META} meta-features", length=array.shape[0])
        return cls(values=array)

    def __getitem__(self, name: str) -> float:
        return float(self.values[META_FEATURE_NAMES.index(name)])

    def as_dict(self) -> Dict[str, float]:
        return {name: float(value) for name, value in zip(META_FEATURE_NAMES, self.values)}


class SpectralProfile(ArrayModel):
    psd: np.ndarray
    amplitudes: np.ndarray
    bin_frequencies: np.ndarray


def validate_roster(roster: List[str]) -> List[str]:
    roster = [str(name) for name in roster]
    duplicates = sorted({name for name in roster if roster.count(name) > 1})
    if duplicates:
        raise DuplicateModelName("Model roster contains duplicate names", duplicates=duplicates)
    if any(not name for name in roster):
        raise DuplicateModelName("Model roster contains an empty name")
    return roster


class PredictionTensor(ArrayModel):
    """Стек прогнозов зоопарка моделей: k × T_out × d."""
    values: np.ndarray
    roster: List[str]

    @classmethod
    def from_values(cls, values, roster: List[str]) -> "PredictionTensor":
        roster = validate_roster(roster)
        array = np.asarray(values, dtype=np.float64)
        if array.ndim == 2:
            array = array[:, :, None]
        if array.ndim != 3:
            raise ShapeMismatch("Predictions must be a k x T_out x d tensor", shape=array.shape)
        if array.shape[0] != len(roster):
            raise ShapeMismatch(
                "Prediction tensor and roster disagree on k",
                k=array.shape[0], roster_size=len(roster),
            )
        if len(roster) < 2:
            raise ShapeMismatch("A model zoo needs at least two models", k=len(roster))
        if not np.all(np.isfinite(array)):
            raise NonFiniteInput("Predictions contain NaN or Inf values")
        return cls(values=array, roster=roster)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def t_out(self) -> int:
        return self.values.shape[1]

    @property
    def d(self) -> int:
        return self.values.shape[2]


class MetaSample(ArrayModel):
    """Триплет (x*_in, прогнозы зоопарка, X_out)."""
    meta_features: MetaFeatureVector
    predictions: PredictionTensor
    truth: np.ndarray


class ShardSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int
    t_out: int
    d: int
    roster: Tuple[str, ...]


class MetaShard(ArrayModel):
    """Данные одной задачи для одного сплита. Хранится поколоночно во float32."""
    task_id: str = Field(min_length=1)
    split: Split = Split.META_TRAIN
    roster: Tuple[str, ...]
    features: np.ndarray      # n × 24
    predictions: np.ndarray   # n × k × T_out × d
    truths: np.ndarray        # n × T_out × d

    @classmethod
    def from_arrays(cls, task_id: str, roster, features, predictions, truths,
                    split: Split = Split.META_TRAIN) -> "MetaShard":
        roster = tuple(validate_roster(list(roster)))
        features = np.ascontiguousarray(features, dtype=np.float32)
        predictions = np.ascontiguousarray(predictions, dtype=np.float32)
        truths = np.ascontiguousarray(truths, dtype=np.float32)
        n = features.shape[0]
        if features.ndim != 2 or features.shape[1] != D_META:
            raise ShapeMismatch("Shard features must be n x 24", shape=features.shape)
        if predictions.ndim != 4 or predictions.shape[0] != n or predictions.shape[1] != len(roster):
            raise ShapeMismatch(
                "Shard predictions must be n x k x T_out x d",
                shape=predictions.shape, n=n, k=len(roster),
            )
        if truths.shape != (n,) + predictions.shape[2:]:
            raise ShapeMismatch(
                "Shard truths disagree with predictions on T_out/d",
                truths_shape=truths.shape, predictions_shape=predictions.shape,
            )
        return cls(task_id=task_id, split=Split(split), roster=roster,
                   features=features, predictions=predictions, truths=truths)

    @classmethod
    def from_samples(cls, task_id: str, samples: List[MetaSample],
                     split: Split = Split.META_TRAIN) -> "MetaShard":
        if not samples:
            raise ShapeMismatch("Cannot build a shard from zero samples", task_id=task_id)
        roster = samples[0].predictions.roster
        shape = samples[0].predictions.values.shape
        for index, sample in enumerate(samples):
            if sample.predictions.roster != roster:
                raise RosterMismatch("Samples disagree on model roster", sample=index)
            if sample.predictions.values.shape != shape:
                raise ShapeMismatch("Samples disagree on shard schema", sample=index)
        return cls.from_arrays(
            task_id,
            roster,
            np.stack([s.meta_features.values for s in samples]),
            np.stack([s.predictions.values for s in samples]),
            np.stack([s.truth for s in samples]),
            split=split,
        )

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def shard_schema(self) -> ShardSchema:
        _, k, t_out, d = self.predictions.shape
        return ShardSchema(k=k, t_out=t_out, d=d, roster=self.roster)

    def sample(self, index: int) -> MetaSample:
        return MetaSample(
            meta_features=MetaFeatureVector.from_values(self.features[index]),
            predictions=PredictionTensor.from_values(self.predictions[index], list(self.roster)),
            truth=np.asarray(self.truths[index], dtype=np.float64),
        )

    @property
    def samples(self) -> List[MetaSample]:
        return [self.sample(i) for i in range(self.n_samples)]

    def subset(self, indices, split: Optional[Split] = None) -> "MetaShard":
        indices = np.asarray(indices, dtype=np.int64)
        return MetaShard(
            task_id=self.task_id,
            split=split or self.split,
            roster=self.roster,
            features=self.features[indices],
            predictions=self.predictions[indices],
            truths=self.truths[indices],
        )


class MetaBatch(ArrayModel):
    """Батч одной задачи в поколоночном виде, с индексами исходных сэмплов."""
    task_id: str
    indices: np.ndarray
    features: np.ndarray
    predictions: np.ndarray
    truths: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.shape[0])


class JointMetaDataset(ArrayModel):
    shards: List[MetaShard]
    target_size: int = Field(gt=0)
    oversample_indices: List[np.ndarray]
    seed: int = 0

    @property
    def roster(self) -> Tuple[str, ...]:
        return self.shards[0].roster

    @property
    def task_ids(self) -> List[str]:
        return [shard.task_id for shard in self.shards]


class FeatureStats(ArrayModel):
    means: np.ndarray
    stds: np.ndarray


class FusorModel(ArrayModel):
    """Линейный fusor Ψ_Θ: стандартизованные мета-признаки → softmax-веса моделей."""
    theta: np.ndarray          # 24 × k
    bias: np.ndarray           # k
    feature_stats: FeatureStats
    roster: Tuple[str, ...]
    huber_delta: float = Field(default=1.0, gt=0)

    @property
    def k(self) -> int:
        return len(self.roster)


class FusionWeights(ArrayModel):
    """Точка симплекса: неотрицательные веса с суммой 1 (погрешность 1e-9).

    Softmax fusor'а даёт строго положительные веса; нули допустимы у one-hot и zero-shot ансамблей.
    """
    weights: np.ndarray

    @classmethod
    def from_values(cls, values) -> "FusionWeights":
        array = np.asarray(values, dtype=np.float64)
        if array.ndim != 1 or array.shape[0] < 1:
            raise ShapeMismatch("Fusion weights must be a non-empty vector", shape=array.shape)
        if not np.all(np.isfinite(array)) or np.any(array < 0.0):
            raise InvalidWeights("Fusion weights must be finite and non-negative")
        total = float(array.sum())
        if abs(total - 1.0) > SIMPLEX_TOLERANCE:
            raise InvalidWeights("Fusion weights must sum to 1", total=total)
        array.setflags(write=False)
        return cls(weights=array)

    @property
    def k(self) -> int:
        return int(self.weights.shape[0])


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=settings.FUSOR_LEARNING_RATE, gt=0)
    batch_size: int = Field(default=settings.FUSOR_BATCH_SIZE, gt=0)
    max_epochs: int = Field(default=settings.FUSOR_MAX_EPOCHS, ge=0)
    patience: int = Field(default=settings.FUSOR_PATIENCE, ge=0)
    seed: int = settings.SEED
    huber_delta: float = Field(default=settings.FUSOR_HUBER_DELTA, gt=0)
    val_fraction: float = Field(default=settings.FUSOR_VAL_FRACTION, ge=0, lt=1)


class EpochRecord(BaseModel):
    epoch: int
    train_loss: Optional[float]
    val_loss: float
    best_val_loss: float
    batches_per_task: Dict[str, int] = {}


class TrainResult(ArrayModel):
    model: FusorModel
    history: List[EpochRecord]
    best_epoch: int
    best_val_loss: float


class ValidationScoreTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    roster: Tuple[str, ...]
    scores: Tuple[float, ...]

    def score(self, name: str) -> float:
        return self.scores[self.roster.index(name)]


class MetricValues(BaseModel):
    mse: float
    mae: float
    rmse: float
    mape: Optional[float] = None
    sample_count: int
    element_count: int
    mape_count: int

    @property
    def mape_undefined(self) -> bool:
        return self.mape is None


class MetricsReport(BaseModel):
    """Метрики по парам (задача, метод)."""
    entries: Dict[str, Dict[str, MetricValues]] = {}

    def add(self, task_id: str, method: str, values: MetricValues) -> None:
        self.entries.setdefault(task_id, {})[method] = values

    def get(self, task_id: str, method: str) -> MetricValues:
        return self.entries[task_id][method]

    @property
    def tasks(self) -> List[str]:
        return list(self.entries)

    @property
    def methods(self) -> List[str]:
        seen: List[str] = []
        for row in self.entries.values():
            for method in row:
                if method not in seen:
                    seen.append(method)
        return seen

    @property
    def has_undefined_mape(self) -> bool:
        return any(v.mape_undefined for row in self.entries.values() for v in row.values())


# --- базовые модели и бейзлайны ---

ZOO_METHODS = ("naive_last", "seasonal_naive", "moving_average", "ar_p")


class ZooMethod(BaseModel):
    """Классическая модель синтетического зоопарка: имя и целый параметр (период, ширина, порядок)."""
    model_config = ConfigDict(frozen=True)

    name: str
    param: Optional[int] = None

    @property
    def label(self) -> str:
        return self.name if self.param is None else f"{self.name}:{self.param}"


class ForwardSelectionResult(ArrayModel):
    members: Tuple[str, ...]   # мультимножество в порядке добавления
    weights: np.ndarray        # k, доли вхождений по ростеру
    loss_path: List[float]


class TaskProfile(ArrayModel):
    """Сводка задачи для zero-shot ансамбля: центроид признаков и валидационные ошибки моделей."""
    task_id: str
    centroid: np.ndarray
    scores: ValidationScoreTable

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.scores.scores))


class RankFirstReport(BaseModel):
    task_ids: List[str]
    sample_count: int
    fractions: Dict[str, float]
    best_individual: Dict[str, str] = {}
    fused_beats_best: Optional[float] = None


class ZeroShotReport(BaseModel):
    """Пара отчётов на тестовом шарде отложенной задачи: fusor на всех задачах и без неё."""
    held_out_task: str
    normal: MetricsReport
    zero_shot: MetricsReport

    def combined(self) -> MetricsReport:
        report = MetricsReport()
        for source in (self.normal, self.zero_shot):
            for task_id, row in source.entries.items():
                for method, values in row.items():
                    report.add(task_id, method, values)
        return report


class SeriesTable(ArrayModel):
    """Набор окон (или горизонтов) из длинного CSV: n × T × d и идентификаторы сэмплов."""
    sample_ids: List[str]
    values: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]


# --- командная строка ---

COMMANDS = ("extract", "collect", "train", "fuse", "report")


class RunConfig(BaseModel):
    """Разобранная команда CLI: ровно одна подкоманда, пути и переопределения обучения."""
    model_config = ConfigDict(frozen=True)

    command: str
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    quiet: bool = False
    inputs: List[Path] = []
    outputs: List[Path] = []
    train: TrainConfig = TrainConfig()
    methods: List[str] = []
    options: Dict[str, Any] = {}

    def option(self, name: str, default: Any = None) -> Any:
        return self.options.get(name, default)
