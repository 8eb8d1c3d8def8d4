import io
from typing import List, Tuple

import numpy as np
import pandas as pd

from ...data.models import FusorModel, RunConfig
from ...data.shard_storage import atomic_write, storage
from ...services.fusor import fuse_batch, fuse_shard, predict_weights_batch
from ...services.meta_features import extract_batch
from ...services.parser_service import parser
from ...utils.errors import EXIT_OK, RosterMismatch, ShapeMismatch
from ...utils.logger import logger


def _live_inputs(config: RunConfig, model: FusorModel) -> Tuple[List[str], np.ndarray, np.ndarray]:
    windows = parser.read_series_csv(config.option("windows"))
    roster, predictions = parser.read_prediction_stack(config.option("predictions"), config.option("models"))
    # переставленный ростер во входе считается ошибкой
    if tuple(roster) != tuple(model.roster):
        raise RosterMismatch("Input roster differs from the fusor roster",
                             model=list(model.roster), input=list(roster))
    if predictions.shape[0] != windows.n_samples:
        raise ShapeMismatch("Predictions and windows disagree on the number of samples",
                            predictions=predictions.shape[0], windows=windows.n_samples)
    weights = predict_weights_batch(model, extract_batch(list(windows.values), threads=config.threads))
    return windows.sample_ids, weights, fuse_batch(weights, predictions)


def format_weights(sample_ids: List[str], roster, weights: np.ndarray) -> str:
    frame = pd.DataFrame(weights, columns=list(roster))
    frame.insert(0, "sample_id", list(sample_ids))
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    return buffer.getvalue()


def run(config: RunConfig) -> int:
    """fuse MODEL (--shard S | --windows W --predictions DIR) --out CSV [--emit-weights CSV]."""
    model = storage.load_model(config.inputs[0])
    if config.option("shard"):
        shard = storage.read_shard(config.option("shard"))
        weights, fused = fuse_shard(model, shard)
        sample_ids = [str(i) for i in range(shard.n_samples)]
    else:
        sample_ids, weights, fused = _live_inputs(config, model)

    # всё посчитано до первой записи: при ошибке выходных файлов не остаётся
    forecasts = parser.format_series_csv(sample_ids, fused)
    weights_text = format_weights(sample_ids, model.roster, weights) if config.option("emit_weights") else None
    atomic_write(config.outputs[0], forecasts.encode("utf-8"))
    if weights_text is not None:
        atomic_write(config.option("emit_weights"), weights_text.encode("utf-8"))

    logger.info("Fused forecasts written", path=str(config.outputs[0]), n_samples=len(sample_ids))
    if not config.quiet:
        print(f"fused {len(sample_ids)} samples -> {config.outputs[0]}")
    return EXIT_OK
