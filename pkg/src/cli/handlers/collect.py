import numpy as np

from ...data.models import MetaShard, RunConfig, Split
from ...data.shard_storage import storage
from ...services.meta_features import extract_batch
from ...services.parser_service import parser
from ...utils.errors import EXIT_OK, ShapeMismatch
from ...utils.logger import logger


def build_shard(config: RunConfig) -> MetaShard:
    windows_path, predictions_dir, truths_path = config.inputs
    windows = parser.read_series_csv(windows_path)
    truths = parser.read_series_csv(truths_path)
    roster, predictions = parser.read_prediction_stack(predictions_dir, config.option("models"))

    if windows.sample_ids != truths.sample_ids:
        raise ShapeMismatch("Windows and truths list different samples",
                            windows=windows.n_samples, truths=truths.n_samples)
    for index, model in enumerate(roster):
        block = predictions[:, index]
        if block.shape[0] != windows.n_samples:
            raise ShapeMismatch(f"Model '{model}' has {block.shape[0]} samples, expected {windows.n_samples}",
                                model=model)
        if block.shape[1:] != truths.values.shape[1:]:
            raise ShapeMismatch(f"Model '{model}' forecasts disagree with truths on T_out/d",
                                model=model, shape=list(block.shape[1:]),
                                expected=list(truths.values.shape[1:]))
        if not np.all(np.isfinite(block)):
            raise ShapeMismatch(f"Model '{model}' has NaN or Inf forecasts", model=model)
    if windows.values.shape[2] != truths.values.shape[2]:
        raise ShapeMismatch("Windows and truths disagree on d",
                            windows_d=windows.values.shape[2], truths_d=truths.values.shape[2])

    features = extract_batch(list(windows.values), threads=config.threads)
    return MetaShard.from_arrays(
        config.option("task_id"), roster, features, predictions, truths.values,
        split=Split(config.option("split", Split.META_TRAIN.value)),
    )


def run(config: RunConfig) -> int:
    """collect WINDOWS PREDICTIONS_DIR TRUTHS --task-id T --out SHARD."""
    shard = build_shard(config)
    out_path, = config.outputs
    storage.write_shard(shard, out_path)

    schema = shard.shard_schema
    logger.info("Shard collected", task_id=shard.task_id, n_samples=shard.n_samples,
                k=schema.k, t_out=schema.t_out, d=schema.d)
    if not config.quiet:
        print(f"task={shard.task_id} split={shard.split.value} n_samples={shard.n_samples} "
              f"k={schema.k} t_out={schema.t_out} d={schema.d} roster={','.join(shard.roster)}")
    return EXIT_OK
