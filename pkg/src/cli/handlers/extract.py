import io

from ...data.models import RunConfig
from ...data.shard_storage import atomic_write
from ...services.meta_features import extract_batch, feature_frame
from ...services.parser_service import parser
from ...utils.errors import EXIT_OK
from ...utils.logger import logger


def format_features(sample_ids, features) -> str:
    buffer = io.StringIO()
    feature_frame(features, sample_ids).to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    return buffer.getvalue()


def run(config: RunConfig) -> int:
    """extract WINDOWS OUT: по строке из 24 мета-признаков на окно."""
    windows_path, = config.inputs
    out_path, = config.outputs

    table = parser.read_series_csv(windows_path)
    features = extract_batch(list(table.values), threads=config.threads)
    atomic_write(out_path, format_features(table.sample_ids, features).encode("utf-8"))

    logger.info("Meta-features written", path=str(out_path), n_samples=table.n_samples)
    if not config.quiet:
        print(f"extracted {table.n_samples} windows -> {out_path}")
    return EXIT_OK
