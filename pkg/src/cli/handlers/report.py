import io
from pathlib import Path

import pandas as pd

from ...data.models import MetricsReport, RankFirstReport, RunConfig
from ...data.shard_storage import atomic_write, storage
from ...services.baselines import rank_first_analysis
from ...services.evaluation import evaluate_methods, leaderboard_csv, split_by_role, zero_shot_protocol
from ...utils.errors import EXIT_OK, EXIT_WARNINGS, EmptyDataset, UnknownMethod
from ...utils.logger import logger


def rank_first_path(out_path: Path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(f"{out_path.stem}_rank_first.csv")


def format_rank_first(rank: RankFirstReport) -> str:
    rows = [{"model": name, "fraction": value} for name, value in rank.fractions.items()]
    if rank.fused_beats_best is not None:
        rows.append({"model": "fused_beats_best", "fraction": rank.fused_beats_best})
    buffer = io.StringIO()
    pd.DataFrame(rows, columns=["model", "fraction"]).to_csv(
        buffer, index=False, float_format="%.10g", lineterminator="\n")
    return buffer.getvalue()


def run(config: RunConfig) -> int:
    """report SHARD... [--model M] --methods ... [--holdout TASK] --out CSV."""
    # inputs также содержит путь к модели, шарды берутся из options
    shards = [storage.read_shard(path) for path in config.option("shards", config.inputs)]
    test_shards, validation = split_by_role(shards)
    if not test_shards:
        raise EmptyDataset("Report needs at least one shard with split 'test'")

    model = storage.load_model(config.option("model")) if config.option("model") else None
    if "fused" in config.methods and model is None:
        raise UnknownMethod("Method 'fused' requires --model")

    report, outputs = evaluate_methods(test_shards, config.methods, model, validation)
    holdout = config.option("holdout")
    if holdout:
        zero_shot = zero_shot_protocol(shards, holdout, config.train).combined()
        merged = MetricsReport(entries={t: dict(row) for t, row in report.entries.items()})
        for task_id, row in zero_shot.entries.items():
            for method, values in row.items():
                if method not in merged.entries.get(task_id, {}):
                    merged.add(task_id, method, values)
        report = merged

    fused = [outputs[s.task_id]["fused"] for s in test_shards] if "fused" in config.methods else None
    rank = rank_first_analysis(test_shards, fused)

    out_path = config.outputs[0]
    table = leaderboard_csv(report)
    rank_table = format_rank_first(rank)
    atomic_write(out_path, table.encode("utf-8"))
    atomic_write(rank_first_path(out_path), rank_table.encode("utf-8"))

    logger.info("Report written", path=str(out_path), tasks=report.tasks, methods=report.methods,
                fused_beats_best=rank.fused_beats_best)
    if not config.quiet:
        print(table, end="")
    if report.has_undefined_mape:
        logger.warning("Some MAPE values are undefined")
        return EXIT_WARNINGS
    return EXIT_OK
