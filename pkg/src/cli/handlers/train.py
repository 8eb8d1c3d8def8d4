from ...data.models import RunConfig
from ...data.shard_storage import storage
from ...services.fusor import FusorTrainer, export_theta
from ...utils.errors import EXIT_OK


def _format_batches(batches_per_task) -> str:
    return ",".join(f"{task}:{count}" for task, count in batches_per_task.items())


def run(config: RunConfig) -> int:
    """train SHARD... --out MODEL: один fusor на все задачи."""
    shards = [storage.read_shard(path) for path in config.inputs]
    result = FusorTrainer(config.train).train(shards)

    model_path = config.outputs[0]
    storage.save_model(result.model, model_path)
    theta_path = config.option("export_theta")
    if theta_path:
        export_theta(result.model, theta_path, shards)

    if not config.quiet:
        for record in result.history:
            train_loss = "-" if record.train_loss is None else format(record.train_loss, ".6g")
            print(f"epoch {record.epoch} train_loss={train_loss} val_loss={record.val_loss:.6g} "
                  f"batches={_format_batches(record.batches_per_task)}")
        print(f"selected epoch {result.best_epoch} (val_loss={result.best_val_loss:.6g}) -> {model_path}")
    return EXIT_OK
