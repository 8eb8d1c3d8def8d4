import numpy as np
import pytest

from src.data.models import D_META, MetaShard, Split


def random_shard(rng, task_id="task", n=12, k=3, t_out=4, d=2, split=Split.META_TRAIN, roster=None):
    roster = roster or [f"m{i}" for i in range(k)]
    truths = rng.normal(size=(n, t_out, d))
    predictions = truths[:, None] + rng.normal(scale=np.arange(1, k + 1)[None, :, None, None],
                                               size=(n, k, t_out, d))
    return MetaShard.from_arrays(task_id, roster, rng.normal(size=(n, D_META)),
                                 predictions, truths, split=split)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def shard_factory(rng):
    def build(**kwargs):
        return random_shard(rng, **kwargs)
    return build
