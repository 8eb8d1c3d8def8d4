import math

import numpy as np
import pytest

from src.data.models import D_META, FeatureStats, MetricsReport, MetricValues, Split, TrainConfig
from src.services.baselines import per_sample_errors
from src.services.evaluation import (
    MethodRunner, compute_metrics, evaluate_methods, leaderboard, leaderboard_csv, parse_methods,
    split_by_role, time_inference, zero_shot_protocol,
)
from src.services.fusor import initial_model
from src.utils.errors import InsufficientTasks, ShapeMismatch, UnknownMethod, UnknownTask


class TestMetrics:
    def test_unit_residuals(self):
        values = compute_metrics([np.array([[0.0, 0.0]])], [np.array([[1.0, 1.0]])])
        assert (values.mse, values.mae, values.rmse, values.mape) == (1.0, 1.0, 1.0, 100.0)

    def test_identity(self, rng):
        truth = rng.normal(size=(4, 2))
        values = compute_metrics([truth], [truth])
        assert (values.mse, values.mae, values.rmse, values.mape) == (0.0, 0.0, 0.0, 0.0)

    def test_percentage_error(self):
        assert compute_metrics([np.array([[90.0]])], [np.array([[100.0]])]).mape == pytest.approx(10.0)

    def test_global_element_mean(self):
        # два сэмпла разной длины: среднее по элементам, а не по сэмплам
        values = compute_metrics([np.zeros((1, 1)), np.zeros((3, 1))], [np.full((1, 1), 4.0), np.ones((3, 1))])
        assert values.mae == pytest.approx(7.0 / 4.0)
        assert values.element_count == 4
        assert values.sample_count == 2

    def test_mae_never_exceeds_rmse(self, rng):
        for _ in range(50):
            values = compute_metrics(list(rng.normal(size=(5, 3, 2))), list(rng.normal(size=(5, 3, 2))))
            assert values.mae <= values.rmse + 1e-12
            assert abs(values.rmse - math.sqrt(values.mse)) <= 1e-12

    def test_all_zero_truth_leaves_mape_undefined(self):
        values = compute_metrics([np.ones((2, 1))], [np.zeros((2, 1))])
        assert values.mape is None
        assert values.mape_count == 0
        assert values.mse == 1.0

    def test_near_zero_truth_is_skipped(self):
        values = compute_metrics([np.array([[1.0, 90.0]])], [np.array([[1e-9, 100.0]])])
        assert values.mape == pytest.approx(10.0)
        assert values.mape_count == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            compute_metrics([np.zeros((2, 1))], [np.zeros((3, 1))])
        with pytest.raises(ShapeMismatch):
            compute_metrics([np.zeros((2, 1))], [])


class TestMethods:
    def test_parse_methods_with_sweep(self):
        methods = parse_methods("fused, mean,topk:2", topk_sweep=[1, 2])
        assert methods == ["fused", "mean", "topk:2", "topk:1", "topk-median:1", "topk-median:2"]

    @pytest.mark.parametrize("text", ["bogus", "topk", "topk:x", "mean:3", ""])
    def test_parse_methods_rejects(self, text):
        with pytest.raises(UnknownMethod):
            parse_methods(text)

    def test_uniform_mean_never_worse_than_worst_model(self, shard_factory):
        shard = shard_factory(n=30)
        report, _ = evaluate_methods([shard], ["mean"])
        worst = np.max(((shard.predictions - shard.truths[:, None]) ** 2).mean(axis=(0, 2, 3)))
        assert report.get(shard.task_id, "mean").mse <= worst

    def test_baselines_use_validation_shard(self, shard_factory):
        validation = shard_factory(task_id="a", n=200)
        test = shard_factory(task_id="a", n=10, split=Split.TEST)
        runner = MethodRunner({"a": validation})
        np.testing.assert_array_equal(runner.predict("best-individual", test), test.predictions[:, 0])
        assert runner.predict("topk:2", test).shape == (10, 4, 2)
        assert runner.predict("forward", test).shape == (10, 4, 2)

    def test_fused_requires_model(self, shard_factory):
        with pytest.raises(UnknownMethod):
            MethodRunner({}).predict("fused", shard_factory())

    def test_zeroshot_needs_other_tasks(self, shard_factory):
        with pytest.raises(InsufficientTasks):
            MethodRunner({"a": shard_factory(task_id="a")}).predict("zeroshot", shard_factory(task_id="a"))

    def test_oracle_beats_uniform_mean(self, shard_factory):
        shard = shard_factory(n=40)
        report, outputs = evaluate_methods([shard], ["oracle", "mean", "median"])
        assert report.get("task", "oracle").mse <= report.get("task", "mean").mse
        assert set(outputs["task"]) == {"oracle", "mean", "median"}

    def test_split_by_role_merges_tasks(self, shard_factory):
        shards = [
            shard_factory(task_id="a", n=5),
            shard_factory(task_id="a", n=3, split=Split.META_VAL),
            shard_factory(task_id="a", n=4, split=Split.TEST),
            shard_factory(task_id="b", n=6, split=Split.TEST),
        ]
        test, validation = split_by_role(shards)
        assert [s.task_id for s in test] == ["a", "b"]
        assert validation["a"].n_samples == 8


def _suite(shard_factory, tasks):
    shards = []
    for task_id in tasks:
        shards.append(shard_factory(task_id=task_id, n=30))
        shards.append(shard_factory(task_id=task_id, n=10, split=Split.TEST))
    return shards


class TestZeroShotProtocol:
    def test_single_task_is_rejected(self, shard_factory):
        with pytest.raises(InsufficientTasks):
            zero_shot_protocol(_suite(shard_factory, ["a"]), "a", TrainConfig(max_epochs=1))

    def test_unknown_task(self, shard_factory):
        with pytest.raises(UnknownTask):
            zero_shot_protocol(_suite(shard_factory, ["a", "b"]), "z", TrainConfig(max_epochs=1))

    def test_report_pairs_and_reproducibility(self, shard_factory):
        shards = _suite(shard_factory, ["a", "b", "c"])
        config = TrainConfig(max_epochs=2, seed=4)
        first = zero_shot_protocol(shards, "b", config)
        second = zero_shot_protocol(shards, "b", config)
        assert first.normal.methods == ["normal-fused", "mean", "best-individual"]
        assert first.zero_shot.methods == ["zeroshot-fused"]
        assert first.zero_shot.get("b", "zeroshot-fused").mse == second.zero_shot.get("b", "zeroshot-fused").mse
        assert first.normal.get("b", "normal-fused").mse == second.normal.get("b", "normal-fused").mse
        assert first.combined().methods == ["normal-fused", "mean", "best-individual", "zeroshot-fused"]


class TestLeaderboard:
    def _report(self, shard_factory):
        report, _ = evaluate_methods([shard_factory(task_id="a"), shard_factory(task_id="b")],
                                     ["mean", "median", "oracle"])
        return report

    def test_shape(self, shard_factory):
        report = self._report(shard_factory)
        table = leaderboard(report)
        assert len(table) == 2
        method_columns = [c for c in table.columns if c.split("_")[0] in ("mean", "median", "oracle")]
        assert len(method_columns) == 3 * 4
        for _, row in table.iterrows():
            mses = {method: report.get(row["task"], method).mse for method in ("mean", "median", "oracle")}
            assert row["best_mse"] == min(mses, key=mses.get)

    def test_oracle_not_worse_than_any_model(self, shard_factory):
        shards = [shard_factory(task_id="a"), shard_factory(task_id="b")]
        report, _ = evaluate_methods(shards, ["oracle"])
        for shard in shards:
            per_model = per_sample_errors(shard.predictions, shard.truths).mean(axis=0)
            assert report.get(shard.task_id, "oracle").mse <= per_model.min() + 1e-12

    def test_single_method_is_best(self, shard_factory):
        report, _ = evaluate_methods([shard_factory()], ["median"])
        table = leaderboard(report)
        assert table.loc[0, "best_mae"] == "median"
        assert table.loc[0, "second_mae"] == ""

    def test_csv_is_deterministic(self, shard_factory):
        report = self._report(shard_factory)
        assert leaderboard_csv(report) == leaderboard_csv(report)
        assert leaderboard_csv(report).splitlines()[0].startswith("task,mean_mse,mean_mae")

    def test_missing_mape_is_blank(self):
        report = MetricsReport()
        report.add("t", "mean", MetricValues(mse=1.0, mae=1.0, rmse=1.0, mape=None, sample_count=1,
                                             element_count=1, mape_count=0))
        assert leaderboard(report).loc[0, "mean_mape"] == ""


def test_inference_is_fast():
    rng = np.random.default_rng(0)
    model = initial_model([f"m{i}" for i in range(13)],
                          FeatureStats(means=np.zeros(D_META), stds=np.ones(D_META)))
    model = model.model_copy(update={"theta": rng.normal(size=(D_META, 13))})
    median_ms = time_inference(model, rng.normal(size=(32, D_META)), rng.normal(size=(32, 13, 96, 7)))
    assert median_ms < 5.0
