# This file is part of ts_triadlab.
#
# Developed for the Vera Rubin Observatory Telescope and Site Systems.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <https://www.gnu.org/licenses/>.

import json
import logging
import math
import pathlib
import tempfile
import typing
import unittest

import numpy as np
import pytest
from lsst.ts import triadlab


def make_metrics(
    run_id: str = "run",
    peaks: typing.Sequence[float] = (),
    interval_frames: int = 10,
    labels: dict | None = None,
    config_hash: str = "hash",
) -> triadlab.RunMetrics:
    """Metrics with one interval per peak |Q| value and a return of 1 per
    interval."""
    metrics = triadlab.RunMetrics(
        run_id, config_hash, interval_frames, gamma=0.99, labels=labels
    )
    for i, peak in enumerate(peaks):
        start = i * interval_frames
        metrics.record(start + 1, [[0.0, peak]], episode_returns=[1.0], loss=0.5)
        metrics.record(start + interval_frames)
    metrics.finish(len(peaks) * interval_frames)
    return metrics


class ThresholdTestCase(unittest.TestCase):
    def test_examples(self) -> None:
        assert triadlab.soft_divergence_threshold(0.99) == pytest.approx(100)
        assert triadlab.soft_divergence_threshold(0.9) == pytest.approx(10)
        assert triadlab.soft_divergence_threshold(0.0) == 1
        assert triadlab.soft_divergence_threshold(0.5, 2) == 4

    def test_invalid(self) -> None:
        with pytest.raises(ValueError):
            triadlab.soft_divergence_threshold(1.0)
        with pytest.raises(ValueError):
            triadlab.soft_divergence_threshold(0.9, 0)


class RecordTestCase(unittest.TestCase):
    def test_below_threshold(self) -> None:
        metrics = make_metrics(peaks=[99.0, -99.0])
        assert not metrics.soft_diverged
        np.testing.assert_array_equal(metrics.max_abs_q, [99, 99])

    def test_soft(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.99)
        with self.assertLogs(level=logging.WARNING):
            metrics.record(3, [150.0])
            # smaller values never clear the flag
            metrics.record(5, [1.0])
            metrics.record(10)
        assert metrics.intervals[0].soft_div
        assert not metrics.intervals[0].hard_div
        assert metrics.intervals[0].max_abs_q == 150

    def test_hard(self) -> None:
        for q_values, loss in (([np.nan], 0.1), ([1.0, np.inf], None), ([1.0], np.nan)):
            with self.subTest(q_values=q_values, loss=loss):
                metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.99)
                with self.assertLogs(level=logging.ERROR):
                    metrics.record(4, q_values, loss=loss)
                    metrics.finish(10)
                interval = metrics.intervals[0]
                assert interval.hard_div
                assert interval.soft_div
                if loss is None or math.isfinite(loss):
                    assert interval.max_abs_q == math.inf

    def test_interval_contents(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 5, gamma=0.9)
        metrics.record(1, [0.5], episode_returns=[2.0], loss=1.0)
        metrics.record(2, episode_returns=[4.0, 9.0], loss=3.0)
        stats = triadlab.ReplayStatistics(10, 0.1, 0.25, 1.0, (0,) * 10)
        metrics.record(5, replay=stats)
        metrics.record(7)
        intervals = metrics.finish(7)
        assert [(i.frame_start, i.frame_end) for i in intervals] == [(0, 5), (5, 7)]
        first = intervals[0]
        assert first.mean_return == pytest.approx(5)
        assert first.p50_return == 4
        assert first.loss_mean == 2
        assert first.replay_fill == 0.1
        assert first.priority_mean == 0.25
        assert math.isnan(intervals[1].mean_return)
        assert math.isnan(intervals[1].loss_mean)
        assert metrics.mean_return() == pytest.approx(5)

    def test_skipped_intervals(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.9)
        metrics.record(5, [1.0])
        metrics.record(35, [2.0])
        assert [i.frame_end for i in metrics.intervals] == [10, 20, 30]
        assert metrics.intervals[0].max_abs_q == 1
        assert metrics.intervals[1].max_abs_q == 0

    def test_order(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.9)
        metrics.record(5)
        with pytest.raises(ValueError):
            metrics.record(4)
        metrics.finish(5)
        with pytest.raises(RuntimeError):
            metrics.record(6)
        with pytest.raises(ValueError):
            triadlab.RunMetrics("run", "hash", 0, gamma=0.9)


class TerminateTestCase(unittest.TestCase):
    def test_mid_interval(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.99)
        for frame in range(1, 13):
            metrics.record(frame, [1.0])
        with self.assertLogs(level=logging.ERROR):
            metrics.record(13, [np.nan])
            intervals = metrics.terminate(13, 50)
        assert [i.frame_end for i in intervals] == [10, 20, 30, 40, 50]
        assert not intervals[0].soft_div
        for interval in intervals[1:]:
            assert interval.hard_div
            assert interval.soft_div
            assert interval.max_abs_q == math.inf
        assert metrics.terminated
        assert metrics.hard_diverged

    def test_interval_end(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.99)
        for frame in range(1, 20):
            metrics.record(frame, [1.0])
        with self.assertLogs(level=logging.ERROR):
            metrics.record(20, [1.0], loss=np.inf)
            intervals = metrics.terminate(20, 40)
        assert [i.frame_end for i in intervals] == [10, 20, 30, 40]
        assert [i.hard_div for i in intervals] == [False, True, True, True]

    def test_partial_last_interval(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.99)
        metrics.record(3, [1.0])
        intervals = metrics.terminate(3, 25)
        assert [i.frame_end for i in intervals] == [10, 20, 25]
        assert all(i.hard_div for i in intervals)


class CsvTestCase(unittest.TestCase):
    def test_round_trip(self) -> None:
        metrics = triadlab.RunMetrics("abc-s1", "0123", 10, gamma=0.9)
        metrics.record(4, [3.0], episode_returns=[0.5], loss=0.25)
        metrics.record(10)
        metrics.record(12, [np.inf])
        metrics.terminate(12, 30)
        with tempfile.TemporaryDirectory() as tempdir:
            path = pathlib.Path(tempdir) / "metrics.csv"
            metrics.to_csv(path)
            lines = path.read_text().splitlines()
            assert lines[0] == ",".join(triadlab.CSV_COLUMNS)
            assert len(lines) == 4
            assert lines[1].startswith("abc-s1,0123,0,10,")
            read = triadlab.RunMetrics.from_csv(path, gamma=0.9, labels={"a": 1})
        assert read.run_id == "abc-s1"
        assert read.config_hash == "0123"
        assert read.interval_frames == 10
        assert read.labels == {"a": 1}
        assert read.terminated
        np.testing.assert_equal(
            [tuple(i) for i in read.intervals], [tuple(i) for i in metrics.intervals]
        )

    def test_bad_columns(self) -> None:
        with tempfile.TemporaryDirectory() as tempdir:
            path = pathlib.Path(tempdir) / "metrics.csv"
            path.write_text("run_id,frame_end\nabc,10\n")
            with pytest.raises(ValueError):
                triadlab.RunMetrics.from_csv(path, gamma=0.9)
            path.write_text(",".join(triadlab.CSV_COLUMNS) + "\n")
            with pytest.raises(ValueError):
                triadlab.RunMetrics.from_csv(path, gamma=0.9)


class WilsonTestCase(unittest.TestCase):
    def test_interval(self) -> None:
        low, high = triadlab.wilson_interval(0, 10)
        assert low == pytest.approx(0, abs=1e-12)
        assert 0.2 < high < 0.35
        low, high = triadlab.wilson_interval(5, 10)
        assert low == pytest.approx(1 - high)
        assert low < 0.5 < high
        low, high = triadlab.wilson_interval(10, 10)
        assert high == pytest.approx(1)
        with pytest.raises(ValueError):
            triadlab.wilson_interval(0, 0)
        with pytest.raises(ValueError):
            triadlab.wilson_interval(3, 2)


class SummarizeTestCase(unittest.TestCase):
    def test_fraction(self) -> None:
        runs = [
            make_metrics("a", [1.0, 150.0]),
            make_metrics("b", [1.0, 2.0]),
            make_metrics("c", [3.0, 4.0]),
        ]
        summary = triadlab.summarize(runs)
        assert summary["n_runs"] == 3
        (config,) = summary["configs"]
        assert config["soft_fraction"] == pytest.approx(1 / 3)
        assert config["hard_fraction"] == 0
        assert config["run_ids"] == ["a", "b", "c"]
        low, high = config["soft_ci"]
        assert low < 1 / 3 < high
        assert summary["bands"]["50"] == [1.0, 4.0]
        assert summary["bands"]["90"] == [3.0, 150.0]

    def test_identical_bands(self) -> None:
        runs = [make_metrics(f"r{i}", [5.0, 7.0, 200.0]) for i in range(4)]
        bands = triadlab.summarize(runs)["bands"]
        assert sorted(bands) == [str(p) for p in sorted(triadlab.PERCENTILES)]
        for p in triadlab.PERCENTILES:
            assert bands[str(p)] == [5.0, 7.0, 200.0]

    def test_infinite_bands(self) -> None:
        diverged = triadlab.RunMetrics("x", "hash", 10, gamma=0.99)
        diverged.record(2, [np.nan])
        diverged.terminate(2, 20)
        runs = [diverged, make_metrics("y", [1.0, 2.0])]
        bands = triadlab.summarize(runs)["bands"]
        for values in bands.values():
            assert not any(math.isnan(value) for value in values)
        assert bands["90"] == [math.inf, math.inf]

    def test_permutation_invariance(self) -> None:
        runs = [
            make_metrics("a", [1.0, 150.0], labels={"bootstrap.kind": "Q"}),
            make_metrics(
                "b", [1.0, 2.0], labels={"bootstrap.kind": "DoubleQ"}, config_hash="h2"
            ),
            make_metrics("c", [3.0, 4.0], labels={"bootstrap.kind": "Q"}),
        ]
        first = triadlab.summarize(runs)
        second = triadlab.summarize(runs[::-1])
        assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)
        marginal = first["marginals"]["bootstrap.kind"]
        assert marginal["Q"]["soft_fraction"] == 0.5
        assert marginal["DoubleQ"]["soft_fraction"] == 0
        assert [point["run_id"] for point in first["scatter"]] == ["a", "b", "c"]
        assert first["scatter"][0]["mean_return"] == 1

    def test_orderings(self) -> None:
        def labels(kind: str, n: int, alpha: float) -> dict:
            return {
                "bootstrap.kind": kind,
                "bootstrap.n": n,
                "replay.alpha": alpha,
                "replay.beta": 0.0,
            }

        runs = [
            make_metrics("q1", [150.0], labels=labels("Q", 1, 2.0), config_hash="1"),
            make_metrics("q10", [1.0], labels=labels("Q", 10, 2.0), config_hash="2"),
            make_metrics("d1", [1.0], labels=labels("DoubleQ", 1, 0.0), config_hash="3"),
        ]
        orderings = {
            ordering["name"]: ordering
            for ordering in triadlab.summarize(runs)["orderings"]
        }
        assert orderings["n10_le_n1"]["holds"] is True
        assert orderings["double_q_le_q"]["holds"] is True
        assert orderings["alpha0_le_alpha2"]["holds"] is True
        assert orderings["n10_le_n1"]["upper"]["soft_fraction"] == 1

    def test_ordering_deviation(self) -> None:
        runs = [
            make_metrics(
                "q1",
                [1.0],
                labels={"bootstrap.kind": "Q", "bootstrap.n": 1},
                config_hash="1",
            ),
            make_metrics(
                "q10",
                [500.0],
                labels={"bootstrap.kind": "Q", "bootstrap.n": 10},
                config_hash="2",
            ),
        ]
        log = logging.getLogger("test_ordering_deviation")
        with self.assertLogs(log, level=logging.WARNING) as logs:
            summary = triadlab.summarize(runs, log=log)
        orderings = {ordering["name"]: ordering for ordering in summary["orderings"]}
        assert orderings["n10_le_n1"]["holds"] is False
        assert "n10_le_n1" in "\n".join(logs.output)
        assert orderings["n10_le_n1"]["lower"]["soft_ci"][0] > 0
        assert orderings["double_q_le_q"]["holds"] is None

    def test_empty(self) -> None:
        with pytest.raises(ValueError):
            triadlab.summarize([])

    def test_crossed(self) -> None:
        peaks = {
            ("Q", 3, "small"): 150.0,
            ("Q", 10, "small"): 1.0,
            ("Q", 3, "large"): 200.0,
            ("Q", 10, "large"): 300.0,
            ("DoubleQ", 3, "small"): 1.0,
            ("DoubleQ", 10, "small"): 1.0,
            ("DoubleQ", 3, "large"): 150.0,
            ("DoubleQ", 10, "large"): 1.0,
        }
        runs = []
        for i, ((kind, n, capacity), peak) in enumerate(peaks.items()):
            labels = {
                "bootstrap.kind": kind,
                "bootstrap.n": n,
                "approximator.capacity": capacity,
                "replay.alpha": 0.0,
                "prioritization": "uniform",
            }
            runs.append(
                make_metrics(f"r{i}", [peak], labels=labels, config_hash=f"{i}")
            )
        summary = triadlab.summarize(runs)

        crossed = summary["crossed"]
        assert set(crossed) == {"bootstrap.n", "approximator.capacity"}
        assert set(summary["marginals"]) == {
            "bootstrap.kind",
            "bootstrap.n",
            "approximator.capacity",
        }

        def fractions(key: str, kind: str) -> list[tuple[str, float]]:
            return [
                (entry["value"], entry["soft_fraction"]) for entry in crossed[key][kind]
            ]

        # numeric and capacity order, not text order
        assert fractions("bootstrap.n", "Q") == [("3", 1.0), ("10", 0.5)]
        assert fractions("bootstrap.n", "DoubleQ") == [("3", 0.5), ("10", 0.0)]
        assert fractions("approximator.capacity", "Q") == [
            ("small", 0.5),
            ("large", 1.0),
        ]
        assert fractions("approximator.capacity", "DoubleQ") == [
            ("small", 0.0),
            ("large", 0.5),
        ]
        for by_kind in crossed.values():
            for entries in by_kind.values():
                for entry in entries:
                    assert entry["n_runs"] == 2
                    low, high = entry["soft_ci"]
                    assert low <= entry["soft_fraction"] <= high

        capacity_bands = summary["capacity_bands"]
        assert [entry["capacity"] for entry in capacity_bands] == ["small", "large"]
        assert capacity_bands[0]["bands"]["90"] == [150.0]
        assert capacity_bands[1]["bands"]["90"] == [300.0]
        assert summary["scatter"][0]["labels"] == runs[0].labels

    def test_crossed_needs_kind(self) -> None:
        runs = [
            make_metrics("a", [1.0], labels={"bootstrap.n": 1}, config_hash="1"),
            make_metrics("b", [1.0], labels={"bootstrap.n": 3}, config_hash="2"),
        ]
        summary = triadlab.summarize(runs)
        assert summary["crossed"] == {}
        assert summary["capacity_bands"] == []
        assert set(summary["marginals"]) == {"bootstrap.n"}


class LabelTestCase(unittest.TestCase):
    def test_prioritization(self) -> None:
        assert triadlab.prioritization_label(0.0, 0.4) == "uniform"
        assert triadlab.prioritization_label(0, 0) == "uniform"
        assert triadlab.prioritization_label(2.0, 0.0) == "alpha=2 uncorrected"
        assert triadlab.prioritization_label(0.5, 0.4) == "alpha=0.5 beta=0.4"

    def test_sort_key(self) -> None:
        assert sorted(["10", "3", "1.5"], key=triadlab.label_sort_key) == [
            "1.5",
            "3",
            "10",
        ]
        assert sorted(
            ["extra-large", "small", "large", "medium"], key=triadlab.label_sort_key
        ) == ["small", "medium", "large", "extra-large"]
        assert sorted(
            ["uniform", "alpha=2 uncorrected", "1"], key=triadlab.label_sort_key
        ) == ["1", "alpha=2 uncorrected", "uniform"]


class DivergenceFlagTestCase(unittest.TestCase):
    def test_threshold_monotone(self) -> None:
        rng = np.random.default_rng(7)
        log = logging.getLogger("test_threshold_monotone")
        log.setLevel(logging.CRITICAL)
        for _ in range(200):
            peaks = rng.lognormal(1.0, 1.5, size=5) * rng.choice([-1, 1], size=5)
            run_flags = []
            interval_flags = []
            for bound in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0):
                metrics = triadlab.RunMetrics(
                    "run", "hash", 1, gamma=0.5, reward_bound=bound, log=log
                )
                for frame, peak in enumerate(peaks, start=1):
                    metrics.record(frame, [[0.0, peak]])
                metrics.finish(len(peaks))
                run_flags.append(metrics.soft_diverged)
                interval_flags.append([i.soft_div for i in metrics.intervals])
            # a larger threshold never flags more
            assert run_flags == sorted(run_flags, reverse=True)
            for smaller, larger in zip(interval_flags, interval_flags[1:]):
                assert all(s or not g for s, g in zip(smaller, larger))

    def test_hard_implies_soft(self) -> None:
        rng = np.random.default_rng(11)
        log = logging.getLogger("test_hard_implies_soft")
        log.setLevel(logging.CRITICAL)
        n_hard = 0
        for trial in range(100):
            metrics = triadlab.RunMetrics(f"run{trial}", "hash", 5, gamma=0.9, log=log)
            for frame in range(1, 51):
                q = rng.normal(scale=5.0, size=(2, 3))
                if rng.random() < 0.05:
                    q[0, 0] = rng.choice([np.nan, np.inf, -np.inf])
                loss = math.inf if rng.random() < 0.03 else float(rng.random())
                metrics.record(frame, q, loss=loss)
            metrics.finish(50)
            for interval in metrics.intervals:
                if interval.hard_div:
                    n_hard += 1
                    assert interval.soft_div
            assert metrics.soft_diverged or not metrics.hard_diverged
        assert n_hard > 0
