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
import pathlib
import re
import tempfile
import unittest

import numpy as np
import pytest
from lsst.ts import triadlab


def make_summary() -> dict:
    """Summary of eight one-run configurations, one of them hard diverged,
    read back from strict JSON."""
    log = logging.getLogger("test_svg")
    log.setLevel(logging.CRITICAL)
    runs = []
    peaks = iter([150.0, 1.0, 200.0, 300.0, 1.0, 1.0, 150.0, np.inf])
    for kind in ("Q", "DoubleQ"):
        for n in (1, 10):
            for capacity in ("small", "large"):
                run_id = f"{kind}-{n}-{capacity}"
                metrics = triadlab.RunMetrics(
                    run_id,
                    run_id,
                    10,
                    gamma=0.99,
                    labels={
                        "bootstrap.kind": kind,
                        "bootstrap.n": n,
                        "approximator.capacity": capacity,
                        "prioritization": "uniform",
                    },
                    log=log,
                )
                for interval in range(2):
                    metrics.record(
                        10 * interval + 1,
                        [[0.0, next(peaks) if interval else 1.0]],
                        episode_returns=[1.0],
                    )
                metrics.finish(20)
                runs.append(metrics)
    summary = triadlab.summarize(runs, log=log)
    return json.loads(triadlab.dumps_json(summary))


class PlotSummaryTestCase(unittest.TestCase):
    def test_charts(self) -> None:
        summary = make_summary()
        # the diverged run reads back as a string
        (diverged,) = [
            config
            for config in summary["configs"]
            if config["config_hash"] == "DoubleQ-10-large"
        ]
        assert diverged["bands"]["50"] == [1.0, "inf"]
        assert diverged["hard_fraction"] == 1.0
        with tempfile.TemporaryDirectory() as tmpdir:
            paths = triadlab.plot_summary(summary, tmpdir)
            assert sorted(path.name for path in paths) == [
                "fraction_bars.svg",
                "fraction_by_approximator_capacity.svg",
                "fraction_by_bootstrap_n.svg",
                "max_q_bands.svg",
                "max_q_by_capacity.svg",
                "return_vs_max_q.svg",
                "return_vs_max_q_by_approximator_capacity.svg",
                "return_vs_max_q_by_bootstrap_kind.svg",
                "return_vs_max_q_by_bootstrap_n.svg",
                "return_vs_max_q_by_prioritization.svg",
            ]
            texts = {path.name: path.read_text() for path in paths}
        for text in texts.values():
            assert text.startswith("<svg")
            assert text.rstrip().endswith("</svg>")
            assert "nan" not in text.split("\n", 1)[1]

        grouped = texts["fraction_by_bootstrap_n.svg"]
        # legend holds both kinds; two kinds by two values is four bars
        assert ">DoubleQ</text>" in grouped
        assert ">Q</text>" in grouped
        assert grouped.count("<rect x=") == 4
        # numeric label order
        assert grouped.index('font-size="9">1</text>') < grouped.index(
            'font-size="9">10</text>'
        )

        by_capacity = texts["max_q_by_capacity.svg"]
        assert by_capacity.index(">small p50</text>") < by_capacity.index(
            ">large p50</text>"
        )
        scatter = texts["return_vs_max_q_by_bootstrap_kind.svg"]
        colors = re.findall(r'<circle [^>]*fill="(#[0-9a-f]+)"', scatter)
        assert len(colors) >= 7
        assert len(set(colors)) == 2

    def test_without_labels(self) -> None:
        metrics = triadlab.RunMetrics("run", "hash", 10, gamma=0.9)
        metrics.record(1, [[1.0]], episode_returns=[0.5])
        metrics.finish(10)
        summary = triadlab.summarize([metrics])
        with tempfile.TemporaryDirectory() as tmpdir:
            paths = triadlab.plot_summary(summary, pathlib.Path(tmpdir) / "plots")
            assert sorted(path.name for path in paths) == [
                "fraction_bars.svg",
                "max_q_bands.svg",
                "return_vs_max_q.svg",
            ]

    def test_empty(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            with pytest.raises(ValueError):
                triadlab.plot_summary({"n_runs": 0}, tmpdir)


class GroupedBarChartTestCase(unittest.TestCase):
    def test_gaps(self) -> None:
        text = triadlab.grouped_bar_chart(
            ["1", "3", "10"],
            {"Q": [0.5, 0.2, np.nan], "DoubleQ": [0.1, np.nan, 0.0]},
            "title",
            "bootstrap.n",
            "fraction of runs",
            intervals={
                "Q": [(0.3, 0.7), (0.1, 0.4), (0.0, 0.0)],
                "DoubleQ": [(0.0, 0.3), (0.0, 0.0), (0.0, 0.1)],
            },
        )
        assert text.count("<rect x=") == 4
        assert text.count('stroke="black"/>') >= 4
        for name in ("Q", "DoubleQ", "1", "3", "10", "bootstrap.n"):
            assert f">{name}</text>" in text
