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

__all__ = [
    "CSV_COLUMNS",
    "PERCENTILES",
    "ORDERING_KEYS",
    "KIND_KEY",
    "CAPACITY_KEY",
    "IntervalStats",
    "RunMetrics",
    "label_sort_key",
    "prioritization_label",
    "soft_divergence_threshold",
    "wilson_interval",
    "summarize",
]

import csv
import logging
import math
import pathlib
import typing

import numpy as np
from numpy.typing import ArrayLike

from .enums import BootstrapKind, Capacity
from .mdp import REWARD_BOUND
from .replay import ReplayStatistics
from .utils import canonical_json

"""Columns of a run metrics CSV file, in order."""
CSV_COLUMNS = (
    "run_id",
    "config_hash",
    "frame_start",
    "frame_end",
    "max_abs_q",
    "mean_return",
    "p50_return",
    "loss_mean",
    "soft_div",
    "hard_div",
    "replay_fill",
    "priority_mean",
)

"""Percentiles of the max |Q| bands reported by `summarize`."""
PERCENTILES = (10, 25, 50, 75, 90)

"""Configuration keys every run is labelled with, for the ordering checks.
"""
ORDERING_KEYS = ("bootstrap.kind", "bootstrap.n", "replay.alpha", "replay.beta")

KIND_KEY = "bootstrap.kind"

CAPACITY_KEY = "approximator.capacity"


class IntervalStats(typing.NamedTuple):
    """Statistics of frames (frame_start, frame_end].

    mean_return and p50_return are NaN if no episode ended in the
    interval, loss_mean is NaN if no update was made.
    """

    frame_start: int
    frame_end: int
    max_abs_q: float
    mean_return: float
    p50_return: float
    loss_mean: float
    soft_div: bool
    hard_div: bool
    replay_fill: float = math.nan
    priority_mean: float = math.nan


def soft_divergence_threshold(gamma: float, reward_bound: float = REWARD_BOUND) -> float:
    """Largest action value magnitude attainable with bounded rewards.

    Parameters
    ----------
    gamma : `float`
        Discount factor, in [0, 1).
    reward_bound : `float`, optional
        Bound on the absolute (clipped) reward.

    Returns
    -------
    threshold : `float`
        reward_bound / (1 - gamma).

    Raises
    ------
    ValueError
        If gamma is outside [0, 1) or reward_bound is not positive.
    """
    if not 0 <= gamma < 1:
        raise ValueError(f"Discount must be in [0, 1), got {gamma}")
    if not reward_bound > 0:
        raise ValueError(f"Reward bound must be positive, got {reward_bound}")
    return reward_bound / (1 - gamma)


class RunMetrics:
    """Interval metrics of one training run.

    Frames are counted from 1; interval k covers frames
    (k interval_frames, (k + 1) interval_frames].

    Parameters
    ----------
    run_id : `str`
        Run identifier.
    config_hash : `str`
        Hash of the run configuration without its seed.
    interval_frames : `int`
        Interval length.
    gamma : `float`
        Discount factor, sets the soft divergence threshold.
    reward_bound : `float`, optional
        Reward clipping bound.
    labels : `dict`, optional
        Configuration values used to group runs in `summarize`.
    log : `logging.Logger`, optional
        Logger. If None a new one is created.
    """

    def __init__(
        self,
        run_id: str,
        config_hash: str,
        interval_frames: int,
        gamma: float,
        reward_bound: float = REWARD_BOUND,
        labels: dict[str, typing.Any] | None = None,
        log: logging.Logger | None = None,
    ) -> None:
        if interval_frames < 1:
            raise ValueError(f"Interval length must be positive, got {interval_frames}")
        self.run_id = run_id
        self.config_hash = config_hash
        self.interval_frames = interval_frames
        self.gamma = gamma
        self.threshold = soft_divergence_threshold(gamma, reward_bound)
        self.labels = dict(labels or {})
        if log is None:
            self.log = logging.getLogger(type(self).__name__)
        else:
            self.log = log.getChild(type(self).__name__)

        self.intervals: list[IntervalStats] = []
        self.last_frame = 0
        self.terminated = False
        self.finished = False
        self._reset_interval()

    def _reset_interval(self) -> None:
        self._max_abs_q = 0.0
        self._returns: list[float] = []
        self._losses: list[float] = []
        self._hard = False
        self._replay: ReplayStatistics | None = None

    @property
    def interval_start(self) -> int:
        return len(self.intervals) * self.interval_frames

    @property
    def soft_diverged(self) -> bool:
        return any(interval.soft_div for interval in self.intervals)

    @property
    def hard_diverged(self) -> bool:
        return any(interval.hard_div for interval in self.intervals)

    @property
    def max_abs_q(self) -> np.ndarray:
        return np.array([interval.max_abs_q for interval in self.intervals])

    def mean_return(self) -> float:
        """Mean of the interval mean returns, NaN if no episode ended."""
        returns = [
            interval.mean_return
            for interval in self.intervals
            if not math.isnan(interval.mean_return)
        ]
        return float(np.mean(returns)) if returns else math.nan

    def record(
        self,
        frame: int,
        q_values: ArrayLike | None = None,
        episode_returns: typing.Iterable[float] = (),
        loss: float | None = None,
        replay: ReplayStatistics | None = None,
    ) -> None:
        """Add the observations of one frame.

        Parameters
        ----------
        frame : `int`
            Frame number, at least the previous one.
        q_values : `numpy.ndarray`, optional
            Action values evaluated during the frame.
        episode_returns : `list` [`float`], optional
            Unclipped returns of episodes that ended at this frame.
        loss : `float`, optional
            Loss of the update made at this frame.
        replay : `ReplayStatistics`, optional
            Replay state after this frame.

        Raises
        ------
        ValueError
            If frame decreases.
        RuntimeError
            If the metrics were finished or terminated.
        """
        if self.finished:
            raise RuntimeError(f"Run {self.run_id} metrics are already closed")
        if frame < self.last_frame:
            raise ValueError(f"Frame {frame} precedes frame {self.last_frame}")
        # close intervals lying entirely before this frame
        while frame > self.interval_start + self.interval_frames:
            self._close_interval(self.interval_start + self.interval_frames)
        self.last_frame = frame

        if q_values is not None:
            q_values = np.asarray(q_values, dtype=float)
            if q_values.size > 0:
                if not np.all(np.isfinite(q_values)):
                    self._hard = True
                    self._max_abs_q = math.inf
                else:
                    self._max_abs_q = max(self._max_abs_q, float(np.abs(q_values).max()))
        self._returns.extend(float(ret) for ret in episode_returns)
        if loss is not None:
            if math.isfinite(loss):
                self._losses.append(float(loss))
            else:
                self._hard = True
        if replay is not None:
            self._replay = replay

        if frame == self.interval_start + self.interval_frames:
            self._close_interval(frame)

    def _close_interval(self, frame_end: int) -> None:
        soft = self._hard or self._max_abs_q > self.threshold
        if soft and not self.soft_diverged:
            self.log.warning(
                f"Run {self.run_id} soft diverged: max |Q| {self._max_abs_q:.6g} "
                f"> {self.threshold:.6g} by frame {frame_end}"
            )
        if self._hard and not self.hard_diverged:
            self.log.error(f"Run {self.run_id} hard diverged by frame {frame_end}")
        returns = np.array(self._returns)
        interval = IntervalStats(
            frame_start=self.interval_start,
            frame_end=frame_end,
            max_abs_q=self._max_abs_q,
            mean_return=float(returns.mean()) if returns.size else math.nan,
            p50_return=float(np.median(returns)) if returns.size else math.nan,
            loss_mean=float(np.mean(self._losses)) if self._losses else math.nan,
            soft_div=soft,
            hard_div=self._hard,
            replay_fill=self._replay.fill if self._replay else math.nan,
            priority_mean=self._replay.priority_mean if self._replay else math.nan,
        )
        self.intervals.append(interval)
        self.log.debug(f"Run {self.run_id} interval {interval}")
        self._reset_interval()

    def finish(self, frame: int) -> list[IntervalStats]:
        """Close the metrics at the final frame.

        A partial last interval ending at frame is kept.
        """
        if not self.finished:
            if frame < self.last_frame:
                raise ValueError(f"Frame {frame} precedes frame {self.last_frame}")
            while frame > self.interval_start:
                self._close_interval(min(frame, self.interval_start + self.interval_frames))
            self.finished = True
        return self.intervals

    def terminate(self, frame: int, total_frames: int) -> list[IntervalStats]:
        """Close the metrics after a hard divergence at frame.

        The interval holding frame and every later interval up to
        total_frames are recorded as diverged.
        """
        self.last_frame = max(self.last_frame, frame)
        if self.intervals and self.intervals[-1].frame_end == frame:
            # frame ended an interval that record already closed
            if not self.hard_diverged:
                self.log.error(f"Run {self.run_id} hard diverged by frame {frame}")
            self.intervals[-1] = self.intervals[-1]._replace(
                max_abs_q=math.inf, soft_div=True, hard_div=True
            )
        else:
            self._hard = True
            self._max_abs_q = math.inf
            self._close_interval(
                min(total_frames, self.interval_start + self.interval_frames)
            )
        while total_frames > self.interval_start:
            self._hard = True
            self._max_abs_q = math.inf
            self._close_interval(
                min(total_frames, self.interval_start + self.interval_frames)
            )
        self.terminated = True
        self.finished = True
        return self.intervals

    def to_csv(self, path: str | pathlib.Path) -> None:
        """Write intervals with columns `CSV_COLUMNS`."""
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for interval in self.intervals:
                row: dict[str, typing.Any] = dict(
                    run_id=self.run_id, config_hash=self.config_hash
                )
                for name, value in interval._asdict().items():
                    row[name] = int(value) if isinstance(value, bool) else value
                writer.writerow(row)

    @classmethod
    def from_csv(
        cls,
        path: str | pathlib.Path,
        gamma: float,
        labels: dict[str, typing.Any] | None = None,
        log: logging.Logger | None = None,
    ) -> "RunMetrics":
        """Read metrics written by `to_csv`.

        Raises
        ------
        ValueError
            If the file has no interval or unexpected columns.
        """
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ValueError(f"{path} columns {reader.fieldnames} != {CSV_COLUMNS}")
            rows = list(reader)
        if not rows:
            raise ValueError(f"{path} holds no interval")
        first = rows[0]
        interval_frames = int(first["frame_end"]) - int(first["frame_start"])
        metrics = cls(
            run_id=first["run_id"],
            config_hash=first["config_hash"],
            interval_frames=interval_frames,
            gamma=gamma,
            labels=labels,
            log=log,
        )
        for row in rows:
            metrics.intervals.append(
                IntervalStats(
                    frame_start=int(row["frame_start"]),
                    frame_end=int(row["frame_end"]),
                    max_abs_q=float(row["max_abs_q"]),
                    mean_return=float(row["mean_return"]),
                    p50_return=float(row["p50_return"]),
                    loss_mean=float(row["loss_mean"]),
                    soft_div=bool(int(row["soft_div"])),
                    hard_div=bool(int(row["hard_div"])),
                    replay_fill=float(row["replay_fill"]),
                    priority_mean=float(row["priority_mean"]),
                )
            )
        metrics.last_frame = metrics.intervals[-1].frame_end
        metrics.terminated = metrics.hard_diverged
        metrics.finished = True
        return metrics


def wilson_interval(
    successes: int, trials: int, z: float = 1.96
) -> tuple[float, float]:
    """Wilson score confidence interval of a binomial proportion.

    Parameters
    ----------
    successes : `int`
        Number of successes.
    trials : `int`
        Number of trials, positive.
    z : `float`, optional
        Normal quantile; 1.96 gives a 95% interval.

    Returns
    -------
    low, high : `float`
        Interval bounds, within [0, 1].
    """
    if trials < 1:
        raise ValueError(f"Need at least one trial, got {trials}")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes={successes} not in [0, {trials}]")
    p = successes / trials
    denominator = 1 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denominator
    half = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denominator
    return max(0.0, center - half), min(1.0, center + half)


def _fraction(runs: list[RunMetrics]) -> dict[str, typing.Any]:
    n_soft = sum(run.soft_diverged for run in runs)
    low, high = wilson_interval(n_soft, len(runs))
    return dict(
        n_runs=len(runs),
        soft_fraction=n_soft / len(runs),
        soft_ci=[low, high],
        hard_fraction=sum(run.hard_diverged for run in runs) / len(runs),
    )


def _bands(runs: list[RunMetrics]) -> dict[str, list[float]]:
    """Max |Q| percentiles over runs, per interval index.

    Nearest-rank percentiles: infinite values of diverged intervals never
    interpolate to NaN.
    """
    n_intervals = max(len(run.intervals) for run in runs)
    bands: dict[str, list[float]] = {str(p): [] for p in PERCENTILES}
    for i in range(n_intervals):
        values = [run.intervals[i].max_abs_q for run in runs if i < len(run.intervals)]
        percentiles = np.percentile(values, PERCENTILES, method="nearest")
        for p, value in zip(PERCENTILES, percentiles):
            bands[str(p)].append(float(value))
    return bands


def _label_text(value: typing.Any) -> str:
    return value if isinstance(value, str) else canonical_json(value)


def prioritization_label(alpha: float, beta: float) -> str:
    """Replay setting as one label: ``uniform`` when alpha is 0, else
    ``alpha=<alpha> uncorrected`` or ``alpha=<alpha> beta=<beta>``.

    Importance correction has no effect on uniform replay, so every beta
    shares the ``uniform`` label.
    """
    if alpha == 0:
        return "uniform"
    if beta == 0:
        return f"alpha={alpha:g} uncorrected"
    return f"alpha={alpha:g} beta={beta:g}"


def label_sort_key(text: str) -> tuple[int, float, str]:
    """Sort key of label texts: numbers by value, capacities from small to
    extra-large, other text alphabetically."""
    try:
        return (0, float(text), "")
    except ValueError:
        pass
    capacities = [capacity.value for capacity in Capacity]
    if text in capacities:
        return (1, capacities.index(text), "")
    return (2, 0.0, text)


def _groups(runs: list[RunMetrics], key: str) -> dict[str, list[RunMetrics]]:
    """Runs by label text of key, in `label_sort_key` order; runs without
    the label are left out."""
    groups: dict[str, list[RunMetrics]] = {}
    for run in runs:
        if key in run.labels:
            groups.setdefault(_label_text(run.labels[key]), []).append(run)
    return {text: groups[text] for text in sorted(groups, key=label_sort_key)}


def _select(runs: list[RunMetrics], **criteria: typing.Any) -> list[RunMetrics]:
    def matches(run: RunMetrics) -> bool:
        for key, value in criteria.items():
            label = run.labels.get(key.replace("__", "."))
            if label is None or label != value:
                return False
        return True

    return [run for run in runs if matches(run)]


def _orderings(
    runs: list[RunMetrics], log: logging.Logger
) -> list[dict[str, typing.Any]]:
    checks = [
        (
            "n10_le_n1",
            "soft divergence with n=10 <= n=1 under the Q rule",
            _select(runs, bootstrap__kind=BootstrapKind.Q.value, bootstrap__n=10),
            _select(runs, bootstrap__kind=BootstrapKind.Q.value, bootstrap__n=1),
        ),
        (
            "double_q_le_q",
            "soft divergence of DoubleQ <= Q at n=1",
            _select(runs, bootstrap__kind=BootstrapKind.DOUBLE_Q.value, bootstrap__n=1),
            _select(runs, bootstrap__kind=BootstrapKind.Q.value, bootstrap__n=1),
        ),
        (
            "alpha0_le_alpha2",
            "soft divergence with alpha=0 <= alpha=2 uncorrected (beta=0)",
            _select(runs, replay__alpha=0),
            _select(runs, replay__alpha=2, replay__beta=0),
        ),
    ]
    results = []
    for name, description, lower, upper in checks:
        result: dict[str, typing.Any] = dict(name=name, description=description)
        if not lower or not upper:
            result["holds"] = None
        else:
            result["lower"] = _fraction(lower)
            result["upper"] = _fraction(upper)
            result["holds"] = (
                result["lower"]["soft_fraction"] <= result["upper"]["soft_fraction"]
            )
            if not result["holds"]:
                log.warning(
                    f"Ordering {name} ({description}) does not hold: "
                    f"{result['lower']['soft_fraction']:.3f} "
                    f"CI {result['lower']['soft_ci']} > "
                    f"{result['upper']['soft_fraction']:.3f} "
                    f"CI {result['upper']['soft_ci']}"
                )
        results.append(result)
    return results


def summarize(
    runs: typing.Iterable[RunMetrics], log: logging.Logger | None = None
) -> dict[str, typing.Any]:
    """Summarize the runs of a sweep.

    Parameters
    ----------
    runs : `list` [`RunMetrics`]
        Finished runs, in any order.
    log : `logging.Logger`, optional
        Logger for ordering deviations.

    Returns
    -------
    summary : `dict`
        JSON serializable summary with keys:

        ``n_runs``
            Number of runs.
        ``configs``
            Per configuration hash: labels, soft and hard divergence
            fractions with a 95% Wilson interval, and max |Q| percentile
            bands per interval.
        ``bands``
            Max |Q| percentile bands over all runs.
        ``capacity_bands``
            Max |Q| percentile bands per ``approximator.capacity`` label,
            smallest capacity first.
        ``marginals``
            Soft divergence fraction per value of every label taking
            more than one value.
        ``crossed``
            For every such label other than ``bootstrap.kind``: per
            bootstrap kind, a list of the label values in
            `label_sort_key` order with their soft divergence fraction
            and 95% Wilson interval.
        ``scatter``
            Per run median max |Q|, mean return and labels.
        ``orderings``
            Expected orderings of soft divergence fractions; ``holds`` is
            None when the sweep lacks the compared runs.

    Raises
    ------
    ValueError
        If runs is empty.
    """
    log = log or logging.getLogger("summarize")
    runs = sorted(runs, key=lambda run: run.run_id)
    if not runs:
        raise ValueError("No run to summarize")

    by_config: dict[str, list[RunMetrics]] = {}
    for run in runs:
        by_config.setdefault(run.config_hash, []).append(run)
    configs = []
    for config_hash in sorted(by_config):
        group = by_config[config_hash]
        configs.append(
            dict(
                config_hash=config_hash,
                labels=group[0].labels,
                run_ids=[run.run_id for run in group],
                bands=_bands(group),
                **_fraction(group),
            )
        )

    marginals: dict[str, dict[str, typing.Any]] = {}
    keys = sorted({key for run in runs for key in run.labels})
    for key in keys:
        groups = _groups(runs, key)
        if len(groups) > 1:
            marginals[key] = {
                value: _fraction(group) for value, group in groups.items()
            }

    # fractions of every other swept label within each bootstrap kind
    crossed: dict[str, dict[str, list[dict[str, typing.Any]]]] = {}
    kinds = _groups(runs, KIND_KEY)
    for key in marginals:
        if key == KIND_KEY or not kinds:
            continue
        crossed[key] = {
            kind: [
                dict(value=value, **_fraction(group))
                for value, group in _groups(kind_runs, key).items()
            ]
            for kind, kind_runs in kinds.items()
        }

    capacity_bands = [
        dict(capacity=capacity, bands=_bands(group))
        for capacity, group in _groups(runs, CAPACITY_KEY).items()
    ]

    scatter = [
        dict(
            run_id=run.run_id,
            config_hash=run.config_hash,
            median_max_abs_q=float(np.percentile(run.max_abs_q, 50, method="nearest")),
            mean_return=run.mean_return(),
            labels=run.labels,
        )
        for run in runs
        if run.intervals
    ]

    return dict(
        n_runs=len(runs),
        configs=configs,
        bands=_bands(runs),
        capacity_bands=capacity_bands,
        marginals=marginals,
        crossed=crossed,
        scatter=scatter,
        orderings=_orderings(runs, log),
    )
