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
    "PrioritizedBuffer",
    "ReplayNotReadyError",
    "ReplaySample",
    "ReplayStatistics",
]

import math
import typing

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .sum_tree import SumTree
from .targets import TransitionSegment

"""Default value added to absolute TD errors."""
PRIORITY_FLOOR = 1e-6


class ReplayNotReadyError(RuntimeError):
    """Sampling requested before the buffer reached its minimal fill."""


class ReplaySample(typing.NamedTuple):
    segments: list[TransitionSegment]
    weights: NDArray
    ids: NDArray
    probabilities: NDArray


class ReplayStatistics(typing.NamedTuple):
    count: int
    fill: float
    priority_mean: float
    priority_max: float
    # counts of priorities per decade, from 1e-6 and below up to 1e3 and above
    histogram: tuple[int, ...]


class PrioritizedBuffer:
    """Ring buffer of transition segments with proportional prioritization.

    Entry k is sampled with probability p_k = priority_k^alpha / sum_j
    priority_j^alpha, where priority_k = |delta_k| + priority_floor, and
    corrected by the importance weight 1 / (N p_k)^beta, N being the number
    of stored entries.

    Parameters
    ----------
    capacity : `int`
        Maximum number of stored segments. The oldest one is evicted first.
    alpha : `float`
        Priority exponent, 0 gives uniform sampling.
    beta : `float`
        Importance sampling exponent, 0 disables the correction.
    min_fill : `float`, optional
        Fraction of capacity that must be stored before sampling.
    priority_floor : `float`, optional
        Added to every absolute TD error so every entry stays reachable.
    normalize_weights : `bool`, optional
        Divide the importance weights of a batch by their maximum.
    """

    def __init__(
        self,
        capacity: int,
        alpha: float,
        beta: float,
        min_fill: float = 0.2,
        priority_floor: float = PRIORITY_FLOOR,
        normalize_weights: bool = False,
    ) -> None:
        if capacity < 1:
            raise ValueError(f"Capacity must be positive, got {capacity}")
        if alpha < 0 or beta < 0:
            raise ValueError(f"Exponents must be non-negative, got {alpha}, {beta}")
        if not 0 <= min_fill <= 1:
            raise ValueError(f"min_fill must be in [0, 1], got {min_fill}")
        if not priority_floor > 0:
            raise ValueError(f"Priority floor must be positive, got {priority_floor}")
        self.capacity = capacity
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.min_fill = min_fill
        self.priority_floor = priority_floor
        self.normalize_weights = normalize_weights

        self.tree = SumTree(capacity)
        self.priorities = np.zeros(capacity)
        self.segments: list[TransitionSegment | None] = [None] * capacity
        self.count = 0
        # id of the next pushed entry; entry id maps to slot id % capacity
        self.next_id = 0

    def __len__(self) -> int:
        return self.count

    @property
    def fill(self) -> float:
        return self.count / self.capacity

    @property
    def min_count(self) -> int:
        return max(1, math.ceil(self.min_fill * self.capacity))

    def can_sample(self) -> bool:
        return self.count >= self.min_count

    def is_valid(self, entry_id: int) -> bool:
        """True if entry_id is still stored (wasn't evicted)."""
        return self.next_id - self.count <= entry_id < self.next_id

    def _set_priority(self, slot: int, td_error: float) -> None:
        priority = abs(td_error) + self.priority_floor
        self.priorities[slot] = priority
        self.tree.update(slot, priority**self.alpha)

    def push(self, segment: TransitionSegment, initial_td_error: float) -> int:
        """Store segment, evicting the oldest entry if full.

        Parameters
        ----------
        segment : `TransitionSegment`
            Segment to store.
        initial_td_error : `float`
            TD error computed with the networks current at insertion time.
            Non-finite errors store the floor priority.

        Returns
        -------
        entry_id : `int`
            Id used by `update_priorities`.
        """
        entry_id = self.next_id
        slot = entry_id % self.capacity
        self.segments[slot] = segment
        self._set_priority(
            slot, initial_td_error if math.isfinite(initial_td_error) else 0.0
        )
        self.next_id += 1
        self.count = min(self.count + 1, self.capacity)
        return entry_id

    def sample(self, batch: int, rng: np.random.Generator) -> ReplaySample:
        """Draw a stratified prioritized batch.

        The total priority mass is split in batch equal strata and one prefix
        sum is drawn uniformly in each.

        Parameters
        ----------
        batch : `int`
            Number of drawn entries (with replacement).
        rng : `numpy.random.Generator`
            Run random number generator.

        Returns
        -------
        sample : `ReplaySample`
            Segments, importance weights, entry ids and sampling
            probabilities.

        Raises
        ------
        ReplayNotReadyError
            When fewer than min_fill * capacity segments are stored.
        """
        if not self.can_sample():
            raise ReplayNotReadyError(
                f"Replay holds {self.count} segments, needs {self.min_count}"
            )
        if batch < 1:
            raise ValueError(f"Batch size must be positive, got {batch}")
        total = self.tree.total
        values = (np.arange(batch) + rng.random(batch)) * (total / batch)
        slots = self.tree.find(np.minimum(values, total))
        masses = self.tree.leaves()[slots]
        probabilities = masses / total
        # (N * mass) / total is exactly 1 for equal masses
        weights = np.power(self.count * masses / total, -self.beta)
        if self.normalize_weights:
            weights = weights / weights.max()
        # slot -> entry id of the entry currently stored there
        base = self.next_id - self.next_id % self.capacity
        ids = np.where(slots < self.next_id % self.capacity, base, base - self.capacity)
        ids = ids + slots
        return ReplaySample(
            [typing.cast(TransitionSegment, self.segments[slot]) for slot in slots],
            weights,
            ids,
            probabilities,
        )

    def update_priorities(self, ids: ArrayLike, td_errors: ArrayLike) -> None:
        """Refresh priorities of sampled entries.

        Evicted ids and non-finite errors are ignored.
        """
        for entry_id, td_error in zip(
            np.asarray(ids).tolist(), np.asarray(td_errors, dtype=float).tolist()
        ):
            if self.is_valid(entry_id) and math.isfinite(td_error):
                self._set_priority(entry_id % self.capacity, td_error)

    def probabilities(self) -> NDArray:
        """Sampling probability of every stored slot."""
        return self.tree.leaves()[: self.count] / self.tree.total

    def statistics(self) -> ReplayStatistics:
        stored = self.priorities[: self.count]
        if self.count == 0:
            return ReplayStatistics(0, 0.0, 0.0, 0.0, (0,) * 10)
        decades = np.clip(np.floor(np.log10(stored)).astype(int), -6, 3) + 6
        histogram = np.bincount(decades, minlength=10)
        return ReplayStatistics(
            self.count,
            self.fill,
            float(stored.mean()),
            float(stored.max()),
            tuple(int(c) for c in histogram),
        )
