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

__all__ = ["SumTree"]

import numpy as np
from numpy.typing import ArrayLike, NDArray


class SumTree:
    """Binary tree of non-negative masses supporting prefix-sum search.

    Node 1 is the root, node i has children 2i and 2i + 1, leaves occupy
    nodes [size, 2 size) where size is the capacity rounded up to a power of
    two. Internal nodes are always recomputed from their children, so the
    root never accumulates drift.

    Parameters
    ----------
    capacity : `int`
        Number of leaves in use.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError(f"Capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.size = 1
        self.depth = 0
        while self.size < capacity:
            self.size *= 2
            self.depth += 1
        self.tree = np.zeros(2 * self.size)
        # internal nodes visited by find and update, for complexity checks
        self.visits = 0

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def __getitem__(self, index: int) -> float:
        return float(self.tree[self.size + index])

    def leaves(self) -> NDArray:
        return self.tree[self.size : self.size + self.capacity]

    def update(self, index: int, mass: float) -> None:
        """Set the mass of a leaf.

        Raises
        ------
        ValueError
            When index is out of range or mass negative.
        """
        if not 0 <= index < self.capacity:
            raise ValueError(f"Leaf index {index} out of range")
        if not mass >= 0:
            raise ValueError(f"Mass must be non-negative, got {mass}")
        node = self.size + index
        self.tree[node] = mass
        node //= 2
        while node >= 1:
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1]
            self.visits += 1
            node //= 2

    def find(self, values: ArrayLike) -> NDArray:
        """Leaf indices whose cumulative mass interval contains values.

        Each value is routed from the root in depth steps. A value beyond the
        left child's mass (or any value when the left subtree is empty) goes
        right, unless the right subtree is empty, which absorbs rounding at
        the upper end of the total.

        Parameters
        ----------
        values : `numpy.ndarray`
            Prefix sums in [0, total].

        Returns
        -------
        indices : `numpy.ndarray`
            Leaf index of every value.
        """
        values = np.array(values, dtype=float, ndmin=1)
        nodes = np.ones(values.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * nodes
            left_mass = self.tree[left]
            go_right = ((values > left_mass) | (left_mass <= 0)) & (
                self.tree[left + 1] > 0
            )
            values = np.where(go_right, values - left_mass, values)
            nodes = np.where(go_right, left + 1, left)
            self.visits += values.size
        return nodes - self.size
