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
    "BootstrapRule",
    "TransitionSegment",
    "bootstrap_value",
    "bootstrap_values",
    "n_step_return",
    "n_step_returns",
    "stack_segments",
    "td_error",
]

import dataclasses
import typing

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .enums import BootstrapKind
from .mdp import clip_reward


@dataclasses.dataclass(frozen=True)
class BootstrapRule:
    """Bootstrap target kind and number of rewards before bootstrapping."""

    kind: BootstrapKind
    n: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BootstrapKind(self.kind))
        if self.n < 1:
            raise ValueError(f"Bootstrap length must be at least 1, got {self.n}")

    @property
    def uses_online(self) -> bool:
        return self.kind != BootstrapKind.TARGET_Q

    @property
    def uses_target(self) -> bool:
        return self.kind != BootstrapKind.Q


@dataclasses.dataclass(frozen=True)
class TransitionSegment:
    """Up to n consecutive transitions starting with (state, action).

    Rewards are clipped on construction. A terminated segment ended the
    episode after its last reward and has no bootstrap term; a truncated
    (time limit) segment keeps it.
    """

    state: int
    action: int
    rewards: tuple[float, ...]
    bootstrap_state: int
    terminated: bool

    def __post_init__(self) -> None:
        if len(self.rewards) < 1:
            raise ValueError("Segment needs at least one reward")
        object.__setattr__(
            self,
            "rewards",
            tuple(float(r) for r in clip_reward(np.asarray(self.rewards, dtype=float))),
        )

    @property
    def length(self) -> int:
        return len(self.rewards)


def bootstrap_values(
    kind: BootstrapKind, q_online: ArrayLike, q_target: ArrayLike
) -> NDArray:
    """Bootstrap values of a batch of states.

    Parameters
    ----------
    kind : `BootstrapKind`
        Q: max_a q(s, a). TargetQ: max_a q'(s, a). InverseDoubleQ:
        q(s, argmax_a q'(s, a)). DoubleQ: q'(s, argmax_a q(s, a)).
    q_online : `numpy.ndarray`
        Online action values q, shape (B, A).
    q_target : `numpy.ndarray`
        Target network action values q', shape (B, A). Ignored by Q.

    Returns
    -------
    values : `numpy.ndarray`
        Shape (B,). Argmax ties go to the lowest action index.
    """
    kind = BootstrapKind(kind)
    q_online = np.asarray(q_online, dtype=float)
    if kind == BootstrapKind.Q:
        return q_online.max(axis=1)
    q_target = np.asarray(q_target, dtype=float)
    if kind == BootstrapKind.TARGET_Q:
        return q_target.max(axis=1)
    rows = np.arange(q_online.shape[0])
    if kind == BootstrapKind.INVERSE_DOUBLE_Q:
        return q_online[rows, np.argmax(q_target, axis=1)]
    return q_target[rows, np.argmax(q_online, axis=1)]


def bootstrap_value(
    rule: BootstrapRule, q_online: ArrayLike, q_target: ArrayLike
) -> float:
    """Bootstrap value v(s) from the online and target action values of s."""
    return float(
        bootstrap_values(rule.kind, np.atleast_2d(q_online), np.atleast_2d(q_target))[
            0
        ]
    )


def n_step_returns(
    rewards: ArrayLike,
    lengths: ArrayLike,
    terminated: ArrayLike,
    bootstrap: ArrayLike,
    gamma: float,
) -> NDArray:
    """Batched n-step returns.

    Parameters
    ----------
    rewards : `numpy.ndarray`
        Shape (B, n), zero padded after each segment length.
    lengths : `numpy.ndarray`
        Number of rewards m of every segment.
    terminated : `numpy.ndarray`
        Segments without a bootstrap term.
    bootstrap : `numpy.ndarray`
        Bootstrap value of every segment's last state.
    gamma : `float`
        Discount factor.

    Returns
    -------
    returns : `numpy.ndarray`
        sum_i gamma^(i-1) R_i + (not terminated) gamma^m v.
    """
    rewards = clip_reward(np.asarray(rewards, dtype=float))
    lengths = np.asarray(lengths)
    discounts = gamma ** np.arange(rewards.shape[1])
    live = ~np.asarray(terminated, dtype=bool)
    bootstrap = np.where(live, np.asarray(bootstrap, dtype=float), 0.0)
    return rewards @ discounts + live * gamma**lengths * bootstrap


def n_step_return(
    segment: TransitionSegment,
    rule: BootstrapRule,
    q_online: ArrayLike,
    q_target: ArrayLike,
    gamma: float,
) -> float:
    """n-step return of a segment.

    Parameters
    ----------
    segment : `TransitionSegment`
        Rewards and bootstrap state.
    rule : `BootstrapRule`
        Bootstrap target kind.
    q_online, q_target : `numpy.ndarray`
        Online and target action values of the segment's bootstrap state.
    gamma : `float`
        Discount factor.
    """
    value = 0.0 if segment.terminated else bootstrap_value(rule, q_online, q_target)
    return float(
        n_step_returns(
            [segment.rewards],
            [segment.length],
            [segment.terminated],
            [value],
            gamma,
        )[0]
    )


def td_error(target: float, q_sa: float) -> float:
    return target - q_sa


def stack_segments(
    segments: typing.Sequence[TransitionSegment],
) -> tuple[NDArray, NDArray, NDArray, NDArray, NDArray, NDArray]:
    """Arrays of states, actions, padded rewards, lengths, bootstrap states
    and termination flags of a batch of segments."""
    width = max(segment.length for segment in segments)
    rewards = np.zeros((len(segments), width))
    for i, segment in enumerate(segments):
        rewards[i, : segment.length] = segment.rewards
    return (
        np.array([segment.state for segment in segments]),
        np.array([segment.action for segment in segments]),
        rewards,
        np.array([segment.length for segment in segments]),
        np.array([segment.bootstrap_state for segment in segments]),
        np.array([segment.terminated for segment in segments], dtype=bool),
    )
