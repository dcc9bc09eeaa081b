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

import unittest

import numpy as np
import pytest
from lsst.ts import triadlab

KINDS = list(triadlab.BootstrapKind)


class BootstrapValueTestCase(unittest.TestCase):
    def test_four_rules(self) -> None:
        expected = dict(Q=5, TargetQ=4, InverseDoubleQ=1, DoubleQ=2)
        for kind in KINDS:
            rule = triadlab.BootstrapRule(kind)
            assert triadlab.bootstrap_value(rule, [1, 5], [4, 2]) == expected[kind.value]

    def test_single_action(self) -> None:
        expected = dict(Q=7, TargetQ=3, InverseDoubleQ=7, DoubleQ=3)
        for kind in KINDS:
            rule = triadlab.BootstrapRule(kind)
            assert triadlab.bootstrap_value(rule, [7], [3]) == expected[kind.value]

    def test_ties(self) -> None:
        # argmax ties go to the lowest action
        assert (
            triadlab.bootstrap_value(triadlab.BootstrapRule("DoubleQ"), [2, 2], [1, 9])
            == 1
        )
        assert (
            triadlab.bootstrap_value(
                triadlab.BootstrapRule("InverseDoubleQ"), [1, 9], [2, 2]
            )
            == 1
        )

    def test_coincidence_after_sync(self) -> None:
        rng = np.random.default_rng(4)
        gamma = 0.99
        for _ in range(1000):
            n_actions = int(rng.integers(1, 6))
            batch = 8
            q = rng.normal(scale=10, size=(batch, n_actions))
            q_target = triadlab.sync_target(q.ravel()).reshape(q.shape)
            rewards = rng.uniform(-1, 1, size=(batch, 3))
            lengths = rng.integers(1, 4, size=batch)
            terminated = rng.random(batch) < 0.2
            returns = [
                triadlab.n_step_returns(
                    rewards,
                    lengths,
                    terminated,
                    triadlab.bootstrap_values(kind, q, q_target),
                    gamma,
                )
                for kind in KINDS
            ]
            for other in returns[1:]:
                np.testing.assert_allclose(other, returns[0], rtol=0, atol=1e-12)

    def test_invalid_rule(self) -> None:
        with pytest.raises(ValueError):
            triadlab.BootstrapRule("Q", n=0)
        with pytest.raises(ValueError):
            triadlab.BootstrapRule("TripleQ")
        assert not triadlab.BootstrapRule("TargetQ").uses_online
        assert not triadlab.BootstrapRule("Q").uses_target
        assert triadlab.BootstrapRule("DoubleQ").uses_online
        assert triadlab.BootstrapRule("DoubleQ").uses_target

    def test_double_q_mirror(self) -> None:
        rng = np.random.default_rng(8)
        for _ in range(200):
            shape = (8, int(rng.integers(1, 6)))
            # small integers give ties
            q = rng.integers(-3, 4, size=shape).astype(float)
            q_target = rng.integers(-3, 4, size=shape).astype(float)
            np.testing.assert_array_equal(
                triadlab.bootstrap_values("DoubleQ", q, q_target),
                triadlab.bootstrap_values("InverseDoubleQ", q_target, q),
            )

    def test_max_dominates(self) -> None:
        rng = np.random.default_rng(9)
        for _ in range(200):
            shape = (8, int(rng.integers(1, 6)))
            q = rng.normal(size=shape)
            q_target = rng.normal(size=shape)
            values = {
                kind.value: triadlab.bootstrap_values(kind, q, q_target)
                for kind in KINDS
            }
            assert np.all(values["Q"] >= values["InverseDoubleQ"])
            assert np.all(values["TargetQ"] >= values["DoubleQ"])
            # with target equal to online, Q is at least every other rule
            for kind in KINDS:
                assert np.all(
                    triadlab.bootstrap_values("Q", q, q)
                    >= triadlab.bootstrap_values(kind, q, q)
                )


class NStepReturnTestCase(unittest.TestCase):
    def test_three_step(self) -> None:
        segment = triadlab.TransitionSegment(0, 0, (1, 1, 1), 2, False)
        rule = triadlab.BootstrapRule("Q", n=3)
        assert triadlab.n_step_return(segment, rule, [4], [4], 0.5) == pytest.approx(
            2.25
        )

    def test_clipped_one_step(self) -> None:
        segment = triadlab.TransitionSegment(0, 1, (2.0,), 1, False)
        assert segment.rewards == (1.0,)
        rule = triadlab.BootstrapRule("TargetQ")
        assert triadlab.n_step_return(
            segment, rule, [0, 0], [10, -3], 0.9
        ) == pytest.approx(10)

    def test_terminated(self) -> None:
        segment = triadlab.TransitionSegment(0, 0, (0, 0), 3, True)
        rule = triadlab.BootstrapRule("Q", n=2)
        assert triadlab.n_step_return(segment, rule, [1e6], [1e6], 0.99) == 0
        # terminated bootstrap values are ignored even if not finite
        returns = triadlab.n_step_returns([[1.0]], [1], [True], [np.nan], 0.9)
        np.testing.assert_array_equal(returns, [1.0])

    def test_mixed_lengths(self) -> None:
        segments = [
            triadlab.TransitionSegment(0, 0, (1, 1, 1), 5, False),
            triadlab.TransitionSegment(1, 2, (1,), 5, False),
        ]
        states, actions, rewards, lengths, bootstrap_states, terminated = (
            triadlab.stack_segments(segments)
        )
        np.testing.assert_array_equal(states, [0, 1])
        np.testing.assert_array_equal(actions, [0, 2])
        np.testing.assert_array_equal(rewards, [[1, 1, 1], [1, 0, 0]])
        np.testing.assert_array_equal(lengths, [3, 1])
        np.testing.assert_array_equal(bootstrap_states, [5, 5])
        assert not terminated.any()
        returns = triadlab.n_step_returns(rewards, lengths, terminated, [4, 4], 0.5)
        np.testing.assert_allclose(returns, [2.25, 3.0])

    def test_empty_segment(self) -> None:
        with pytest.raises(ValueError):
            triadlab.TransitionSegment(0, 0, (), 1, False)

    def test_one_step_target(self) -> None:
        rng = np.random.default_rng(10)
        for _ in range(500):
            n_actions = int(rng.integers(1, 5))
            q = rng.normal(scale=5, size=n_actions)
            q_target = rng.normal(scale=5, size=n_actions)
            reward = float(rng.uniform(-3, 3))
            terminated = bool(rng.random() < 0.3)
            gamma = float(rng.uniform(0, 0.999))
            segment = triadlab.TransitionSegment(0, 0, (reward,), 1, terminated)
            for kind in KINDS:
                rule = triadlab.BootstrapRule(kind, n=1)
                expected = float(np.clip(reward, -1, 1))
                if not terminated:
                    expected += gamma * triadlab.bootstrap_value(rule, q, q_target)
                assert triadlab.n_step_return(
                    segment, rule, q, q_target, gamma
                ) == pytest.approx(expected, rel=1e-12, abs=1e-12)


class TdErrorTestCase(unittest.TestCase):
    def test_examples(self) -> None:
        assert triadlab.td_error(2.25, 2.25) == 0
        assert triadlab.td_error(11, 10) == 1
        assert triadlab.td_error(0, -3) == 3
