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


class MdpTestCase(unittest.TestCase):
    def test_zero_reward_values(self) -> None:
        for gamma in (0.0, 0.4, 0.99):
            mdp, _ = triadlab.make_tvr(gamma)
            values = triadlab.solve_policy_values(mdp, triadlab.Policy.uniform(2, 1))
            np.testing.assert_array_equal(values, [0, 0])

    def test_self_loop(self) -> None:
        mdp = triadlab.Mdp([[[1.0]]], [[1.0]], 0.99)
        values = triadlab.solve_policy_values(mdp, triadlab.Policy.uniform(1, 1))
        assert values[0] == pytest.approx(100)

    def test_terminal_chain(self) -> None:
        transition = np.zeros((3, 1, 3))
        transition[0, 0, 1] = 1
        transition[1, 0, 2] = 1
        transition[2, 0, 2] = 1
        mdp = triadlab.Mdp(transition, [[1.0], [1.0], [0.0]], 0.5, [False, False, True])
        values = triadlab.solve_policy_values(mdp, triadlab.Policy.uniform(3, 1))
        np.testing.assert_allclose(values, [1.5, 1, 0], atol=1e-12)

    def test_invalid(self) -> None:
        with pytest.raises(ValueError):
            triadlab.Mdp([[[1.0]]], [[0.0]], 1.0)
        with pytest.raises(ValueError):
            triadlab.Mdp([[[0.5, 0.4]], [[0, 1]]], [[0.0], [0.0]], 0.9)
        with pytest.raises(ValueError):
            triadlab.Mdp([[[1.0]]], [[0.0, 0.0]], 0.9)
        with pytest.raises(ValueError):
            triadlab.Policy([[0.5, 0.6]])

    def test_tvr(self) -> None:
        mdp, features = triadlab.make_tvr(0.99)
        assert mdp.n_states == 2
        assert mdp.n_actions == 1
        assert mdp.transition[0, 0, 1] == 1
        assert mdp.transition[1, 0, 1] == 1
        np.testing.assert_array_equal(mdp.reward, 0)
        np.testing.assert_array_equal(features.matrix[:, 0], [1, 2])
        assert not features.learnable_offset
        assert triadlab.make_tvr(0.5, learnable_u=True)[1].learnable_offset

    def test_stationary_distribution(self) -> None:
        mdp, _ = triadlab.make_tvr(0.9)
        distribution = triadlab.stationary_distribution(
            mdp, triadlab.Policy.uniform(2, 1)
        )
        np.testing.assert_allclose(distribution, [0, 1], atol=1e-12)


class GridworldTestCase(unittest.TestCase):
    def test_corridor_oracle(self) -> None:
        env = triadlab.make_gridworld(2, 1, goal_reward=1, step_reward=0, gamma=0.9)
        q = triadlab.value_iteration(env.to_mdp())
        # right reaches the goal, every other action bumps a wall
        np.testing.assert_allclose(q[0], [0.9, 1, 0.9, 0.9], atol=1e-10)
        np.testing.assert_array_equal(q[1], 0)

    def test_adjacent_to_goal(self) -> None:
        env = triadlab.make_gridworld(5, 5, goal_reward=1, step_reward=0, gamma=0.99)
        mdp = env.to_mdp()
        q = triadlab.value_iteration(mdp)
        # left of and above the goal
        for state in (23, 19):
            assert q[state].max() == pytest.approx(1.0)
        assert np.all(np.abs(q) <= 1 / (1 - mdp.discount))

    def test_reward_clipping(self) -> None:
        env = triadlab.make_gridworld(2, 1, goal_reward=5, step_reward=-3, gamma=0.9)
        rng = np.random.default_rng(0)
        step = env.step(0, 1, rng)
        assert step.terminated
        assert step.reward == 5
        assert step.clipped_reward == 1
        step = env.step(0, 3, rng)
        assert not step.terminated
        assert step.next_state == 0
        assert step.clipped_reward == -1
        mdp = env.to_mdp()
        assert mdp.reward.max() == 1
        assert mdp.reward.min() == -1
        with pytest.raises(ValueError):
            env.step(1, 0, rng)

    def test_moves_and_starts(self) -> None:
        env = triadlab.make_gridworld(3, 2, 1, 0, 0.9, start="uniform")
        assert env.move(0, 0) == 0
        assert env.move(0, 1) == 1
        assert env.move(0, 2) == 3
        assert env.move(4, 3) == 3
        rng = np.random.default_rng(1)
        starts = {env.reset(rng) for _ in range(200)}
        assert starts == set(range(5))
        assert env.feature_map.dim == 2 + 6

    def test_invalid(self) -> None:
        with pytest.raises(ValueError):
            triadlab.make_gridworld(1, 1, 1, 0, 0.9)
        with pytest.raises(ValueError):
            triadlab.make_gridworld(2, 2, 1, 0, 0.9, features="pixels")
        with pytest.raises(ValueError):
            triadlab.make_gridworld(2, 2, 1, 0, 1.0)


class TvrEnvTestCase(unittest.TestCase):
    def test_step(self) -> None:
        env = triadlab.TvrEnv(0.99, start="fixed")
        rng = np.random.default_rng(0)
        assert env.reset(rng) == 0
        for state in (0, 1):
            step = env.step(state, 0, rng)
            assert step.next_state == 1
            assert step.reward == 0
            assert not step.terminated

    def test_termination(self) -> None:
        env = triadlab.TvrEnv(0.9, termination=1.0)
        rng = np.random.default_rng(0)
        assert not env.step(0, 0, rng).terminated
        assert env.step(1, 0, rng).terminated
        mdp = env.to_mdp()
        assert mdp.n_states == 3
        assert mdp.terminal.tolist() == [False, False, True]


class EpsilonGreedyTestCase(unittest.TestCase):
    def test_greedy(self) -> None:
        rng = np.random.default_rng(0)
        assert triadlab.epsilon_greedy([1, 3, 2], 0, rng) == 1
        assert triadlab.epsilon_greedy([5, 5], 0, rng) == 0

    def test_greedy_lowest_index(self) -> None:
        rng = np.random.default_rng(5)
        state = rng.bit_generator.state
        values = np.random.default_rng(6)
        for _ in range(1000):
            q = values.integers(-2, 3, size=int(values.integers(1, 8)))
            expected = int(np.flatnonzero(q == q.max())[0])
            assert triadlab.epsilon_greedy(q, 0, rng) == expected
        # no random draw at epsilon 0
        assert rng.bit_generator.state == state

    def test_uniform(self) -> None:
        rng = np.random.default_rng(2)
        n_draws = 1_000_000
        counts = np.bincount(
            [triadlab.epsilon_greedy([1, 3, 2], 1, rng) for _ in range(n_draws)],
            minlength=3,
        )
        np.testing.assert_allclose(counts / n_draws, 1 / 3, atol=0.005)

    def test_invalid(self) -> None:
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            triadlab.epsilon_greedy([], 0.1, rng)
        with pytest.raises(ValueError):
            triadlab.epsilon_greedy([1.0], 1.5, rng)


class BellmanTestCase(unittest.TestCase):
    def test_policy_values_residual(self) -> None:
        rng = np.random.default_rng(21)
        for _ in range(100):
            n_states = int(rng.integers(2, 9))
            n_actions = int(rng.integers(1, 5))
            gamma = float(rng.uniform(0, 0.99))
            mdp = triadlab.make_random_mdp(n_states, n_actions, gamma, rng)
            policy = triadlab.Policy(rng.dirichlet(np.ones(n_actions), size=n_states))
            values = triadlab.solve_policy_values(mdp, policy)
            p_pi = np.einsum("sa,sat->st", policy.probabilities, mdp.transition)
            r_pi = np.sum(policy.probabilities * mdp.reward, axis=1)
            residual = values - (r_pi + gamma * p_pi @ values)
            assert np.max(np.abs(residual)) < 1e-8

    def test_greedy_values_match_value_iteration(self) -> None:
        for width, height, step_reward, gamma in (
            (3, 3, 0.0, 0.9),
            (4, 2, -0.1, 0.95),
            (5, 5, 0.0, 0.99),
            (6, 3, -0.01, 0.99),
        ):
            with self.subTest(width=width, height=height, gamma=gamma):
                env = triadlab.make_gridworld(width, height, 1, step_reward, gamma)
                mdp = env.to_mdp()
                q = triadlab.value_iteration(mdp)
                values = triadlab.solve_policy_values(mdp, triadlab.Policy.greedy(q))
                np.testing.assert_allclose(values, q.max(axis=1), rtol=0, atol=1e-8)
