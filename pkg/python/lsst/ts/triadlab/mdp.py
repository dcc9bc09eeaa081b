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
    "REWARD_BOUND",
    "Mdp",
    "FeatureMap",
    "Policy",
    "StepResult",
    "Env",
    "GridworldEnv",
    "TvrEnv",
    "clip_reward",
    "solve_policy_values",
    "value_iteration",
    "stationary_distribution",
    "epsilon_greedy",
    "make_tvr",
    "make_baird",
    "make_gridworld",
    "make_random_mdp",
]

import abc
import dataclasses
import typing

import numpy as np
from numpy.typing import NDArray

"""Rewards seen by learners are clipped to [-REWARD_BOUND, REWARD_BOUND]."""
REWARD_BOUND = 1.0

"""Tolerance of probability sums."""
PROBABILITY_TOLERANCE = 1e-12

# gridworld moves, indexed by action: up, right, down, left
GRID_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


def _frozen(array: typing.Any, dtype: typing.Any = np.float64) -> NDArray:
    ret = np.array(array, dtype=dtype)
    ret.setflags(write=False)
    return ret


def clip_reward(reward: typing.Any) -> typing.Any:
    """Clip reward(s) to [-REWARD_BOUND, REWARD_BOUND]."""
    return np.clip(reward, -REWARD_BOUND, REWARD_BOUND)


@dataclasses.dataclass(frozen=True)
class Mdp:
    """Finite Markov decision process.

    Parameters
    ----------
    transition : `numpy.ndarray`
        Transition probabilities P[s, a, s'].
    reward : `numpy.ndarray`
        Expected reward R[s, a].
    discount : `float`
        Discount factor, 0 <= discount < 1.
    terminal : `numpy.ndarray`, optional
        Per-state terminal flags. Terminal states have value zero. Defaults
        to no terminal state.

    Raises
    ------
    ValueError
        When shapes don't agree, a transition row isn't a distribution or
        the discount is out of range.
    """

    transition: NDArray
    reward: NDArray
    discount: float
    terminal: NDArray | None = None

    def __post_init__(self) -> None:
        transition = _frozen(self.transition)
        reward = _frozen(self.reward)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError(
                f"Transition must have shape (S, A, S), got {transition.shape}"
            )
        if reward.shape != transition.shape[:2]:
            raise ValueError(
                f"Reward shape {reward.shape} doesn't match transition "
                f"shape {transition.shape}"
            )
        if np.any(transition < 0):
            raise ValueError("Transition probabilities must be non-negative")
        sums = transition.sum(axis=2)
        if np.any(np.abs(sums - 1) > PROBABILITY_TOLERANCE):
            raise ValueError(
                "Every transition row must sum to 1, worst row sums to "
                f"{sums.flat[np.argmax(np.abs(sums - 1))]!r}"
            )
        if not 0 <= self.discount < 1:
            raise ValueError(f"Discount must be in [0, 1), got {self.discount}")
        terminal = (
            np.zeros(transition.shape[0], dtype=bool)
            if self.terminal is None
            else _frozen(self.terminal, dtype=bool)
        )
        if terminal.shape != (transition.shape[0],):
            raise ValueError(f"Terminal flags shape {terminal.shape} is invalid")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "terminal", terminal)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclasses.dataclass(frozen=True)
class FeatureMap:
    """Per-state feature vectors.

    Parameters
    ----------
    matrix : `numpy.ndarray`
        Feature matrix, one row per state.
    learnable_offset : `bool`, optional
        True if the intended approximator adds a learnable offset to the
        features (factored-affine family).
    """

    matrix: NDArray
    learnable_offset: bool = False

    def __post_init__(self) -> None:
        matrix = _frozen(self.matrix)
        if matrix.ndim != 2:
            raise ValueError(
                f"Feature matrix must be two dimensional, got {matrix.shape}"
            )
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def one_hot(cls, n_states: int) -> "FeatureMap":
        return cls(np.eye(n_states))

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __call__(self, state: int) -> NDArray:
        return self.matrix[state]


@dataclasses.dataclass(frozen=True)
class Policy:
    """Per-state action distribution.

    Parameters
    ----------
    probabilities : `numpy.ndarray`
        pi[s, a], every row sums to 1.
    """

    probabilities: NDArray

    def __post_init__(self) -> None:
        probabilities = _frozen(self.probabilities)
        if probabilities.ndim != 2:
            raise ValueError(
                f"Policy must have shape (S, A), got {probabilities.shape}"
            )
        if np.any(probabilities < 0) or np.any(
            np.abs(probabilities.sum(axis=1) - 1) > PROBABILITY_TOLERANCE
        ):
            raise ValueError("Policy rows must be probability distributions")
        object.__setattr__(self, "probabilities", probabilities)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: typing.Sequence[int], n_actions: int) -> "Policy":
        probabilities = np.zeros((len(actions), n_actions))
        probabilities[np.arange(len(actions)), actions] = 1.0
        return cls(probabilities)

    @classmethod
    def greedy(cls, q: NDArray) -> "Policy":
        """Greedy policy, ties broken by lowest action index."""
        q = np.asarray(q)
        return cls.deterministic(np.argmax(q, axis=1), q.shape[1])

    def check_mdp(self, mdp: Mdp) -> None:
        if self.probabilities.shape != (mdp.n_states, mdp.n_actions):
            raise ValueError(
                f"Policy shape {self.probabilities.shape} doesn't match MDP "
                f"with {mdp.n_states} states and {mdp.n_actions} actions"
            )


def _policy_dynamics(mdp: Mdp, policy: Policy) -> tuple[NDArray, NDArray]:
    """Return P_pi and R_pi with terminal rows zeroed."""
    policy.check_mdp(mdp)
    p_pi = np.einsum("sa,sat->st", policy.probabilities, mdp.transition)
    r_pi = np.sum(policy.probabilities * mdp.reward, axis=1)
    assert mdp.terminal is not None
    p_pi[mdp.terminal] = 0
    r_pi[mdp.terminal] = 0
    return p_pi, r_pi


def solve_policy_values(mdp: Mdp, policy: Policy) -> NDArray:
    """Exact state values of a policy.

    Solves v = R_pi + gamma P_pi v with a dense linear solver. Terminal
    states have value zero.

    Parameters
    ----------
    mdp : `Mdp`
        Evaluated MDP.
    policy : `Policy`
        Evaluated policy.

    Returns
    -------
    values : `numpy.ndarray`
        Value of every state.

    Raises
    ------
    RuntimeError
        When the linear system is singular.
    """
    p_pi, r_pi = _policy_dynamics(mdp, policy)
    try:
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, r_pi)
    except np.linalg.LinAlgError as e:
        raise RuntimeError(
            f"Singular Bellman system, check discount {mdp.discount}"
        ) from e


def value_iteration(
    mdp: Mdp, tolerance: float = 1e-12, max_iterations: int = 1_000_000
) -> NDArray:
    """Optimal action values by value iteration.

    Parameters
    ----------
    mdp : `Mdp`
        Solved MDP.
    tolerance : `float`, optional
        Stop when no action value changes by more than this.
    max_iterations : `int`, optional
        Iteration limit.

    Returns
    -------
    q : `numpy.ndarray`
        q*[s, a]. Rows of terminal states are zero.

    Raises
    ------
    RuntimeError
        When the tolerance isn't reached within max_iterations.
    """
    assert mdp.terminal is not None
    live = ~mdp.terminal
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iterations):
        v = np.where(live, q.max(axis=1), 0.0)
        new_q = mdp.reward + mdp.discount * mdp.transition @ v
        new_q[mdp.terminal] = 0
        if np.max(np.abs(new_q - q)) < tolerance:
            return new_q
        q = new_q
    raise RuntimeError(f"Value iteration didn't converge in {max_iterations} steps")


def stationary_distribution(mdp: Mdp, policy: Policy) -> NDArray:
    """Stationary state distribution of the Markov chain induced by policy.

    Returns
    -------
    distribution : `numpy.ndarray`
        Non-negative weights summing to 1, d = d P_pi.
    """
    policy.check_mdp(mdp)
    p_pi = np.einsum("sa,sat->st", policy.probabilities, mdp.transition)
    n = mdp.n_states
    system = np.vstack([p_pi.T - np.eye(n), np.ones((1, n))])
    target = np.zeros(n + 1)
    target[-1] = 1
    distribution = np.linalg.lstsq(system, target, rcond=None)[0]
    distribution = np.maximum(distribution, 0)
    return distribution / distribution.sum()


def epsilon_greedy(
    q_values: typing.Sequence[float] | NDArray,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    """Select an action epsilon-greedily.

    Parameters
    ----------
    q_values : `numpy.ndarray`
        Action values of the current state.
    epsilon : `float`
        Probability of a uniformly random action.
    rng : `numpy.random.Generator`
        Run random number generator. Not used when epsilon is 0.

    Returns
    -------
    action : `int`
        Selected action. Greedy choices break ties by lowest index.

    Raises
    ------
    ValueError
        When q_values is empty or epsilon is outside [0, 1].
    """
    q = np.asarray(q_values)
    if q.size == 0:
        raise ValueError("Cannot select an action from empty action values")
    if not 0 <= epsilon <= 1:
        raise ValueError(f"Epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def make_tvr(gamma: float, learnable_u: bool = False) -> tuple[Mdp, FeatureMap]:
    """Two-state counterexample of linear off-policy TD.

    s1 moves to s2, s2 loops on itself, all rewards are zero. The single
    feature is 1 in s1 and 2 in s2.

    Parameters
    ----------
    gamma : `float`
        Discount factor.
    learnable_u : `bool`, optional
        Mark the features for the factored-affine family, v = w (phi + u).

    Returns
    -------
    mdp : `Mdp`
        The MDP, with a single action.
    features : `FeatureMap`
        phi(s1) = 1, phi(s2) = 2.
    """
    transition = np.zeros((2, 1, 2))
    transition[0, 0, 1] = 1
    transition[1, 0, 1] = 1
    mdp = Mdp(transition, np.zeros((2, 1)), gamma)
    return mdp, FeatureMap([[1.0], [2.0]], learnable_offset=learnable_u)


def make_baird(gamma: float) -> tuple[Mdp, FeatureMap]:
    """Seven-state star counterexample.

    Every state moves to the hub (last state) under the single action. Rim
    state i has features 2 e_i + e_7, the hub e_6 + 2 e_7.

    Returns
    -------
    mdp : `Mdp`
        The MDP, with a single action and zero rewards.
    features : `FeatureMap`
        Eight features per state.
    """
    n_states = 7
    transition = np.zeros((n_states, 1, n_states))
    transition[:, 0, n_states - 1] = 1
    features = np.zeros((n_states, 8))
    for state in range(n_states - 1):
        features[state, state] = 2
        features[state, 7] = 1
    features[n_states - 1, 6] = 1
    features[n_states - 1, 7] = 2
    return Mdp(transition, np.zeros((n_states, 1)), gamma), FeatureMap(features)


def make_random_mdp(
    n_states: int, n_actions: int, gamma: float, rng: np.random.Generator
) -> Mdp:
    """Dense random MDP with rewards uniform in [-1, 1]."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1, 1, size=(n_states, n_actions))
    return Mdp(transition, reward, gamma)


class StepResult(typing.NamedTuple):
    next_state: int
    # as defined by the environment, used for episode returns
    reward: float
    # what learners see
    clipped_reward: float
    terminated: bool


class Env(abc.ABC):
    """Episodic environment over a finite state space.

    Environments are immutable: the state is passed in and returned, the
    random number generator belongs to the run.
    """

    n_states: int
    n_actions: int
    gamma: float
    max_episode_steps: int
    feature_map: FeatureMap

    @abc.abstractmethod
    def reset(self, rng: np.random.Generator) -> int:
        """Draw a start state."""
        raise NotImplementedError()

    @abc.abstractmethod
    def step(self, state: int, action: int, rng: np.random.Generator) -> StepResult:
        """Perform action in state."""
        raise NotImplementedError()

    @abc.abstractmethod
    def to_mdp(self) -> Mdp:
        """Return the MDP with clipped expected rewards."""
        raise NotImplementedError()

    def _check(self, state: int, action: int) -> None:
        if not 0 <= state < self.n_states:
            raise ValueError(f"Invalid state {state}")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"Invalid action {action}")


class GridworldEnv(Env):
    """Four-action gridworld with the goal in the bottom-right cell.

    State index is ``y * width + x``. Moving into a wall leaves the agent in
    place. Entering the goal ends the episode and pays goal_reward, any other
    move pays step_reward. Learners see rewards clipped to [-1, 1].

    Parameters
    ----------
    width : `int`
        Number of columns.
    height : `int`
        Number of rows.
    goal_reward : `float`
        Reward for entering the goal.
    step_reward : `float`
        Reward for any other move.
    gamma : `float`
        Discount factor.
    features : `str`, optional
        ``coords``, ``onehot`` or ``both``.
    start : `str`, optional
        ``fixed`` starts at the top-left cell, ``uniform`` in any non-goal
        cell.
    max_episode_steps : `int`, optional
        Time limit.
    """

    n_actions = 4

    def __init__(
        self,
        width: int,
        height: int,
        goal_reward: float,
        step_reward: float,
        gamma: float,
        features: str = "both",
        start: str = "fixed",
        max_episode_steps: int = 100,
    ) -> None:
        if width < 1 or height < 1 or width * height < 2:
            raise ValueError(
                f"Gridworld needs at least two cells, got {width}x{height}"
            )
        if not 0 <= gamma < 1:
            raise ValueError(f"Discount must be in [0, 1), got {gamma}")
        if start not in ("fixed", "uniform"):
            raise ValueError(f"Unknown start distribution {start}")
        if max_episode_steps < 1:
            raise ValueError(f"Invalid max_episode_steps {max_episode_steps}")
        self.width = width
        self.height = height
        self.goal_reward = float(goal_reward)
        self.step_reward = float(step_reward)
        self.gamma = float(gamma)
        self.start = start
        self.max_episode_steps = max_episode_steps
        self.n_states = width * height
        self.goal = self.n_states - 1
        self.feature_map = FeatureMap(self._make_features(features))

    def _make_features(self, mode: str) -> NDArray:
        xs = np.arange(self.n_states) % self.width
        ys = np.arange(self.n_states) // self.width
        coords = np.stack(
            [
                xs / max(self.width - 1, 1),
                ys / max(self.height - 1, 1),
            ],
            axis=1,
        )
        if mode == "coords":
            return coords
        if mode == "onehot":
            return np.eye(self.n_states)
        if mode == "both":
            return np.hstack([coords, np.eye(self.n_states)])
        raise ValueError(f"Unknown feature mode {mode}")

    def move(self, state: int, action: int) -> int:
        x, y = state % self.width, state // self.width
        dx, dy = GRID_MOVES[action]
        x = min(max(x + dx, 0), self.width - 1)
        y = min(max(y + dy, 0), self.height - 1)
        return y * self.width + x

    def reset(self, rng: np.random.Generator) -> int:
        if self.start == "fixed":
            return 0
        return int(rng.integers(self.n_states - 1))

    def step(self, state: int, action: int, rng: np.random.Generator) -> StepResult:
        self._check(state, action)
        if state == self.goal:
            raise ValueError("Cannot step from the terminal goal state")
        next_state = self.move(state, action)
        terminated = next_state == self.goal
        reward = self.goal_reward if terminated else self.step_reward
        return StepResult(next_state, reward, float(clip_reward(reward)), terminated)

    def to_mdp(self) -> Mdp:
        transition = np.zeros((self.n_states, self.n_actions, self.n_states))
        reward = np.zeros((self.n_states, self.n_actions))
        for state in range(self.n_states):
            for action in range(self.n_actions):
                if state == self.goal:
                    transition[state, action, state] = 1
                    continue
                next_state = self.move(state, action)
                transition[state, action, next_state] = 1
                reward[state, action] = clip_reward(
                    self.goal_reward if next_state == self.goal else self.step_reward
                )
        terminal = np.zeros(self.n_states, dtype=bool)
        terminal[self.goal] = True
        return Mdp(transition, reward, self.gamma, terminal)


class TvrEnv(Env):
    """Sampled interaction with the two-state counterexample.

    Episodes are short (one transition by default) and start uniformly, so
    replayed updates weight both states equally instead of following the
    on-policy distribution, which concentrates on s2.

    Parameters
    ----------
    gamma : `float`
        Discount factor.
    start : `str`, optional
        ``fixed`` always starts in s1, ``uniform`` in either state.
    max_episode_steps : `int`, optional
        Time limit.
    termination : `float`, optional
        Probability of the episode ending on every step taken from s2.
    learnable_u : `bool`, optional
        Passed to `make_tvr`.
    """

    n_states = 2
    n_actions = 1

    def __init__(
        self,
        gamma: float,
        start: str = "uniform",
        max_episode_steps: int = 1,
        termination: float = 0.0,
        learnable_u: bool = False,
    ) -> None:
        if start not in ("fixed", "uniform"):
            raise ValueError(f"Unknown start distribution {start}")
        if not 0 <= termination <= 1:
            raise ValueError(f"Termination must be a probability, got {termination}")
        if max_episode_steps < 1:
            raise ValueError(f"Invalid max_episode_steps {max_episode_steps}")
        self.mdp, self.feature_map = make_tvr(gamma, learnable_u)
        self.gamma = self.mdp.discount
        self.start = start
        self.max_episode_steps = max_episode_steps
        self.termination = termination

    def reset(self, rng: np.random.Generator) -> int:
        if self.start == "fixed":
            return 0
        return int(rng.integers(self.n_states))

    def step(self, state: int, action: int, rng: np.random.Generator) -> StepResult:
        self._check(state, action)
        terminated = (
            state == 1 and self.termination > 0 and rng.random() < self.termination
        )
        return StepResult(1, 0.0, 0.0, bool(terminated))

    def to_mdp(self) -> Mdp:
        if self.termination == 0:
            return self.mdp
        # absorbing terminal state appended after s2
        transition = np.zeros((3, 1, 3))
        transition[0, 0, 1] = 1
        transition[1, 0, 1] = 1 - self.termination
        transition[1, 0, 2] = self.termination
        transition[2, 0, 2] = 1
        return Mdp(transition, np.zeros((3, 1)), self.gamma, [False, False, True])


def make_gridworld(
    width: int,
    height: int,
    goal_reward: float,
    step_reward: float,
    gamma: float,
    features: str = "both",
    start: str = "fixed",
    max_episode_steps: int = 100,
) -> GridworldEnv:
    """Construct a `GridworldEnv`, see its documentation."""
    return GridworldEnv(
        width,
        height,
        goal_reward,
        step_reward,
        gamma,
        features=features,
        start=start,
        max_episode_steps=max_episode_steps,
    )
