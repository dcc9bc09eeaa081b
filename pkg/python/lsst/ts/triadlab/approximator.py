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
    "Approximator",
    "TabularApproximator",
    "LinearApproximator",
    "FactoredAffineApproximator",
    "MlpApproximator",
    "OptimizerState",
    "UpdateResult",
    "apply_update",
    "sync_target",
    "make_approximator",
    "save_params",
    "load_params",
]

import abc
import dataclasses
import pathlib
import typing

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .enums import ApproximatorFamily, Capacity, OptimizerKind
from .mdp import FeatureMap


class Approximator(abc.ABC):
    """Action-value function parameterized by a flat vector.

    States are indices into a finite state space. State-value functions are
    action-value functions with a single action.
    """

    n_actions: int
    n_params: int

    def init_params(self, rng: np.random.Generator) -> NDArray:
        """Initial parameters. Zero unless the family needs symmetry
        breaking."""
        return np.zeros(self.n_params)

    @abc.abstractmethod
    def q_values_batch(self, params: NDArray, states: ArrayLike) -> NDArray:
        """Action values of a batch of states.

        Parameters
        ----------
        params : `numpy.ndarray`
            Parameter vector.
        states : `numpy.ndarray`
            State indices, shape (B,).

        Returns
        -------
        q : `numpy.ndarray`
            Shape (B, n_actions).
        """
        raise NotImplementedError()

    @abc.abstractmethod
    def accumulate_gradient(
        self,
        params: NDArray,
        states: ArrayLike,
        actions: ArrayLike,
        coefficients: ArrayLike,
    ) -> NDArray:
        """Weighted sum of value gradients.

        Returns sum_k coefficients[k] * grad q(states[k], actions[k]), with
        the gradient taken with respect to params.
        """
        raise NotImplementedError()

    def check_params(self, params: NDArray) -> None:
        if np.shape(params) != (self.n_params,):
            raise ValueError(
                f"Expected {self.n_params} parameters, got shape {np.shape(params)}"
            )

    def q_values(self, params: NDArray, state: int) -> NDArray:
        return self.q_values_batch(params, np.array([state]))[0]

    def value(self, params: NDArray, state: int, action: int = 0) -> float:
        """Scalar value of state (and action)."""
        return float(self.q_values(params, state)[action])

    def gradient(self, params: NDArray, state: int, action: int = 0) -> NDArray:
        """Gradient of `value` with respect to params."""
        return self.accumulate_gradient(
            params, np.array([state]), np.array([action]), np.array([1.0])
        )


class TabularApproximator(Approximator):
    """One parameter per state-action pair, stored state-major."""

    def __init__(self, n_states: int, n_actions: int) -> None:
        self.n_states = n_states
        self.n_actions = n_actions
        self.n_params = n_states * n_actions

    def q_values_batch(self, params: NDArray, states: ArrayLike) -> NDArray:
        self.check_params(params)
        return params.reshape(self.n_states, self.n_actions)[np.asarray(states)]

    def accumulate_gradient(
        self,
        params: NDArray,
        states: ArrayLike,
        actions: ArrayLike,
        coefficients: ArrayLike,
    ) -> NDArray:
        self.check_params(params)
        grad = np.zeros(self.n_params)
        np.add.at(
            grad,
            np.asarray(states) * self.n_actions + np.asarray(actions),
            np.asarray(coefficients, dtype=float),
        )
        return grad


class LinearApproximator(Approximator):
    """q(s, a) = w_a . phi(s), one weight vector per action."""

    def __init__(self, feature_map: FeatureMap, n_actions: int) -> None:
        self.feature_map = feature_map
        self.n_actions = n_actions
        self.n_params = n_actions * feature_map.dim

    def q_values_batch(self, params: NDArray, states: ArrayLike) -> NDArray:
        self.check_params(params)
        weights = params.reshape(self.n_actions, self.feature_map.dim)
        return self.feature_map.matrix[np.asarray(states)] @ weights.T

    def accumulate_gradient(
        self,
        params: NDArray,
        states: ArrayLike,
        actions: ArrayLike,
        coefficients: ArrayLike,
    ) -> NDArray:
        self.check_params(params)
        grad = np.zeros((self.n_actions, self.feature_map.dim))
        coefficients = np.asarray(coefficients, dtype=float)
        np.add.at(
            grad,
            np.asarray(actions),
            coefficients[:, np.newaxis] * self.feature_map.matrix[np.asarray(states)],
        )
        return grad.ravel()


class FactoredAffineApproximator(Approximator):
    """q(s, a) = w_a . (phi(s) + u) with a shared learnable offset u.

    Parameters are the per-action weights followed by u. For a single
    scalar feature and one action that is [w, u].

    Parameters
    ----------
    feature_map : `FeatureMap`
        State features.
    n_actions : `int`
        Number of actions.
    learn_offset : `bool`, optional
        If False, u receives no gradient and the family reduces to
        `LinearApproximator` shifted by the initial u.
    """

    def __init__(
        self, feature_map: FeatureMap, n_actions: int, learn_offset: bool = True
    ) -> None:
        self.feature_map = feature_map
        self.n_actions = n_actions
        self.learn_offset = learn_offset
        self.n_weights = n_actions * feature_map.dim
        self.n_params = self.n_weights + feature_map.dim

    def make_params(self, w: ArrayLike, u: ArrayLike) -> NDArray:
        """Pack weights (broadcast to every action) and offset."""
        weights = np.broadcast_to(
            np.asarray(w, dtype=float), (self.n_actions, self.feature_map.dim)
        )
        offset = np.broadcast_to(np.asarray(u, dtype=float), (self.feature_map.dim,))
        return np.concatenate([weights.ravel(), offset])

    def split(self, params: NDArray) -> tuple[NDArray, NDArray]:
        """Return weights (n_actions, dim) and offset (dim,) views."""
        self.check_params(params)
        return (
            params[: self.n_weights].reshape(self.n_actions, self.feature_map.dim),
            params[self.n_weights :],
        )

    def q_values_batch(self, params: NDArray, states: ArrayLike) -> NDArray:
        weights, offset = self.split(params)
        return (self.feature_map.matrix[np.asarray(states)] + offset) @ weights.T

    def accumulate_gradient(
        self,
        params: NDArray,
        states: ArrayLike,
        actions: ArrayLike,
        coefficients: ArrayLike,
    ) -> NDArray:
        weights, offset = self.split(params)
        actions = np.asarray(actions)
        coefficients = np.asarray(coefficients, dtype=float)
        grad_weights = np.zeros_like(weights)
        np.add.at(
            grad_weights,
            actions,
            coefficients[:, np.newaxis]
            * (self.feature_map.matrix[np.asarray(states)] + offset),
        )
        if self.learn_offset:
            grad_offset = coefficients @ weights[actions]
        else:
            grad_offset = np.zeros_like(offset)
        return np.concatenate([grad_weights.ravel(), grad_offset])


class MlpApproximator(Approximator):
    """Fully connected network with ReLU hidden layers and a linear head
    with one output per action.

    Parameters
    ----------
    feature_map : `FeatureMap`
        Network inputs.
    n_actions : `int`
        Number of outputs.
    widths : `list` [`int`]
        Hidden layer widths.
    """

    def __init__(
        self, feature_map: FeatureMap, n_actions: int, widths: typing.Sequence[int]
    ) -> None:
        if len(widths) == 0 or min(widths) < 1:
            raise ValueError(f"Invalid hidden widths {widths}")
        self.feature_map = feature_map
        self.n_actions = n_actions
        self.widths = tuple(widths)
        self.sizes = (feature_map.dim, *self.widths, n_actions)
        # (weight offset, bias offset, end) of every layer in the flat vector
        self._layout: list[tuple[int, int, int]] = []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bias = offset + fan_in * fan_out
            self._layout.append((offset, bias, bias + fan_out))
            offset = bias + fan_out
        self.n_params = offset

    def layers(self, params: NDArray) -> list[tuple[NDArray, NDArray]]:
        """Weight matrix (fan_in, fan_out) and bias views of every layer."""
        self.check_params(params)
        ret = []
        for (start, bias, end), fan_in, fan_out in zip(
            self._layout, self.sizes[:-1], self.sizes[1:]
        ):
            ret.append((params[start:bias].reshape(fan_in, fan_out), params[bias:end]))
        return ret

    def init_params(self, rng: np.random.Generator) -> NDArray:
        """Uniform fan-in scaled weights, zero biases.

        Hidden layers use the ReLU gain (limit sqrt(6 / fan_in)), the head
        limit sqrt(3 / fan_in).
        """
        params = np.zeros(self.n_params)
        last = len(self._layout) - 1
        for i, ((start, bias, _), fan_in) in enumerate(
            zip(self._layout, self.sizes[:-1])
        ):
            limit = np.sqrt((3.0 if i == last else 6.0) / fan_in)
            params[start:bias] = rng.uniform(-limit, limit, size=bias - start)
        return params

    def _forward(
        self, params: NDArray, inputs: NDArray
    ) -> tuple[list[NDArray], list[NDArray], NDArray]:
        pre_activations = []
        activations = [inputs]
        layers = self.layers(params)
        hidden = inputs
        for weights, bias in layers[:-1]:
            z = hidden @ weights + bias
            pre_activations.append(z)
            hidden = np.maximum(z, 0.0)
            activations.append(hidden)
        weights, bias = layers[-1]
        return pre_activations, activations, hidden @ weights + bias

    def q_values_batch(self, params: NDArray, states: ArrayLike) -> NDArray:
        return self._forward(params, self.feature_map.matrix[np.asarray(states)])[2]

    def activation_pattern(self, params: NDArray, states: ArrayLike) -> NDArray:
        """ReLU on/off masks of all hidden units, shape (B, sum(widths))."""
        pre_activations = self._forward(
            params, self.feature_map.matrix[np.asarray(states)]
        )[0]
        return np.hstack([z > 0 for z in pre_activations])

    def accumulate_gradient(
        self,
        params: NDArray,
        states: ArrayLike,
        actions: ArrayLike,
        coefficients: ArrayLike,
    ) -> NDArray:
        states = np.asarray(states)
        pre_activations, activations, out = self._forward(
            params, self.feature_map.matrix[states]
        )
        layers = self.layers(params)
        upstream = np.zeros_like(out)
        np.add.at(
            upstream,
            (np.arange(len(states)), np.asarray(actions)),
            np.asarray(coefficients, dtype=float),
        )
        grads: list[NDArray] = []
        for i in range(len(layers) - 1, -1, -1):
            weights, _ = layers[i]
            grads.append(upstream.sum(axis=0))
            grads.append((activations[i].T @ upstream).ravel())
            if i > 0:
                upstream = (upstream @ weights.T) * (pre_activations[i - 1] > 0)
        # collected as bias, weights from the head backwards
        return np.concatenate(grads[::-1])


def make_approximator(
    family: ApproximatorFamily,
    feature_map: FeatureMap,
    n_actions: int,
    capacity: Capacity = Capacity.SMALL,
    hidden_layers: int = 2,
) -> Approximator:
    """Construct an approximator of the given family.

    Parameters
    ----------
    family : `ApproximatorFamily`
        Function class.
    feature_map : `FeatureMap`
        State features. Tabular approximators only use its number of rows.
    n_actions : `int`
        Number of actions.
    capacity : `Capacity`, optional
        Hidden width of MLP layers.
    hidden_layers : `int`, optional
        Number of MLP hidden layers.
    """
    family = ApproximatorFamily(family)
    if family == ApproximatorFamily.TABULAR:
        return TabularApproximator(feature_map.n_states, n_actions)
    if family == ApproximatorFamily.LINEAR:
        return LinearApproximator(feature_map, n_actions)
    if family == ApproximatorFamily.FACTORED_AFFINE:
        return FactoredAffineApproximator(feature_map, n_actions)
    return MlpApproximator(
        feature_map, n_actions, [Capacity(capacity).width] * hidden_layers
    )


@dataclasses.dataclass(frozen=True)
class OptimizerState:
    """Optimizer hyperparameters and accumulators.

    Moments are created on the first Adam update and have the shape of the
    parameters.
    """

    kind: OptimizerKind
    step: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: NDArray | None = None
    second_moment: NDArray | None = None
    count: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if not self.step > 0:
            raise ValueError(f"Step size must be positive, got {self.step}")


class UpdateResult(typing.NamedTuple):
    params: NDArray
    optimizer: OptimizerState
    # False if the direction or the result wasn't finite; nothing was updated
    finite: bool


def apply_update(
    params: NDArray, optimizer: OptimizerState, direction: NDArray
) -> UpdateResult:
    """Move parameters along an ascent direction.

    TD directions (delta times the value gradient) aren't gradients of a
    fixed loss, so they are applied with a plus sign: SGD computes
    params + step * direction, Adam the bias-corrected moment step in the
    same sense.

    Parameters
    ----------
    params : `numpy.ndarray`
        Current parameters. Not modified.
    optimizer : `OptimizerState`
        Current optimizer state. Not modified.
    direction : `numpy.ndarray`
        Update direction, same shape as params.

    Returns
    -------
    result : `UpdateResult`
        New parameters and optimizer state. If the direction or the result
        isn't finite, the inputs are returned unchanged and finite is False.

    Raises
    ------
    ValueError
        When shapes don't agree.
    """
    direction = np.asarray(direction, dtype=float)
    if direction.shape != np.shape(params):
        raise ValueError(
            f"Direction shape {direction.shape} doesn't match parameters "
            f"shape {np.shape(params)}"
        )
    if not np.all(np.isfinite(direction)):
        return UpdateResult(params, optimizer, False)

    if optimizer.kind == OptimizerKind.SGD:
        new_params = params + optimizer.step * direction
        new_optimizer = dataclasses.replace(optimizer, count=optimizer.count + 1)
    else:
        first = (
            np.zeros_like(direction)
            if optimizer.first_moment is None
            else optimizer.first_moment
        )
        second = (
            np.zeros_like(direction)
            if optimizer.second_moment is None
            else optimizer.second_moment
        )
        count = optimizer.count + 1
        first = optimizer.beta1 * first + (1 - optimizer.beta1) * direction
        second = optimizer.beta2 * second + (1 - optimizer.beta2) * direction * direction
        first_hat = first / (1 - optimizer.beta1**count)
        second_hat = second / (1 - optimizer.beta2**count)
        new_params = params + optimizer.step * first_hat / (
            np.sqrt(second_hat) + optimizer.epsilon
        )
        new_optimizer = dataclasses.replace(
            optimizer, first_moment=first, second_moment=second, count=count
        )

    if not np.all(np.isfinite(new_params)):
        return UpdateResult(params, optimizer, False)
    return UpdateResult(new_params, new_optimizer, True)


def sync_target(online_params: NDArray) -> NDArray:
    """Independent copy of the online parameters."""
    return np.array(online_params, dtype=float, copy=True)


def save_params(path: str | pathlib.Path, params: NDArray) -> None:
    """Write parameter snapshot: dimension line, then one value per line."""
    values = np.asarray(params, dtype=float).ravel()
    pathlib.Path(path).write_text(
        f"{values.size}\n" + "".join(f"{value!r}\n" for value in values.tolist())
    )


def load_params(path: str | pathlib.Path) -> NDArray:
    """Read a snapshot written by `save_params`.

    Raises
    ------
    ValueError
        When the number of values doesn't match the header.
    """
    lines = pathlib.Path(path).read_text().split()
    if len(lines) == 0:
        raise ValueError(f"Empty parameter snapshot {path}")
    dimension = int(lines[0])
    values = np.array([float(line) for line in lines[1:]])
    if values.size != dimension:
        raise ValueError(
            f"Snapshot {path} declares {dimension} values but holds {values.size}"
        )
    return values
