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
    "OUTPUT_DIR_ENV",
    "PARALLELISM_ENV",
    "EnvironmentConfig",
    "ApproximatorConfig",
    "ReplayConfig",
    "OptimizerConfig",
    "ExperimentConfig",
    "ExperimentRunner",
    "SweepRun",
    "SweepGrid",
    "TvrTrace",
    "default_output_dir",
    "default_parallelism",
    "load_sweep",
    "run_experiment",
    "run_labels",
    "run_sweep",
    "run_sweep_async",
    "run_tvr",
    "summarize_sweep",
]

import asyncio
import collections
import concurrent.futures
import csv
import dataclasses
import enum
import itertools
import json
import logging
import math
import os
import pathlib
import typing

import numpy as np
import yaml
from numpy.typing import NDArray

from .approximator import (
    Approximator,
    FactoredAffineApproximator,
    LinearApproximator,
    OptimizerState,
    apply_update,
    make_approximator,
    sync_target,
)
from .config_schema import CONFIG_SCHEMA, EXPERIMENT_SCHEMA, validate_config
from .diagnostics import ORDERING_KEYS, RunMetrics, prioritization_label, summarize
from .enums import ApproximatorFamily, Capacity, OptimizerKind, Weighting
from .mdp import Env, Policy, TvrEnv, epsilon_greedy, make_gridworld, make_tvr
from .replay import PrioritizedBuffer
from .spectral import make_weighting
from .targets import (
    BootstrapRule,
    TransitionSegment,
    bootstrap_values,
    n_step_returns,
    stack_segments,
)
from .utils import (
    config_hash,
    dumps_json,
    get_dotted,
    json_safe,
    merge_dotted,
    set_dotted,
)

"""Environment variable overriding the default output directory."""
OUTPUT_DIR_ENV = "TRIADLAB_OUTPUT_DIR"

"""Environment variable overriding the default number of sweep workers."""
PARALLELISM_ENV = "TRIADLAB_PARALLELISM"


def default_output_dir() -> pathlib.Path:
    """Output directory from $TRIADLAB_OUTPUT_DIR, else ``triadlab-output``."""
    return pathlib.Path(os.environ.get(OUTPUT_DIR_ENV, "triadlab-output"))


def default_parallelism() -> int:
    """Worker count from $TRIADLAB_PARALLELISM, else the number of CPUs.

    Raises
    ------
    ValueError
        If the environment variable is not a positive integer.
    """
    text = os.environ.get(PARALLELISM_ENV)
    if text is None:
        return os.cpu_count() or 1
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"{PARALLELISM_ENV}={text!r} is not an integer")
    if value < 1:
        raise ValueError(f"{PARALLELISM_ENV}={value} must be positive")
    return value


@dataclasses.dataclass(frozen=True)
class EnvironmentConfig:
    kind: str = "gridworld"
    gamma: float = 0.99
    width: int = 5
    height: int = 5
    goal_reward: float = 1.0
    step_reward: float = 0.0
    features: str = "both"
    start: str = "fixed"
    max_episode_steps: int = 100
    termination: float = 0.0

    def make_env(self, family: ApproximatorFamily | None = None) -> Env:
        """Construct the environment.

        Parameters
        ----------
        family : `ApproximatorFamily`, optional
            Approximator family the environment features are used with.
        """
        if self.kind == "tvr":
            return TvrEnv(
                self.gamma,
                start=self.start,
                max_episode_steps=self.max_episode_steps,
                termination=self.termination,
                learnable_u=family == ApproximatorFamily.FACTORED_AFFINE,
            )
        return make_gridworld(
            self.width,
            self.height,
            self.goal_reward,
            self.step_reward,
            self.gamma,
            features=self.features,
            start=self.start,
            max_episode_steps=self.max_episode_steps,
        )


@dataclasses.dataclass(frozen=True)
class ApproximatorConfig:
    family: ApproximatorFamily = ApproximatorFamily.MLP
    capacity: Capacity = Capacity.SMALL
    hidden_layers: int = 2
    initial_value: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", ApproximatorFamily(self.family))
        object.__setattr__(self, "capacity", Capacity(self.capacity))

    def make_approximator(self, env: Env) -> Approximator:
        return make_approximator(
            self.family,
            env.feature_map,
            env.n_actions,
            capacity=self.capacity,
            hidden_layers=self.hidden_layers,
        )

    def initial_params(
        self, approximator: Approximator, rng: np.random.Generator
    ) -> NDArray:
        """Initial parameters; see the initial_value schema entry."""
        params = approximator.init_params(rng)
        if isinstance(approximator, FactoredAffineApproximator):
            return approximator.make_params(self.initial_value, 0.0)
        if self.family != ApproximatorFamily.MLP:
            params = np.full_like(params, self.initial_value)
        return params


@dataclasses.dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 50000
    min_fill: float = 0.2
    alpha: float = 0.0
    beta: float = 0.0
    normalize_weights: bool = False
    priority_floor: float = 1e-6

    def make_buffer(self) -> PrioritizedBuffer:
        return PrioritizedBuffer(
            self.capacity,
            self.alpha,
            self.beta,
            min_fill=self.min_fill,
            priority_floor=self.priority_floor,
            normalize_weights=self.normalize_weights,
        )


@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.ADAM
    step: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OptimizerKind(self.kind))

    def make_state(self) -> OptimizerState:
        return OptimizerState(
            self.kind, self.step, self.beta1, self.beta2, self.epsilon
        )


def _plain(value: typing.Any) -> typing.Any:
    """Dataclass fields as JSON values.

    Enums are replaced by their value and integers in float fields by
    floats, so equal configurations serialize (and hash) equally.
    """
    if isinstance(value, enum.Enum):
        return value.value
    if dataclasses.is_dataclass(value):
        ret = {}
        for field in dataclasses.fields(value):
            item = getattr(value, field.name)
            if field.type is float and isinstance(item, int):
                item = float(item)
            ret[field.name] = _plain(item)
        return ret
    return value


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Complete, validated configuration of one training run.

    Build with `from_dict`, which fills defaults from `EXPERIMENT_SCHEMA`.
    """

    environment: EnvironmentConfig = EnvironmentConfig()
    approximator: ApproximatorConfig = ApproximatorConfig()
    bootstrap: BootstrapRule = BootstrapRule("Q")
    replay: ReplayConfig = ReplayConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    epsilon: float = 0.01
    batch_size: int = 32
    learn_every: int = 4
    target_sync_period: int = 2500
    total_frames: int = 200000
    interval_frames: int = 10000
    seed: int = 0

    @classmethod
    def from_dict(cls, config: dict[str, typing.Any]) -> "ExperimentConfig":
        """Validate config and construct.

        Raises
        ------
        ValueError
            If config doesn't match `EXPERIMENT_SCHEMA`.
        """
        filled = validate_config(config, EXPERIMENT_SCHEMA)
        return cls(
            environment=EnvironmentConfig(**filled["environment"]),
            approximator=ApproximatorConfig(**filled["approximator"]),
            bootstrap=BootstrapRule(**filled["bootstrap"]),
            replay=ReplayConfig(**filled["replay"]),
            optimizer=OptimizerConfig(**filled["optimizer"]),
            **{
                key: value
                for key, value in filled.items()
                if key
                not in ("environment", "approximator", "bootstrap", "replay", "optimizer")
            },
        )

    def to_dict(self) -> dict[str, typing.Any]:
        return _plain(self)

    @property
    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    @property
    def run_id(self) -> str:
        return f"{self.config_hash[:12]}-s{self.seed}"


def run_labels(
    config: ExperimentConfig, labels: dict[str, typing.Any] | None = None
) -> dict[str, typing.Any]:
    """Metric labels of a run.

    `ORDERING_KEYS` values, ``approximator.capacity``, ``prioritization``
    (see `prioritization_label`) and labels, which take precedence.
    """
    config_dict = config.to_dict()
    ret = {key: get_dotted(config_dict, key) for key in ORDERING_KEYS}
    ret["approximator.capacity"] = config.approximator.capacity.value
    ret["prioritization"] = prioritization_label(
        config.replay.alpha, config.replay.beta
    )
    ret.update(labels or {})
    return ret


class _Evaluation(typing.NamedTuple):
    states: NDArray
    actions: NDArray
    # action values of every action of states
    q_states: NDArray
    returns: NDArray
    td_errors: NDArray


class ExperimentRunner:
    """DQN-style training loop of one run.

    Every frame: act epsilon-greedily with the online parameters, extend
    the n-step window and push completed segments with their TD error,
    learn every learn_every frames once the replay is warm, then copy the
    online parameters to the target every target_sync_period frames.

    Parameters
    ----------
    config : `ExperimentConfig`
        Run configuration.
    labels : `dict`, optional
        Labels for `RunMetrics`. `ORDERING_KEYS` are always added.
    log : `logging.Logger`, optional
        Logger. If None a new one is created.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        labels: dict[str, typing.Any] | None = None,
        log: logging.Logger | None = None,
    ) -> None:
        self.config = config
        if log is None:
            self.log = logging.getLogger(type(self).__name__)
        else:
            self.log = log.getChild(type(self).__name__)
        self.labels = run_labels(config, labels)

        self.rng = np.random.default_rng(config.seed)
        self.env = config.environment.make_env(config.approximator.family)
        self.approximator = config.approximator.make_approximator(self.env)
        self.rule = config.bootstrap
        self.params = config.approximator.initial_params(self.approximator, self.rng)
        self.target_params = sync_target(self.params)
        self.optimizer = config.optimizer.make_state()
        self.replay = config.replay.make_buffer()
        self.metrics = RunMetrics(
            config.run_id,
            config.config_hash,
            config.interval_frames,
            self.env.gamma,
            labels=self.labels,
            log=self.log,
        )

    def evaluate(self, segments: typing.Sequence[TransitionSegment]) -> _Evaluation:
        """Returns and TD errors of segments with the current parameters."""
        states, actions, rewards, lengths, bootstrap_states, terminated = (
            stack_segments(segments)
        )
        q_states = self.approximator.q_values_batch(self.params, states)
        q_sa = q_states[np.arange(len(segments)), actions]
        # only evaluate the networks the rule reads
        q_online = (
            self.approximator.q_values_batch(self.params, bootstrap_states)
            if self.rule.uses_online
            else None
        )
        q_target = (
            self.approximator.q_values_batch(self.target_params, bootstrap_states)
            if self.rule.uses_target
            else q_online
        )
        bootstrap = bootstrap_values(
            self.rule.kind, q_target if q_online is None else q_online, q_target
        )
        returns = n_step_returns(
            rewards, lengths, terminated, bootstrap, self.env.gamma
        )
        return _Evaluation(states, actions, q_states, returns, returns - q_sa)

    def _push(self, segments: list[TransitionSegment]) -> None:
        if not segments:
            return
        td_errors = self.evaluate(segments).td_errors
        for segment, td_error in zip(segments, td_errors.tolist()):
            self.replay.push(segment, td_error)

    def _learn(self) -> tuple[NDArray, float, bool]:
        """Make one update from a replayed batch.

        Returns
        -------
        q_states : `numpy.ndarray`
            Action values of the batch states before the update.
        loss : `float`
            Importance weighted squared TD error over two.
        finite : `bool`
            False if the update or the values weren't finite.
        """
        batch_size = self.config.batch_size
        sample = self.replay.sample(batch_size, self.rng)
        evaluation = self.evaluate(sample.segments)
        deltas = evaluation.td_errors
        loss = float(np.mean(sample.weights * deltas**2) / 2)
        direction = self.approximator.accumulate_gradient(
            self.params,
            evaluation.states,
            evaluation.actions,
            sample.weights * deltas / batch_size,
        )
        result = apply_update(self.params, self.optimizer, direction)
        finite = (
            result.finite
            and math.isfinite(loss)
            and bool(np.all(np.isfinite(evaluation.q_states)))
        )
        if finite:
            self.params = result.params
            self.optimizer = result.optimizer
            self.replay.update_priorities(sample.ids, deltas)
        return evaluation.q_states, loss, finite

    def run(self) -> RunMetrics:
        """Train for total_frames frames.

        Returns
        -------
        metrics : `RunMetrics`
            Interval metrics. A hard divergence stops the run and marks all
            remaining intervals as diverged.
        """
        config = self.config
        env = self.env
        n = self.rule.n
        self.log.info(
            f"Run {config.run_id} starting: config hash {config.config_hash}, "
            f"{config.total_frames} frames"
        )
        warm = False
        state = env.reset(self.rng)
        episode_steps = 0
        episode_return = 0.0
        # (state, action, clipped reward) of the last n steps
        window: collections.deque[tuple[int, int, float]] = collections.deque()

        for frame in range(1, config.total_frames + 1):
            q = self.approximator.q_values(self.params, state)
            action = epsilon_greedy(q, config.epsilon, self.rng)
            step = env.step(state, action, self.rng)
            episode_steps += 1
            episode_return += step.reward
            window.append((state, action, step.clipped_reward))
            truncated = not step.terminated and episode_steps >= env.max_episode_steps

            segments = []
            if len(window) == n:
                segments.append(self._segment(window, step.next_state, step.terminated))
                window.popleft()
            episode_returns = []
            if step.terminated or truncated:
                while window:
                    segments.append(
                        self._segment(window, step.next_state, step.terminated)
                    )
                    window.popleft()
                episode_returns.append(episode_return)
                state = env.reset(self.rng)
                episode_steps = 0
                episode_return = 0.0
            else:
                state = step.next_state
            self._push(segments)

            q_states = None
            loss = None
            if frame % config.learn_every == 0 and self.replay.can_sample():
                if not warm:
                    warm = True
                    self.log.info(
                        f"Run {config.run_id} replay warm at frame {frame} "
                        f"with {len(self.replay)} segments"
                    )
                q_states, loss, finite = self._learn()
                if not finite:
                    self.metrics.record(frame, q_states, episode_returns, loss)
                    self.metrics.terminate(frame, config.total_frames)
                    self.log.error(
                        f"Run {config.run_id} stopped by hard divergence at frame "
                        f"{frame}"
                    )
                    return self.metrics

            if frame % config.target_sync_period == 0:
                self.target_params = sync_target(self.params)

            interval_end = (
                frame % config.interval_frames == 0 or frame == config.total_frames
            )
            self.metrics.record(
                frame,
                q_states,
                episode_returns,
                loss,
                self.replay.statistics() if interval_end else None,
            )

        self.metrics.finish(config.total_frames)
        self.log.info(
            f"Run {config.run_id} finished: soft divergence "
            f"{self.metrics.soft_diverged}, mean return "
            f"{self.metrics.mean_return():.4g}"
        )
        return self.metrics

    @staticmethod
    def _segment(
        window: collections.deque[tuple[int, int, float]],
        bootstrap_state: int,
        terminated: bool,
    ) -> TransitionSegment:
        state, action, _ = window[0]
        return TransitionSegment(
            state,
            action,
            tuple(reward for _, _, reward in window),
            bootstrap_state,
            terminated,
        )


def run_experiment(
    config: ExperimentConfig | dict[str, typing.Any],
    labels: dict[str, typing.Any] | None = None,
    log: logging.Logger | None = None,
) -> RunMetrics:
    """Run one experiment.

    Parameters
    ----------
    config : `ExperimentConfig` or `dict`
        Configuration; a dict is validated first.
    labels : `dict`, optional
        Extra metric labels.
    log : `logging.Logger`, optional
        Logger.

    Returns
    -------
    metrics : `RunMetrics`
        Finished run metrics. Runs are deterministic given the seed.

    Raises
    ------
    ValueError
        If the configuration is invalid.
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    return ExperimentRunner(config, labels=labels, log=log).run()


class TvrTrace(typing.NamedTuple):
    """Parameters and state values before the first and after every
    expected update."""

    update: NDArray
    w: NDArray
    u: NDArray
    v1: NDArray
    v2: NDArray

    def to_csv(self, path: str | pathlib.Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self._fields)
            for row in zip(*(column.tolist() for column in self)):
                writer.writerow(row)


def run_tvr(
    gamma: float,
    weighting: Weighting | str,
    family: ApproximatorFamily | str,
    step: float,
    updates: int,
    w0: float = 1.0,
    u0: float = 0.0,
    sync_period: int | None = None,
    log: logging.Logger | None = None,
) -> TvrTrace:
    """Expected SGD updates on the two-state counterexample.

    Each update moves the parameters along sum_s d(s) delta(s) grad v(s),
    with delta(s) = r(s) + gamma v'(next(s)) - v(s), where v' is v itself
    or a copy refreshed every sync_period updates.

    Parameters
    ----------
    gamma : `float`
        Discount factor.
    weighting : `Weighting`
        State weighting d, e.g. s1-only or equal.
    family : `ApproximatorFamily`
        ``linear`` (v = w phi) or ``factored-affine`` (v = w (phi + u)).
    step : `float`
        SGD step size.
    updates : `int`
        Number of expected updates.
    w0, u0 : `float`, optional
        Initial parameters. u0 is ignored by the linear family.
    sync_period : `int`, optional
        Target copy period; None bootstraps on the current parameters.
    log : `logging.Logger`, optional
        Logger.

    Returns
    -------
    trace : `TvrTrace`
        The trajectory. It ends early, at the last finite parameters, if
        an update overflows.

    Raises
    ------
    ValueError
        If gamma, step or family are invalid.
    """
    log = log or logging.getLogger("run_tvr")
    family = ApproximatorFamily(family)
    if updates < 0:
        raise ValueError(f"Number of updates must be non-negative, got {updates}")
    mdp, features = make_tvr(gamma)
    policy = Policy.uniform(mdp.n_states, mdp.n_actions)
    weights = make_weighting(weighting, mdp, policy)
    approximator: Approximator
    if family == ApproximatorFamily.LINEAR:
        approximator = LinearApproximator(features, 1)
        params = np.array([w0], dtype=float)
    elif family == ApproximatorFamily.FACTORED_AFFINE:
        affine = FactoredAffineApproximator(features, 1)
        approximator = affine
        params = affine.make_params(w0, u0)
    else:
        raise ValueError(f"Family must be linear or factored-affine, got {family}")
    optimizer = OptimizerState(OptimizerKind.SGD, step)

    states = np.arange(mdp.n_states)
    actions = np.zeros(mdp.n_states, dtype=int)
    transition = mdp.transition[:, 0, :]
    reward = mdp.reward[:, 0]
    target = sync_target(params)
    history = [params]
    for t in range(updates):
        if sync_period is not None and t % sync_period == 0:
            target = sync_target(params)
        bootstrap_params = params if sync_period is None else target
        values = approximator.q_values_batch(params, states)[:, 0]
        next_values = approximator.q_values_batch(bootstrap_params, states)[:, 0]
        deltas = reward + gamma * transition @ next_values - values
        direction = approximator.accumulate_gradient(
            params, states, actions, weights * deltas
        )
        result = apply_update(params, optimizer, direction)
        if not result.finite:
            log.warning(f"Update {t + 1} overflowed; trace stops at update {t}")
            break
        params, optimizer = result.params, result.optimizer
        history.append(params)

    trajectory = np.array(history)
    w = trajectory[:, 0]
    u = (
        trajectory[:, 1]
        if family == ApproximatorFamily.FACTORED_AFFINE
        else np.zeros_like(w)
    )
    return TvrTrace(
        update=np.arange(len(history)),
        w=w,
        u=u,
        v1=w * (features.matrix[0, 0] + u),
        v2=w * (features.matrix[1, 0] + u),
    )


class SweepRun(typing.NamedTuple):
    config: ExperimentConfig
    labels: dict[str, typing.Any]


def _environment_label(environment: dict[str, typing.Any]) -> str:
    return ",".join(f"{key}={environment[key]}" for key in sorted(environment))


@dataclasses.dataclass(frozen=True)
class SweepGrid:
    """Cross product of experiment axes, replicated over seeds.

    Parameters
    ----------
    name : `str`
        Sweep name.
    base : `dict`
        Experiment configuration shared by every run.
    axes : `dict` [`str`, `list`]
        Dotted experiment keys and their values. A mapping value is merged
        into the mapping at its key and labels each of its entries, so
        ``{"replay": [{"alpha": 2.0, "beta": 0.4}, ...]}`` sweeps alpha and
        beta jointly.
    replications : `int`, optional
        Seeds per cell: base seed, base seed + 1, ...
    environments : `list` [`dict`], optional
        Environment configurations replacing base["environment"]; the grid
        is repeated for each.
    """

    name: str
    base: dict[str, typing.Any]
    axes: dict[str, list[typing.Any]]
    replications: int = 3
    environments: list[dict[str, typing.Any]] | None = None

    @classmethod
    def from_dict(cls, config: dict[str, typing.Any]) -> "SweepGrid":
        """Validate a sweep configuration.

        Every expanded run is validated too, so a bad axis value is
        rejected before anything runs.

        Raises
        ------
        ValueError
            If the sweep or any expanded run is invalid.
        """
        filled = validate_config(config, CONFIG_SCHEMA)
        grid = cls(
            name=filled["name"],
            base=filled["base"],
            axes=filled["axes"],
            replications=filled["replications"],
            environments=filled.get("environments"),
        )
        grid.expand()
        return grid

    @classmethod
    def from_file(cls, path: str | pathlib.Path) -> "SweepGrid":
        """Read a JSON (or YAML) sweep configuration file."""
        with open(path) as f:
            config = yaml.safe_load(f)
        if not isinstance(config, dict):
            raise ValueError(f"{path} does not hold a mapping")
        return cls.from_dict(config)

    @property
    def size(self) -> int:
        """Number of runs."""
        cells = math.prod(len(values) for values in self.axes.values())
        return cells * self.replications * max(1, len(self.environments or ()))

    def expand(self) -> list[SweepRun]:
        """Configurations and labels of every run, in a fixed order."""
        keys = sorted(self.axes)
        base_seed = self.base.get("seed", 0)
        environments: list[dict[str, typing.Any] | None] = (
            list(self.environments) if self.environments else [None]
        )
        runs = []
        for environment in environments:
            for values in itertools.product(*(self.axes[key] for key in keys)):
                cell = dict(self.base)
                labels: dict[str, typing.Any] = {}
                if environment is not None:
                    cell = set_dotted(cell, "environment", environment)
                    labels["environment"] = _environment_label(environment)
                for key, value in zip(keys, values):
                    if isinstance(value, dict):
                        cell = merge_dotted(cell, key, value)
                        labels.update(
                            (f"{key}.{name}", value[name]) for name in sorted(value)
                        )
                    else:
                        cell = set_dotted(cell, key, value)
                        labels[key] = value
                for replication in range(self.replications):
                    cell = set_dotted(cell, "seed", base_seed + replication)
                    runs.append(SweepRun(ExperimentConfig.from_dict(cell), labels))
        return runs


def _manifest_entry(
    config: ExperimentConfig, labels: dict[str, typing.Any]
) -> dict[str, typing.Any]:
    return dict(
        run_id=config.run_id,
        config_hash=config.config_hash,
        seed=config.seed,
        gamma=config.environment.gamma,
        labels=run_labels(config, labels),
    )


def _execute_run(
    config: dict[str, typing.Any], labels: dict[str, typing.Any], runs_dir: str
) -> dict[str, typing.Any]:
    """Run one experiment in a worker and write its CSV file.

    Returns the manifest entry of the run; failures are reported in it.
    """
    experiment = ExperimentConfig.from_dict(config)
    log = logging.getLogger("sweep")
    entry = _manifest_entry(experiment, labels)
    try:
        metrics = run_experiment(experiment, labels=labels, log=log)
        path = pathlib.Path(runs_dir) / f"{experiment.run_id}.csv"
        metrics.to_csv(path)
    except Exception as e:
        log.exception(f"Run {experiment.run_id} failed")
        entry.update(status="failed", error=repr(e))
    else:
        entry.update(
            status="ok",
            csv=f"runs/{path.name}",
            soft_div=metrics.soft_diverged,
            hard_div=metrics.hard_diverged,
        )
    return entry


def _write_json(path: pathlib.Path, value: typing.Any) -> None:
    path.write_text(dumps_json(value))


async def run_sweep_async(
    grid: SweepGrid,
    output_dir: str | pathlib.Path,
    parallelism: int | None = None,
    log: logging.Logger | None = None,
) -> dict[str, typing.Any]:
    """Run every configuration of a sweep and summarize.

    Runs are independent and execute in a process pool (a single worker
    thread if parallelism is 1). Failed runs are recorded in the manifest
    and left out of the summary.

    Writes ``runs/<run_id>.csv``, ``manifest.json`` and ``summary.json``
    under output_dir.

    Parameters
    ----------
    grid : `SweepGrid`
        Sweep to run.
    output_dir : `str` or `pathlib.Path`
        Output directory, created if needed.
    parallelism : `int`, optional
        Number of workers; defaults to `default_parallelism`.
    log : `logging.Logger`, optional
        Logger.

    Returns
    -------
    summary : `dict`
        The summary written to ``summary.json``.
    """
    log = log or logging.getLogger("sweep")
    if parallelism is None:
        parallelism = default_parallelism()
    if parallelism < 1:
        raise ValueError(f"Parallelism must be positive, got {parallelism}")
    output_dir = pathlib.Path(output_dir)
    runs_dir = output_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)

    runs = grid.expand()
    log.info(
        f"Sweep {grid.name}: {len(runs)} runs on {parallelism} worker(s) "
        f"into {output_dir}"
    )
    executor: concurrent.futures.Executor
    if parallelism == 1:
        executor = concurrent.futures.ThreadPoolExecutor(max_workers=1)
    else:
        executor = concurrent.futures.ProcessPoolExecutor(max_workers=parallelism)
    loop = asyncio.get_running_loop()
    with executor:
        results = await asyncio.gather(
            *(
                loop.run_in_executor(
                    executor,
                    _execute_run,
                    run.config.to_dict(),
                    run.labels,
                    str(runs_dir),
                )
                for run in runs
            ),
            return_exceptions=True,
        )

    entries = []
    for run, result in zip(runs, results):
        if isinstance(result, BaseException):
            log.error(f"Run {run.config.run_id} failed in its worker: {result!r}")
            entry = _manifest_entry(run.config, run.labels)
            entry.update(status="failed", error=repr(result))
            entries.append(entry)
        else:
            log.info(f"Run {result['run_id']} {result['status']}")
            entries.append(result)
    entries.sort(key=lambda entry: entry["run_id"])
    _write_json(
        output_dir / "manifest.json",
        dict(name=grid.name, size=grid.size, runs=entries),
    )

    return summarize_sweep(output_dir, require_runs=False, log=log)


def run_sweep(
    grid: SweepGrid,
    output_dir: str | pathlib.Path,
    parallelism: int | None = None,
    log: logging.Logger | None = None,
) -> dict[str, typing.Any]:
    """Synchronous wrapper of `run_sweep_async`."""
    return asyncio.run(run_sweep_async(grid, output_dir, parallelism, log))


def load_sweep(
    directory: str | pathlib.Path,
    require_runs: bool = True,
    log: logging.Logger | None = None,
) -> tuple[dict[str, typing.Any], list[RunMetrics]]:
    """Read the manifest and the metrics of the successful runs of a sweep.

    Raises
    ------
    ValueError
        If the manifest is missing, or no run succeeded and require_runs
        is True.
    """
    directory = pathlib.Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise ValueError(f"No sweep manifest in {directory}")
    manifest = json.loads(manifest_path.read_text())
    metrics = [
        RunMetrics.from_csv(
            directory / entry["csv"], entry["gamma"], labels=entry["labels"], log=log
        )
        for entry in manifest.get("runs", [])
        if entry.get("status") == "ok"
    ]
    if require_runs and not metrics:
        raise ValueError(f"Sweep in {directory} holds no successful run")
    return manifest, metrics


def summarize_sweep(
    directory: str | pathlib.Path,
    require_runs: bool = True,
    log: logging.Logger | None = None,
) -> dict[str, typing.Any]:
    """Summarize a sweep directory and write its ``summary.json``.

    Parameters
    ----------
    directory : `str` or `pathlib.Path`
        Directory written by `run_sweep`.
    require_runs : `bool`, optional
        Raise if no run succeeded; otherwise write a summary without
        statistics.
    log : `logging.Logger`, optional
        Logger.

    Returns
    -------
    summary : `dict`
        Output of `summarize` plus the sweep name and failed run ids,
        with non-finite floats as strings (see `json_safe`).

    Raises
    ------
    ValueError
        If the directory holds no manifest, or no successful run and
        require_runs is True.
    """
    log = log or logging.getLogger("sweep")
    directory = pathlib.Path(directory)
    manifest, metrics = load_sweep(directory, require_runs=require_runs, log=log)
    summary: dict[str, typing.Any] = dict(
        name=manifest.get("name", directory.name),
        failed_runs=[
            entry["run_id"]
            for entry in manifest.get("runs", [])
            if entry.get("status") != "ok"
        ],
    )
    if metrics:
        summary.update(summarize(metrics, log=log))
    else:
        log.error(f"Sweep {summary['name']}: every run failed")
        summary["n_runs"] = 0
    summary = json_safe(summary)
    _write_json(directory / "summary.json", summary)
    return summary
