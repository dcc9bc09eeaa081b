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

__all__ = ["CONFIG_SCHEMA", "EXPERIMENT_SCHEMA", "validate_config"]

import copy
import typing

import jsonschema
import yaml

EXPERIMENT_SCHEMA = yaml.safe_load(
    """
$schema: http://json-schema.org/draft-07/schema#
$id: https://github.com/lsst-ts/ts_triadlab/blob/main/schema/experiment.yaml
# title must end with one or more spaces followed by the schema version, which must begin with "v"
title: TriadLab experiment v1
description: Schema for a single training run.
type: object
properties:
  environment:
    type: object
    default: {}
    properties:
      kind:
        description: Environment family.
        type: string
        enum: [gridworld, tvr]
        default: gridworld
      gamma:
        description: Discount factor.
        type: number
        minimum: 0
        exclusiveMaximum: 1
        default: 0.99
      width:
        description: Gridworld width in cells.
        type: integer
        minimum: 1
        default: 5
      height:
        description: Gridworld height in cells.
        type: integer
        minimum: 1
        default: 5
      goal_reward:
        description: Reward for entering the goal cell, before clipping.
        type: number
        default: 1.0
      step_reward:
        description: Reward for any other move, before clipping.
        type: number
        default: 0.0
      features:
        description: >-
          Gridworld state features. coords - normalized (x, y), onehot - cell
          indicator, both - concatenation.
        type: string
        enum: [coords, onehot, both]
        default: both
      start:
        description: >-
          Start state distribution. fixed - top-left cell (gridworld) or s1
          (tvr), uniform - any non-terminal state.
        type: string
        enum: [fixed, uniform]
        default: fixed
      max_episode_steps:
        description: Episodes are truncated after this number of agent steps.
        type: integer
        minimum: 1
        default: 100
      termination:
        description: TVR only. Probability of the episode ending in s2.
        type: number
        minimum: 0
        maximum: 1
        default: 0.0
    additionalProperties: false
  approximator:
    type: object
    default: {}
    properties:
      family:
        type: string
        enum: [tabular, linear, factored-affine, mlp]
        default: mlp
      capacity:
        description: MLP hidden width (small 64, medium 128, large 256, extra-large 512).
        type: string
        enum: [small, medium, large, extra-large]
        default: small
      hidden_layers:
        description: Number of MLP hidden layers.
        type: integer
        minimum: 1
        default: 2
      initial_value:
        description: >-
          Initial value of every weight of the tabular, linear and
          factored-affine families (the offset u starts at 0). MLPs use a
          random initialization.
        type: number
        default: 0.0
    additionalProperties: false
  bootstrap:
    type: object
    default: {}
    properties:
      kind:
        type: string
        enum: [Q, TargetQ, InverseDoubleQ, DoubleQ]
        default: Q
      n:
        description: Number of rewards before bootstrapping.
        type: integer
        minimum: 1
        default: 1
    additionalProperties: false
  replay:
    type: object
    default: {}
    properties:
      capacity:
        description: Maximum number of stored segments.
        type: integer
        minimum: 1
        default: 50000
      min_fill:
        description: Fraction of capacity stored before sampling starts.
        type: number
        minimum: 0
        maximum: 1
        default: 0.2
      alpha:
        description: Priority exponent. 0 gives uniform replay.
        type: number
        minimum: 0
        default: 0.0
      beta:
        description: Importance sampling exponent. 0 disables the correction.
        type: number
        minimum: 0
        default: 0.0
      normalize_weights:
        description: Divide importance weights by the batch maximum.
        type: boolean
        default: false
      priority_floor:
        description: Added to every absolute TD error.
        type: number
        exclusiveMinimum: 0
        default: 1.0e-6
    additionalProperties: false
  optimizer:
    type: object
    default: {}
    properties:
      kind:
        type: string
        enum: [sgd, adam]
        default: adam
      step:
        type: number
        exclusiveMinimum: 0
        default: 1.0e-4
      beta1:
        type: number
        minimum: 0
        exclusiveMaximum: 1
        default: 0.9
      beta2:
        type: number
        minimum: 0
        exclusiveMaximum: 1
        default: 0.999
      epsilon:
        type: number
        exclusiveMinimum: 0
        default: 1.0e-8
    additionalProperties: false
  epsilon:
    description: Exploration rate of the epsilon-greedy behaviour policy.
    type: number
    minimum: 0
    maximum: 1
    default: 0.01
  batch_size:
    type: integer
    minimum: 1
    default: 32
  learn_every:
    description: Agent steps between minibatch updates.
    type: integer
    minimum: 1
    default: 4
  target_sync_period:
    description: Agent steps between target network copies.
    type: integer
    minimum: 1
    default: 2500
  total_frames:
    description: Number of agent steps of the run.
    type: integer
    minimum: 1
    default: 200000
  interval_frames:
    description: Length of a metrics interval in agent steps.
    type: integer
    minimum: 1
    default: 10000
  seed:
    type: integer
    minimum: 0
    default: 0
additionalProperties: false
"""
)

CONFIG_SCHEMA = yaml.safe_load(
    """
$schema: http://json-schema.org/draft-07/schema#
$id: https://github.com/lsst-ts/ts_triadlab/blob/main/schema/sweep.yaml
# title must end with one or more spaces followed by the schema version, which must begin with "v"
title: TriadLab sweep v1
description: >-
  Schema for sweep configuration files. Each expanded run is validated
  against the experiment schema.
type: object
properties:
  name:
    description: Sweep name, used in log messages and the summary.
    type: string
    default: sweep
  base:
    description: Experiment configuration shared by all runs.
    type: object
    default: {}
  axes:
    description: >-
      Map of dotted experiment keys (e.g. bootstrap.n) to the list of values
      to sweep. The grid is the cross product of all axes. A mapping value
      is merged into the mapping at its key, so one replay axis can pair
      alpha with beta.
    type: object
    default: {}
    additionalProperties:
      type: array
      minItems: 1
  replications:
    description: Number of seeds per grid cell.
    type: integer
    minimum: 1
    default: 3
  environments:
    description: >-
      Environment configurations. Each replaces base.environment; the grid
      is repeated for every entry.
    type: array
    items:
      type: object
required:
  - base
additionalProperties: false
"""
)


def _extend_with_default(
    validator_class: typing.Any,
) -> typing.Any:
    validate_properties = validator_class.VALIDATORS["properties"]

    def set_defaults(
        validator: typing.Any,
        properties: dict[str, typing.Any],
        instance: typing.Any,
        schema: dict[str, typing.Any],
    ) -> typing.Iterator[jsonschema.ValidationError]:
        if isinstance(instance, dict):
            for name, subschema in properties.items():
                if "default" in subschema:
                    instance.setdefault(name, copy.deepcopy(subschema["default"]))
        yield from validate_properties(validator, properties, instance, schema)

    return jsonschema.validators.extend(validator_class, {"properties": set_defaults})


DefaultingValidator = _extend_with_default(jsonschema.Draft7Validator)


def validate_config(
    config: dict[str, typing.Any], schema: dict[str, typing.Any]
) -> dict[str, typing.Any]:
    """Validate configuration and fill in defaults.

    Parameters
    ----------
    config : `dict`
        Configuration as read from a file. Not modified.
    schema : `dict`
        `EXPERIMENT_SCHEMA` or `CONFIG_SCHEMA`.

    Returns
    -------
    config : `dict`
        Validated deep copy with defaults filled in.

    Raises
    ------
    ValueError
        When configuration doesn't match the schema.
    """
    filled = copy.deepcopy(config)
    try:
        DefaultingValidator(schema).validate(filled)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValueError(f"Invalid configuration at {path}: {e.message}") from e
    return filled
