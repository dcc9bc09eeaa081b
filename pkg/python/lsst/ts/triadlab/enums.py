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
    "ErrorCode",
    "BootstrapKind",
    "ApproximatorFamily",
    "Capacity",
    "OptimizerKind",
    "Verdict",
    "Weighting",
]

import enum


class ErrorCode(enum.IntEnum):
    """Process exit codes of the ``run_triadlab`` command.

    SUCCESS - command finished
    VALIDATION_ERROR - bad flags, configuration or input files
    RUNTIME_FAILURE - unexpected failure while computing
    DIVERGENT - ``tvr`` only, the expected-update operator is divergent
    MARGINAL - ``tvr`` only, the expected-update operator is marginal
    """

    SUCCESS = 0
    VALIDATION_ERROR = 1
    RUNTIME_FAILURE = 2
    DIVERGENT = 3
    MARGINAL = 4


class BootstrapKind(str, enum.Enum):
    """Which network selects and which evaluates the bootstrap action."""

    Q = "Q"
    TARGET_Q = "TargetQ"
    INVERSE_DOUBLE_Q = "InverseDoubleQ"
    DOUBLE_Q = "DoubleQ"


class ApproximatorFamily(str, enum.Enum):
    TABULAR = "tabular"
    LINEAR = "linear"
    FACTORED_AFFINE = "factored-affine"
    MLP = "mlp"


class Capacity(str, enum.Enum):
    """Network size ladder. The value of `width` is the number of hidden
    units of each hidden layer."""

    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"
    EXTRA_LARGE = "extra-large"

    @property
    def width(self) -> int:
        return {
            Capacity.SMALL: 64,
            Capacity.MEDIUM: 128,
            Capacity.LARGE: 256,
            Capacity.EXTRA_LARGE: 512,
        }[self]


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class Verdict(str, enum.Enum):
    """Small step-size stability of an expected-update operator."""

    DIVERGENT = "Divergent"
    CONVERGENT = "Convergent"
    MARGINAL = "Marginal"


class Weighting(str, enum.Enum):
    """Named state weightings of the expected update.

    S1_ONLY - only the first state is updated
    EQUAL - every state has weight one
    UNIFORM - every state has weight 1 / n_states
    ON_POLICY - stationary distribution of the evaluated policy
    """

    S1_ONLY = "s1-only"
    EQUAL = "equal"
    UNIFORM = "uniform"
    ON_POLICY = "on-policy"
