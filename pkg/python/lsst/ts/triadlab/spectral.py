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
    "STABILITY_TOLERANCE",
    "ExpectedUpdateOperator",
    "StabilityReport",
    "CatalogueEntry",
    "make_weighting",
    "build_operator",
    "classify_stability",
    "simulate_linear_td",
    "counterexample_catalogue",
]

import dataclasses
import typing

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .enums import Verdict, Weighting
from .mdp import FeatureMap, Mdp, Policy, make_baird, make_tvr, stationary_distribution

"""Eigenvalue real parts within this distance of zero are marginal."""
STABILITY_TOLERANCE = 1e-10


@dataclasses.dataclass(frozen=True)
class ExpectedUpdateOperator:
    """A = Phi^T D (gamma P_pi - I) Phi and its construction inputs.

    The expected linear TD(0) update under state weighting D is
    w <- w + step (A w + b) with b = Phi^T D R_pi.
    """

    matrix: NDArray
    features: NDArray
    weighting: NDArray
    p_pi: NDArray
    r_pi: NDArray
    gamma: float

    @property
    def offset(self) -> NDArray:
        return self.features.T @ (self.weighting * self.r_pi)


class StabilityReport(typing.NamedTuple):
    verdict: Verdict
    eigenvalues: NDArray
    max_real: float
    # spectral radius of I + step A
    spectral_radius: float
    step: float
    diagnostic: str

    def to_dict(self) -> dict[str, typing.Any]:
        return dict(
            verdict=self.verdict.value,
            eigenvalues=[[float(e.real), float(e.imag)] for e in self.eigenvalues],
            max_real=self.max_real,
            spectral_radius=self.spectral_radius,
            step=self.step,
            diagnostic=self.diagnostic,
        )


def make_weighting(
    weighting: Weighting | str | ArrayLike, mdp: Mdp, policy: Policy
) -> NDArray:
    """Per-state weights from a `Weighting` name or explicit values."""
    if isinstance(weighting, (Weighting, str)):
        weighting = Weighting(weighting)
        if weighting == Weighting.S1_ONLY:
            weights = np.zeros(mdp.n_states)
            weights[0] = 1
            return weights
        if weighting == Weighting.EQUAL:
            return np.ones(mdp.n_states)
        if weighting == Weighting.UNIFORM:
            return np.full(mdp.n_states, 1.0 / mdp.n_states)
        return stationary_distribution(mdp, policy)
    return np.asarray(weighting, dtype=float)


def build_operator(
    mdp: Mdp,
    policy: Policy,
    weighting: Weighting | str | ArrayLike,
    features: FeatureMap,
) -> ExpectedUpdateOperator:
    """Expected linear TD update operator under a state weighting.

    Parameters
    ----------
    mdp : `Mdp`
        Problem dynamics.
    policy : `Policy`
        Evaluated policy.
    weighting : `Weighting` or `numpy.ndarray`
        Named weighting or non-negative weight per state.
    features : `FeatureMap`
        Features of the linear value function.

    Returns
    -------
    operator : `ExpectedUpdateOperator`
        The operator. Transitions into terminal states bootstrap to zero.

    Raises
    ------
    ValueError
        When weights are negative, all zero or of the wrong length.
    """
    weights = make_weighting(weighting, mdp, policy)
    if weights.shape != (mdp.n_states,):
        raise ValueError(
            f"Expected {mdp.n_states} state weights, got shape {weights.shape}"
        )
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError(f"Weights must be non-negative and not all zero: {weights}")
    if features.n_states != mdp.n_states:
        raise ValueError(
            f"Feature map has {features.n_states} rows, MDP {mdp.n_states} states"
        )
    policy.check_mdp(mdp)
    p_pi = np.einsum("sa,sat->st", policy.probabilities, mdp.transition)
    r_pi = np.sum(policy.probabilities * mdp.reward, axis=1)
    assert mdp.terminal is not None
    p_pi[mdp.terminal] = 0
    p_pi[:, mdp.terminal] = 0
    r_pi[mdp.terminal] = 0
    phi = features.matrix
    matrix = phi.T @ (
        weights[:, np.newaxis] * ((mdp.discount * p_pi - np.eye(mdp.n_states)) @ phi)
    )
    return ExpectedUpdateOperator(matrix, phi, weights, p_pi, r_pi, mdp.discount)


def classify_stability(
    operator: ExpectedUpdateOperator | NDArray, step: float
) -> StabilityReport:
    """Classify the small-step stability of w <- w + step A w.

    Divergent if an eigenvalue of A has real part above the tolerance;
    convergent if all real parts are below minus the tolerance and the
    spectral radius of I + step A is below one; marginal otherwise.

    Parameters
    ----------
    operator : `ExpectedUpdateOperator` or `numpy.ndarray`
        Operator or its matrix.
    step : `float`
        Step size.

    Returns
    -------
    report : `StabilityReport`
        Verdict with spectral data. Eigen-solver failures give a marginal
        verdict and an explanation in diagnostic.
    """
    if not step > 0:
        raise ValueError(f"Step size must be positive, got {step}")
    matrix = (
        operator.matrix if isinstance(operator, ExpectedUpdateOperator) else operator
    )
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    try:
        if not np.all(np.isfinite(matrix)):
            raise np.linalg.LinAlgError("operator has non-finite entries")
        eigenvalues = np.linalg.eigvals(matrix)
    except np.linalg.LinAlgError as e:
        return StabilityReport(
            Verdict.MARGINAL, np.array([]), float("nan"), float("nan"), step, str(e)
        )
    # sorted for reproducible output
    eigenvalues = np.sort_complex(eigenvalues)
    max_real = float(np.max(eigenvalues.real))
    radius = float(np.max(np.abs(1 + step * eigenvalues)))
    if max_real > STABILITY_TOLERANCE:
        verdict = Verdict.DIVERGENT
        diagnostic = f"eigenvalue with real part {max_real:.6g} > 0"
    elif max_real < -STABILITY_TOLERANCE and radius < 1:
        verdict = Verdict.CONVERGENT
        diagnostic = f"all real parts <= {max_real:.6g}, radius {radius:.6g}"
    else:
        verdict = Verdict.MARGINAL
        diagnostic = (
            f"max real part {max_real:.6g}, radius {radius:.6g} of I + step A"
        )
    return StabilityReport(verdict, eigenvalues, max_real, radius, step, diagnostic)


def simulate_linear_td(
    operator: ExpectedUpdateOperator,
    w0: ArrayLike,
    step: float,
    steps: int,
    sync_period: int | None = None,
) -> NDArray:
    """Iterate the expected linear TD update.

    w <- w + step Phi^T D (R_pi + gamma P_pi Phi w' - Phi w), where w' is
    w itself, or a frozen copy refreshed every sync_period updates.

    Parameters
    ----------
    operator : `ExpectedUpdateOperator`
        Problem inputs.
    w0 : `numpy.ndarray`
        Initial weights.
    step : `float`
        Step size.
    steps : `int`
        Number of updates.
    sync_period : `int`, optional
        Target copy period. None bootstraps on the current weights.

    Returns
    -------
    trajectory : `numpy.ndarray`
        Weights before the first and after every update, shape
        (steps + 1, d).
    """
    phi = operator.features
    weighted_phi_t = phi.T * operator.weighting
    bootstrap = operator.gamma * operator.p_pi @ phi
    offset = operator.offset
    w = np.array(w0, dtype=float, ndmin=1)
    target = w.copy()
    trajectory = np.empty((steps + 1, w.size))
    trajectory[0] = w
    for t in range(steps):
        if sync_period is not None and t % sync_period == 0:
            target = w.copy()
        bootstrap_w = w if sync_period is None else target
        w = w + step * (
            offset + weighted_phi_t @ (bootstrap @ bootstrap_w - phi @ w)
        )
        trajectory[t + 1] = w
    return trajectory


class CatalogueEntry(typing.NamedTuple):
    name: str
    mdp: Mdp
    policy: Policy
    features: FeatureMap
    weighting: NDArray


def counterexample_catalogue() -> list[CatalogueEntry]:
    """Named divergence examples used for verdict checks.

    The two-state example under s1-only, equal and on-policy weighting on
    both sides of its critical discounts, and the seven-state star under
    uniform weighting.
    """
    entries = []
    for gamma in (0.4, 0.8, 0.9, 0.99):
        mdp, features = make_tvr(gamma)
        policy = Policy.uniform(mdp.n_states, mdp.n_actions)
        for weighting in (Weighting.S1_ONLY, Weighting.EQUAL, Weighting.ON_POLICY):
            entries.append(
                CatalogueEntry(
                    f"tvr-{weighting.value}-gamma{gamma}",
                    mdp,
                    policy,
                    features,
                    make_weighting(weighting, mdp, policy),
                )
            )
    for gamma in (0.8, 0.99):
        mdp, features = make_baird(gamma)
        policy = Policy.uniform(mdp.n_states, mdp.n_actions)
        entries.append(
            CatalogueEntry(
                f"baird-uniform-gamma{gamma}",
                mdp,
                policy,
                features,
                make_weighting(Weighting.UNIFORM, mdp, policy),
            )
        )
    return entries
