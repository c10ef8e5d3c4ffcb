"""
.. See the NOTICE file distributed with this work for additional information
   regarding copyright ownership.
   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at
       http://www.apache.org/licenses/LICENSE-2.0
   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.

KL-budgeted aggregation of expert drift proposals.

The trader reweights a prior over experts lambda by the Gibbs tilt
e^{-theta rho(lambda)} / Z(theta). For an affine family
rho = a_hat + c1 lambda every quantity depends on u = theta c1 only,
up to the offset a_hat.
"""
import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special, stats

from common.exceptions import InvalidInputError, NumericalFailureError, SaturationError
from common.file_model.result_table import ResultTable
from beliefsim.measures1d import DiscreteMeasure1D
from beliefsim.numerics import (
    MAX_DOUBLINGS,
    Bracket,
    brent_root,
    expand_bracket,
    log_kummer_1f1,
    log_sum_exp,
)
from beliefsim.sde_core import (
    STREAM_BROWNIAN,
    STREAM_DRIFT,
    STREAM_INITIAL,
    STREAM_SIGNAL,
    PathBundle,
    TimeGrid,
    euler_maruyama,
    path_generator,
)

logger = logging.getLogger(__name__)

# below this |u| the affine closed forms are replaced by their Taylor series
SERIES_CUTOFF = 1.0e-2
MAX_EXP_ARG = 700.0
THETA_MAX = 1.0e6
THETA_MIN = 1.0e-8
FIXED_POINT_TOL = 1.0e-10
ALPHA_MIN = 1.0e-40
DEFAULT_DISCRETE_POINTS = 10_000

SOLUTION_COLUMNS = ("K", "theta", "alpha", "kl_per_T", "delta_shift", "mean_sup_log_gap")
# gaps are sup_t |S~ - S^|, in log-price (where the collapse bound applies) and in price
PATH_COLUMNS = ("K", "path_index", "sup_log_gap", "sup_price_gap", "collapse_bound", "corr_a_ahat")


class FamilyKind(str, enum.Enum):
    AFFINE_UNIFORM = "affine_uniform"
    AFFINE_BETA = "affine_beta"
    DISCRETE = "discrete"


class BudgetMode(str, enum.Enum):
    CONSTANT_THETA = "constant_theta"
    ALPHA_SWEEP = "alpha_sweep"


@dataclass(frozen=True)
class ExpertFamily:
    """
    Expert drift proposals and the prior over them.

    Affine kinds: rho(lambda) = a_hat + c1 lambda, lambda in [0, 1] under a
    uniform or Beta(a_pi, b_pi) prior. Discrete kind: drift values `rho`
    at expert labels `atoms` with prior weights `prior`.
    """

    kind: FamilyKind = FamilyKind.AFFINE_UNIFORM
    c1: float = 1.0
    a_hat: float = 0.0
    a_pi: float = 1.0
    b_pi: float = 1.0
    atoms: Tuple[float, ...] = ()
    prior: Tuple[float, ...] = ()
    rho: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        if self.kind is FamilyKind.DISCRETE:
            self._check_discrete()
            return
        if not self.c1 > 0:
            raise InvalidInputError("expert family", "c1 must be positive", c1=self.c1)
        if self.kind is FamilyKind.AFFINE_BETA and not (self.a_pi > 0 and self.b_pi > 0):
            raise InvalidInputError("expert family", "Beta parameters must be positive", a_pi=self.a_pi, b_pi=self.b_pi)

    def _check_discrete(self) -> None:
        prior = np.asarray(self.prior, dtype=float)
        if prior.size == 0 or prior.size != len(self.rho) or prior.size != len(self.atoms):
            raise InvalidInputError("expert family", "atoms, prior and rho differ in length")
        if np.any(prior <= 0) or abs(prior.sum() - 1.0) > 1.0e-12:
            raise InvalidInputError("expert family", "prior weights must be positive and sum to 1")
        if np.any(np.diff(np.asarray(self.atoms, dtype=float)) <= 0):
            raise InvalidInputError("expert family", "expert atoms must be strictly increasing")
        if not np.all(np.isfinite(self.rho)):
            raise InvalidInputError("expert family", "drift values must be finite")

    @classmethod
    def uniform(cls, a_hat: float = 0.0, c1: float = 1.0) -> "ExpertFamily":
        return cls(FamilyKind.AFFINE_UNIFORM, c1=c1, a_hat=a_hat)

    @classmethod
    def beta(cls, a_hat: float = 0.0, c1: float = 1.0, a_pi: float = 1.0, b_pi: float = 1.0) -> "ExpertFamily":
        return cls(FamilyKind.AFFINE_BETA, c1=c1, a_hat=a_hat, a_pi=a_pi, b_pi=b_pi)

    @classmethod
    def discrete(
        cls,
        rho: Sequence[float],
        prior: Optional[Sequence[float]] = None,
        atoms: Optional[Sequence[float]] = None,
        a_hat: float = 0.0,
    ) -> "ExpertFamily":
        rho = np.asarray(rho, dtype=float).ravel()
        if prior is None:
            prior = np.full(rho.size, 1.0 / max(rho.size, 1))
        if atoms is None:
            atoms = np.arange(rho.size, dtype=float)
        return cls(
            FamilyKind.DISCRETE,
            a_hat=a_hat,
            atoms=tuple(float(x) for x in atoms),
            prior=tuple(float(p) for p in prior),
            rho=tuple(float(r) for r in rho),
        )

    @property
    def is_affine(self) -> bool:
        return self.kind is not FamilyKind.DISCRETE

    @property
    def rho_values(self) -> np.ndarray:
        return np.asarray(self.rho, dtype=float)

    @property
    def prior_weights(self) -> np.ndarray:
        return np.asarray(self.prior, dtype=float)

    def with_a_hat(self, a_hat: float) -> "ExpertFamily":
        """Same proposals relative to a new filtered drift"""
        if self.is_affine:
            return replace(self, a_hat=a_hat)
        shifted = tuple(float(r) for r in self.rho_values + (a_hat - self.a_hat))
        return replace(self, a_hat=a_hat, rho=shifted)

    def rho_range(self) -> Tuple[float, float]:
        if self.is_affine:
            return self.a_hat, self.a_hat + self.c1
        return float(self.rho_values.min()), float(self.rho_values.max())

    def discretize(self, n_points: int = DEFAULT_DISCRETE_POINTS) -> "ExpertFamily":
        """Mid-point grid on [0, 1]; Beta weights are CDF differences over the cells"""
        if not self.is_affine:
            return self
        edges = np.linspace(0.0, 1.0, n_points + 1)
        lam = 0.5 * (edges[:-1] + edges[1:])
        if self.kind is FamilyKind.AFFINE_UNIFORM:
            prior = np.full(n_points, 1.0 / n_points)
        else:
            prior = np.diff(stats.beta.cdf(edges, self.a_pi, self.b_pi))
            prior = prior / prior.sum()
        return ExpertFamily.discrete(self.a_hat + self.c1 * lam, prior, lam, self.a_hat)


@dataclass(frozen=True)
class TiltSolution:
    theta: float
    psi: float
    kl: float
    alpha: float
    budget_binding: bool
    a_hat: float = 0.0
    gamma: float = 1.0
    per_time: Tuple["TiltSolution", ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.kl < 0 or self.alpha < 0:
            raise InvalidInputError("tilt solution", "kl and alpha must be nonnegative", kl=self.kl, alpha=self.alpha)

    @property
    def delta_shift(self) -> float:
        """psi(theta) - a_hat"""
        return self.psi - self.a_hat


@dataclass(frozen=True)
class FilterModel:
    """Ornstein-Uhlenbeck drift a_t observed through dY = a dt + sqrt(R) dB"""

    kappa_a: float = 2.0
    a_bar: float = 0.08
    sigma_a: float = 0.5
    R: float = 0.0025
    a0_hat: Optional[float] = None
    P0: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.R > 0:
            raise InvalidInputError("filter", "observation noise R must be positive", R=self.R)
        if self.kappa_a < 0 or self.sigma_a < 0:
            raise InvalidInputError("filter", "kappa_a and sigma_a must be nonnegative")
        if self.P0 is not None and self.P0 < 0:
            raise InvalidInputError("filter", "P0 must be nonnegative", P0=self.P0)

    @property
    def stationary_variance(self) -> float:
        if self.kappa_a == 0:
            return 0.0
        return self.sigma_a**2 / (2 * self.kappa_a)

    @property
    def initial_mean(self) -> float:
        return self.a_bar if self.a0_hat is None else self.a0_hat

    @property
    def initial_variance(self) -> float:
        return self.stationary_variance if self.P0 is None else self.P0


# affine-uniform closed forms in u = theta c1


def _uniform_log_mgf(u: float) -> float:
    """log((1 - e^{-u}) / u)"""
    if abs(u) < SERIES_CUTOFF:
        return -u / 2 + u**2 / 24 - u**4 / 2880
    v = abs(u)
    return max(-u, 0.0) + math.log(-math.expm1(-v)) - math.log(v)


def _uniform_mean_fraction(u: float) -> float:
    """1/u - 1/(e^u - 1), the tilted mean of lambda"""
    if abs(u) < SERIES_CUTOFF:
        return 0.5 - u / 12 + u**3 / 720 - u**5 / 30240 + u**7 / 1209600
    if u > MAX_EXP_ARG:
        return 1.0 / u
    return 1.0 / u - 1.0 / math.expm1(u)


def _uniform_var_fraction(u: float) -> float:
    if abs(u) < SERIES_CUTOFF:
        return 1 / 12 - u**2 / 240 + u**4 / 6048 - u**6 / 172800
    v = abs(u)
    return max(1.0 / u**2 - math.exp(-v) / math.expm1(-v) ** 2, 0.0)


def _uniform_kl(u: float) -> float:
    if abs(u) < SERIES_CUTOFF:
        return u**2 / 24 - u**4 / 960 + u**6 / 36288
    return max(-u * _uniform_mean_fraction(u) - _uniform_log_mgf(u), 0.0)


# affine-Beta closed forms in u = -theta c1


def _beta_moments(u: float, a: float, b: float) -> Tuple[float, float, float]:
    """(log 1F1(a; a+b; u), E[lambda], Var[lambda]) under the tilted Beta law"""
    total = a + b
    log_m = log_kummer_1f1(a, total, u)
    mean = a / total * math.exp(log_kummer_1f1(a + 1, total + 1, u) - log_m)
    second = a * (a + 1) / (total * (total + 1)) * math.exp(log_kummer_1f1(a + 2, total + 2, u) - log_m)
    return log_m, mean, max(second - mean**2, 0.0)


def _discrete_tilt(theta: float, family: ExpertFamily) -> Tuple[float, np.ndarray]:
    rho = family.rho_values
    prior = family.prior_weights
    with np.errstate(over="ignore", invalid="ignore"):
        logits = -theta * rho
    log_z = log_sum_exp(logits, np.log(prior))
    if not math.isfinite(log_z):
        raise SaturationError("log_partition", "partition function overflows", theta=theta)
    return log_z, np.exp(logits + np.log(prior) - log_z)


def _affine_u(theta: float, family: ExpertFamily) -> float:
    u = theta * family.c1
    if not math.isfinite(u):
        raise SaturationError("tilt", "theta c1 is not finite", theta=theta)
    return u


def log_partition(theta: float, family: ExpertFamily) -> float:
    """log Z(theta) = log E_prior[e^{-theta rho}]"""
    theta = float(theta)
    if family.kind is FamilyKind.AFFINE_UNIFORM:
        return -theta * family.a_hat + _uniform_log_mgf(_affine_u(theta, family))
    if family.kind is FamilyKind.AFFINE_BETA:
        u = _affine_u(theta, family)
        return -theta * family.a_hat + log_kummer_1f1(family.a_pi, family.a_pi + family.b_pi, -u)
    return _discrete_tilt(theta, family)[0]


def _tilted_shift(theta: float, family: ExpertFamily) -> float:
    """psi(theta) - a_hat, kept away from the cancellation against a_hat for affine kinds"""
    theta = float(theta)
    if family.kind is FamilyKind.AFFINE_UNIFORM:
        return family.c1 * _uniform_mean_fraction(_affine_u(theta, family))
    if family.kind is FamilyKind.AFFINE_BETA:
        _, mean, _ = _beta_moments(-_affine_u(theta, family), family.a_pi, family.b_pi)
        return family.c1 * mean
    weights = _discrete_tilt(theta, family)[1]
    return float(weights @ family.rho_values) - family.a_hat


def tilted_mean(theta: float, family: ExpertFamily) -> float:
    """psi(theta) = -d/dtheta log Z"""
    theta = float(theta)
    if family.is_affine:
        return family.a_hat + _tilted_shift(theta, family)
    weights = _discrete_tilt(theta, family)[1]
    return float(weights @ family.rho_values)


def tilted_variance(theta: float, family: ExpertFamily) -> float:
    theta = float(theta)
    if family.kind is FamilyKind.AFFINE_UNIFORM:
        return family.c1**2 * _uniform_var_fraction(_affine_u(theta, family))
    if family.kind is FamilyKind.AFFINE_BETA:
        _, _, variance = _beta_moments(-_affine_u(theta, family), family.a_pi, family.b_pi)
        return family.c1**2 * variance
    weights = _discrete_tilt(theta, family)[1]
    rho = family.rho_values
    psi = weights @ rho
    return float(max(weights @ (rho - psi) ** 2, 0.0))


def kl_at(theta: float, family: ExpertFamily) -> float:
    """KL(tilted || prior) = -theta psi(theta) - log Z(theta); free of a_hat"""
    theta = float(theta)
    if family.kind is FamilyKind.AFFINE_UNIFORM:
        return _uniform_kl(_affine_u(theta, family))
    if family.kind is FamilyKind.AFFINE_BETA:
        u = -_affine_u(theta, family)
        log_m, mean, _ = _beta_moments(u, family.a_pi, family.b_pi)
        return max(u * mean - log_m, 0.0)
    weights = _discrete_tilt(theta, family)[1]
    return float(max(np.sum(special.rel_entr(weights, family.prior_weights)), 0.0))


def tilted_density(lam, theta: float, family: ExpertFamily) -> np.ndarray:
    """Density of the tilted law of lambda on [0, 1], affine kinds only"""
    if not family.is_affine:
        raise InvalidInputError("tilted density", "only defined for affine families", kind=family.kind.value)
    lam = np.asarray(lam, dtype=float)
    u = _affine_u(float(theta), family)
    inside = (lam >= 0.0) & (lam <= 1.0)
    if family.kind is FamilyKind.AFFINE_UNIFORM:
        log_density = -u * lam - _uniform_log_mgf(u)
        return np.where(inside, np.exp(log_density), 0.0)
    log_m = log_kummer_1f1(family.a_pi, family.a_pi + family.b_pi, -u)
    prior = stats.beta.pdf(lam, family.a_pi, family.b_pi)
    return np.where(inside, prior * np.exp(-u * lam - log_m), 0.0)


def gibbs_weights(theta: float, family: ExpertFamily) -> DiscreteMeasure1D:
    """Tilted weights p_j e^{-theta rho_j} / Z over the expert atoms"""
    if family.is_affine:
        raise InvalidInputError("gibbs weights", "needs a discrete family; use ExpertFamily.discretize")
    weights = _discrete_tilt(float(theta), family)[1]
    return DiscreteMeasure1D(np.asarray(family.atoms, dtype=float), weights / weights.sum())


def solve_fixed_point(
    a_hat: float,
    alpha: float,
    gamma: float,
    family: ExpertFamily,
    theta_max: Optional[float] = THETA_MAX,
    tol: float = FIXED_POINT_TOL,
) -> float:
    """
    Unique root of g(theta) = psi(theta) - a_hat - (alpha/gamma) theta.

    g is strictly decreasing with slope in [-(alpha/gamma + range^2/4), -alpha/gamma],
    so the bracket tolerance below keeps |g| under tol (1 + |a_hat|). When the
    root lies beyond theta_max (a_hat at an end of the proposal range) the
    capped value is returned; theta_max=None solves without a cap.
    """
    if not alpha > 0 or not gamma > 0:
        raise InvalidInputError("fixed point", "alpha and gamma must be positive", alpha=alpha, gamma=gamma)
    slope = alpha / gamma

    def g(theta: float) -> float:
        return _tilted_shift(theta, family) + (family.a_hat - a_hat) - slope * theta

    lo, hi = family.rho_range()
    xtol = tol * (1 + abs(a_hat)) / (slope + (hi - lo) ** 2 / 4)
    start = 1.0 if theta_max is None else min(1.0, theta_max)
    bracket, half_width = expand_bracket(g, start=start, limit=theta_max)
    if bracket is None:
        theta = math.copysign(half_width, g(half_width))
        logger.warning("Tilt parameter capped at %s; the tilted law concentrates at an end of the range", theta)
        return theta
    return brent_root(g, bracket, tol=xtol, rtol=0.0)


def backout_alpha(theta: float, delta_shift: float, gamma: float = 1.0) -> float:
    """alpha with psi(theta) - a_hat = (alpha / gamma) theta"""
    if theta == 0:
        raise InvalidInputError("alpha", "undefined at theta = 0")
    return gamma * delta_shift / theta


def _slack_solution(family: ExpertFamily, gamma: float) -> TiltSolution:
    return TiltSolution(0.0, tilted_mean(0.0, family), 0.0, 0.0, False, family.a_hat, gamma)


def _calibrate_constant(
    budget: float, horizon: float, family: ExpertFamily, gamma: float, theta_min: float
) -> TiltSolution:
    shift_at_zero = _tilted_shift(0.0, family)
    if shift_at_zero == 0.0 or tilted_variance(0.0, family) == 0.0:
        logger.info("Budget K=%s does not bind: the untilted prior already meets the drift line", budget)
        return _slack_solution(family, gamma)
    sign = math.copysign(1.0, shift_at_zero)

    def excess(theta: float) -> float:
        return kl_at(sign * theta, family) * horizon - budget

    theta = 1.0
    if excess(theta) < 0:
        for _ in range(MAX_DOUBLINGS):
            theta *= 2.0
            if excess(theta) >= 0:
                break
        else:
            raise NumericalFailureError("calibrate_budget", "budget exceeds the attainable divergence", K=budget)
        bracket = Bracket.around(excess, theta / 2.0, theta)
    else:
        while theta > theta_min and excess(theta / 2.0) >= 0:
            theta /= 2.0
        if theta <= theta_min:
            logger.warning("Budget K=%s is below the tilt resolution; returning theta=%s", budget, theta_min)
            theta = theta_min
            bracket = None
        else:
            bracket = Bracket.around(excess, theta / 2.0, theta)
    if bracket is not None:
        theta = brent_root(excess, bracket, tol=1.0e-300, rtol=0.0)
    theta *= sign
    psi = tilted_mean(theta, family)
    alpha = backout_alpha(theta, psi - family.a_hat, gamma)
    return TiltSolution(theta, psi, kl_at(theta, family), max(alpha, 0.0), alpha > 0, family.a_hat, gamma)


def _sweep_profile(
    alpha: float, families: Counter, gamma: float
) -> Dict[ExpertFamily, TiltSolution]:
    solutions = {}
    for family in families:
        theta = solve_fixed_point(family.a_hat, alpha, gamma, family, theta_max=None)
        psi = tilted_mean(theta, family)
        solutions[family] = TiltSolution(theta, psi, kl_at(theta, family), alpha, True, family.a_hat, gamma)
    return solutions


def _calibrate_sweep(
    budget: float, horizon: float, families: Sequence[ExpertFamily], gamma: float
) -> TiltSolution:
    """Bisect on log alpha until the time-integrated KL of the per-step fixed points equals K"""
    if len(families) == 0:
        raise InvalidInputError("calibrate_budget", "alpha sweep needs at least one family")
    dt = horizon / len(families)
    # identical steps share one fixed-point solve
    counts = Counter(families)
    if all(_tilted_shift(0.0, family) == 0.0 for family in counts):
        logger.info("Budget K=%s does not bind: every untilted prior already meets its drift line", budget)
        return _sweep_solution(ALPHA_MIN, families, counts, gamma, binding=False)

    def excess(log_alpha: float) -> float:
        profile = _sweep_profile(math.exp(log_alpha), counts, gamma)
        return sum(profile[family].kl * count for family, count in counts.items()) * dt - budget

    log_alpha = 0.0
    step = math.log(2.0)
    direction = 1.0 if excess(log_alpha) > 0 else -1.0
    for _ in range(MAX_DOUBLINGS):
        candidate = max(log_alpha + direction * step, math.log(ALPHA_MIN))
        if (excess(candidate) > 0) != (direction > 0):
            break
        if candidate == math.log(ALPHA_MIN):
            raise NumericalFailureError(
                "calibrate_budget", "budget exceeds the attainable divergence", K=budget, alpha_min=ALPHA_MIN
            )
        log_alpha = candidate
        step *= 2.0
    else:
        raise NumericalFailureError("calibrate_budget", "alpha bracket not found", K=budget)
    lo, hi = sorted((log_alpha, candidate))
    alpha = math.exp(brent_root(excess, Bracket.around(excess, lo, hi), tol=1.0e-14, rtol=1.0e-14))
    return _sweep_solution(alpha, families, counts, gamma, binding=True)


def _sweep_solution(
    alpha: float, families: Sequence[ExpertFamily], counts: Counter, gamma: float, binding: bool
) -> TiltSolution:
    profile = _sweep_profile(alpha, counts, gamma)
    per_time = tuple(profile[family] for family in families)
    if not binding:
        per_time = tuple(replace(solution, alpha=0.0, budget_binding=False) for solution in per_time)

    def average(name: str) -> float:
        return float(np.mean([getattr(solution, name) for solution in per_time]))

    return TiltSolution(
        average("theta"),
        average("psi"),
        average("kl"),
        alpha if binding else 0.0,
        binding,
        average("a_hat"),
        gamma,
        per_time,
    )


def calibrate_budget(
    budget: float,
    horizon: float,
    family: Union[ExpertFamily, Sequence[ExpertFamily]],
    mode: BudgetMode = BudgetMode.CONSTANT_THETA,
    gamma: float = 1.0,
    theta_min: float = THETA_MIN,
) -> TiltSolution:
    """
    Tilt meeting the budget E int_0^T KL dt = K with the constraint binding.

    constant_theta: one time-homogeneous family, KL(theta) T = K solved on
    theta >= 0 (or <= 0 when psi(0) < a_hat), then alpha backed out.
    alpha_sweep: one family per time step; the returned solution holds
    time averages and the per-step solutions in `per_time`.
    """
    if not budget > 0:
        raise InvalidInputError("budget", "K must be positive", K=budget)
    if not horizon > 0 or not gamma > 0:
        raise InvalidInputError("budget", "horizon and gamma must be positive")
    mode = BudgetMode(mode)
    if mode is BudgetMode.CONSTANT_THETA:
        if not isinstance(family, ExpertFamily):
            raise InvalidInputError("budget", "constant_theta mode takes a single family")
        return _calibrate_constant(budget, horizon, family, gamma, theta_min)
    families = [family] if isinstance(family, ExpertFamily) else list(family)
    return _calibrate_sweep(budget, horizon, families, gamma)


def kalman_bucy(obs_increments, model: FilterModel, grid: TimeGrid) -> Tuple[np.ndarray, np.ndarray]:
    """
    Euler recursion of the Kalman-Bucy filter for the drift:

        da_hat = kappa_a (a_bar - a_hat) dt + (P / R)(dY - a_hat dt)
        dP = (-2 kappa_a P + sigma_a^2 - P^2 / R) dt, floored at 0

    `obs_increments` has shape (n_steps, ...). Returns a_hat with shape
    (n_steps + 1, ...) and the deterministic P path of length n_steps + 1.
    """
    obs = np.asarray(obs_increments, dtype=float)
    if obs.shape[0] != grid.n_steps:
        raise InvalidInputError("observations", "length must equal n_steps", length=obs.shape[0])
    dt = grid.dt
    variance = np.empty(grid.n_steps + 1)
    variance[0] = model.initial_variance
    a_hat = np.empty((grid.n_steps + 1,) + obs.shape[1:])
    a_hat[0] = model.initial_mean
    for k in range(grid.n_steps):
        P = variance[k]
        gain = P / model.R
        a_hat[k + 1] = a_hat[k] + model.kappa_a * (model.a_bar - a_hat[k]) * dt + gain * (obs[k] - a_hat[k] * dt)
        riccati = -2 * model.kappa_a * P + model.sigma_a**2 - P**2 / model.R
        variance[k + 1] = max(P + riccati * dt, 0.0)
    return a_hat, variance


@dataclass(frozen=True)
class AggregationConfig:
    c1: float = 0.5
    beta: float = 0.5
    gamma: float = 1.0
    budgets: Tuple[float, ...] = (0.01, 0.5, 5.0, 20.0)
    prior: FamilyKind = FamilyKind.AFFINE_UNIFORM
    a_pi: float = 1.0
    b_pi: float = 1.0
    mode: BudgetMode = BudgetMode.CONSTANT_THETA
    kappa_a: float = 2.0
    a_bar: float = 0.08
    sigma_a: float = 0.5
    R: float = 0.0025
    s0: float = 100.0
    sigma: float = 0.2
    n_paths: int = 30
    grid: TimeGrid = field(default_factory=TimeGrid)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "prior", FamilyKind(self.prior))
        object.__setattr__(self, "mode", BudgetMode(self.mode))
        if self.prior is FamilyKind.DISCRETE:
            raise InvalidInputError("aggregate", "the experiment prior must be affine", prior=self.prior.value)
        if not 0 <= self.beta <= 1:
            raise InvalidInputError("aggregate", "beta must lie in [0, 1]", beta=self.beta)
        if not self.budgets or any(not budget > 0 for budget in self.budgets):
            raise InvalidInputError("aggregate", "budgets must be positive")
        if not self.s0 > 0 or self.sigma < 0:
            raise InvalidInputError("aggregate", "s0 must be positive and sigma nonnegative")
        if self.n_paths < 1:
            raise InvalidInputError("aggregate", "n_paths must be positive", n_paths=self.n_paths)
        FilterModel(self.kappa_a, self.a_bar, self.sigma_a, self.R)

    @property
    def family(self) -> ExpertFamily:
        return ExpertFamily(self.prior, c1=self.c1, a_hat=self.a_bar, a_pi=self.a_pi, b_pi=self.b_pi)

    @property
    def filter_model(self) -> FilterModel:
        return FilterModel(self.kappa_a, self.a_bar, self.sigma_a, self.R)


def calibrate_config(config: AggregationConfig, budget: float) -> TiltSolution:
    horizon = config.grid.horizon
    if config.mode is BudgetMode.CONSTANT_THETA:
        return calibrate_budget(budget, horizon, config.family, config.mode, config.gamma)
    families = [config.family] * config.grid.n_steps
    return calibrate_budget(budget, horizon, families, config.mode, config.gamma)


def _shift_path(solution: TiltSolution, grid: TimeGrid) -> np.ndarray:
    # psi_t - a_hat_t does not depend on a_hat_t for the affine families
    if solution.per_time:
        return np.array([step.delta_shift for step in solution.per_time])
    return np.full(grid.n_steps, solution.delta_shift)


def _column_corr(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    denom = np.sqrt((xc**2).sum(axis=0) * (yc**2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, (xc * yc).sum(axis=0) / denom, 0.0)


def simulate_aggregation_paths(
    config: AggregationConfig,
    solutions: Dict[float, TiltSolution],
    path_indices: Sequence[int],
) -> Dict[float, List[PathBundle]]:
    """
    True, filtered and synthetic prices for every budget on shared noise.

    Filtered and synthetic log-prices are driven by the same innovation
    dW_hat = (dY - a_hat dt) / sqrt(R):

        dX_hat = (a_hat - sigma^2/2) dt + sigma dW_hat
        dX_syn = ((1 - beta) a_hat + beta psi - sigma^2/2) dt + sigma dW_hat
    """
    path_indices = [int(index) for index in path_indices]
    grid = config.grid
    model = config.filter_model
    dt = grid.dt
    n_paths = len(path_indices)

    def draws(stream: int, size) -> np.ndarray:
        return np.stack(
            [path_generator(config.seed, index, stream).standard_normal(size) for index in path_indices],
            axis=-1,
        )

    price_noise = draws(STREAM_BROWNIAN, grid.n_steps) * np.sqrt(dt)
    drift_noise = draws(STREAM_DRIFT, grid.n_steps) * np.sqrt(dt)
    signal_noise = draws(STREAM_SIGNAL, grid.n_steps) * np.sqrt(dt)
    initial = draws(STREAM_INITIAL, 1)[0]

    a0 = model.a_bar + np.sqrt(model.stationary_variance) * initial
    drift = euler_maruyama(
        lambda t, a: model.kappa_a * (model.a_bar - a),
        lambda t, a: model.sigma_a,
        a0,
        drift_noise,
        grid,
    )
    obs = drift[:-1] * dt + np.sqrt(model.R) * signal_noise
    a_hat, _ = kalman_bucy(obs, model, grid)
    innovation = (obs - a_hat[:-1] * dt) / np.sqrt(model.R)
    corr = _column_corr(drift, a_hat)

    half_var = 0.5 * config.sigma**2
    x0 = np.full(n_paths, math.log(config.s0))

    def log_price(drift_path: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return euler_maruyama(
            lambda t, x: drift_path[grid.step_index(t)] - half_var,
            lambda t, x: config.sigma,
            x0,
            noise,
            grid,
        )

    true_log = log_price(drift, price_noise)
    filtered_log = log_price(a_hat, innovation)
    bundles = {}
    for budget, solution in solutions.items():
        shift = _shift_path(solution, grid)
        psi = a_hat[:-1] + shift[:, None]
        synthetic_drift = (1 - config.beta) * a_hat[:-1] + config.beta * psi
        synthetic_log = log_price(synthetic_drift, innovation)
        bound = config.beta * np.sum(np.abs(psi - a_hat[:-1]), axis=0) * dt
        gap = np.max(np.abs(synthetic_log - filtered_log), axis=0)
        price_gap = np.max(np.abs(np.exp(synthetic_log) - np.exp(filtered_log)), axis=0)
        bundles[budget] = [
            PathBundle(
                grid,
                np.exp(true_log[:, column]),
                np.exp(synthetic_log[:, column]),
                filtered_path=np.exp(filtered_log[:, column]),
                seed=config.seed,
                path_index=index,
                info={"model": "aggregate", "K": budget},
                diagnostics={
                    "a": drift[:, column],
                    "a_hat": a_hat[:, column],
                    "psi": psi[:, column],
                    "sup_log_gap": np.array(gap[column]),
                    "sup_price_gap": np.array(price_gap[column]),
                    "collapse_bound": np.array(bound[column]),
                    "corr_a_ahat": np.array(corr[column]),
                },
            )
            for column, index in enumerate(path_indices)
        ]
    return bundles


def simulate_aggregation_triplet(
    config: AggregationConfig, budgets: Optional[Sequence[float]] = None, path_index: int = 0
) -> Dict[float, PathBundle]:
    budgets = config.budgets if budgets is None else tuple(budgets)
    solutions = {budget: calibrate_config(config, budget) for budget in budgets}
    return {budget: paths[0] for budget, paths in simulate_aggregation_paths(config, solutions, [path_index]).items()}


@dataclass
class AggregationResult:
    solutions: ResultTable
    paths: ResultTable
    bundles: Dict[float, List[PathBundle]]

    @property
    def mean_corr(self) -> float:
        """Average over paths of corr(a, a_hat)"""
        first = self.paths.where("K", self.paths.column("K")[0])
        return float(first.column("corr_a_ahat").mean())


def run_budget(config: AggregationConfig, budget: float) -> Tuple[TiltSolution, List[PathBundle]]:
    solution = calibrate_config(config, budget)
    logger.debug("K=%s: theta=%.6g alpha=%.6g delta=%.6g", budget, solution.theta, solution.alpha, solution.delta_shift)
    return solution, simulate_aggregation_paths(config, {budget: solution}, range(config.n_paths))[budget]


def aggregation_experiment(
    config: AggregationConfig, budgets: Optional[Sequence[float]] = None, mapper: Callable = map
) -> AggregationResult:
    """Calibrated tilt and simulated paths per budget; budgets run through `mapper`"""
    budgets = list(config.budgets if budgets is None else budgets)
    outcomes = dict(zip(budgets, mapper(partial(run_budget, config), budgets)))
    path_rows = []
    solution_rows = []
    bundles = {}
    for budget in budgets:
        solution, bundles[budget] = outcomes[budget]
        gaps = []
        for bundle in bundles[budget]:
            diagnostics = bundle.diagnostics
            gaps.append(float(diagnostics["sup_log_gap"]))
            path_rows.append(
                (
                    budget,
                    bundle.path_index,
                    float(diagnostics["sup_log_gap"]),
                    float(diagnostics["sup_price_gap"]),
                    float(diagnostics["collapse_bound"]),
                    float(diagnostics["corr_a_ahat"]),
                )
            )
        solution_rows.append(
            (budget, solution.theta, solution.alpha, solution.kl, solution.delta_shift, float(np.mean(gaps)))
        )
    metadata = {"seed": config.seed}
    return AggregationResult(
        ResultTable.from_records(SOLUTION_COLUMNS, solution_rows, metadata),
        ResultTable.from_records(PATH_COLUMNS, path_rows, metadata),
        bundles,
    )
