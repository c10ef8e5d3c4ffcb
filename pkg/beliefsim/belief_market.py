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

Market price driven by the W2 barycenter of the traders' beliefs.

Each trader sees the true log-price through Gaussian noise of variance
tau_i^2 / n. The market belief is the comonotone barycenter of the
lognormal posteriors and enters the drift and volatility only through its
mean m1 and standard deviation s.
"""
import enum
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, List, Sequence, Tuple

import numpy as np

from common.exceptions import InvalidInputError
from common.file_model.result_table import ResultTable
from beliefsim.measures1d import (
    DiscreteMeasure1D,
    LognormalLaw,
    QuantileMixture,
    gaussian_conjugate_posterior,
    lognormal_mixture_moments,
    w2_barycenter_1d,
    w2_discrete,
)
from beliefsim.numerics import loglog_slope
from beliefsim.sde_core import (
    EPS_POS,
    STREAM_OBSERVATION,
    PathBundle,
    TimeGrid,
    euler_maruyama,
    path_generator,
    simulate_gbm,
    stack_brownian,
)

logger = logging.getLogger(__name__)

PATH_COLUMNS = ("n", "path_index", "sup_sq_error", "mean_W2_sq")
SUMMARY_COLUMNS = ("n", "L2_sup_error", "std_error", "int_W2_sq")


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    MEAN_REVERT = "mean_revert"
    CV_VOL = "cv_vol"
    COMBINED = "combined"
    RATIO_DRIFT = "ratio_drift"
    PENALIZED_DRIFT = "penalized_drift"
    QUADRATIC_VOL = "quadratic_vol"


@dataclass(frozen=True)
class TraderConfig:
    tau: float
    weight: float

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise InvalidInputError("trader", "tau must be positive", tau=self.tau)
        if not self.weight > 0:
            raise InvalidInputError("trader", "weight must be positive", weight=self.weight)


@dataclass(frozen=True)
class CoefficientFamily:
    """
    Measure-dependent drift/volatility. Every variant reduces to
    (mu_star x, sigma_star x) when the belief is the Dirac at x.
    """

    variant: Variant = Variant.BASELINE
    mu_star: float = 0.08
    sigma_star: float = 0.6
    kappa: float = 1.0
    kappa_d: float = 0.35
    kappa_v: float = 2.75
    lam: float = 1.0
    eps: float = 1.0e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("sigma_star", "kappa", "kappa_d", "kappa_v", "lam", "eps"):
            if getattr(self, name) < 0:
                raise InvalidInputError("coefficient family", "parameters must be nonnegative", parameter=name)


@dataclass(frozen=True)
class MarketConfig:
    s0: float = 100.0
    mu_star: float = 0.08
    sigma_star: float = 0.6
    taus: Tuple[float, ...] = (2.0, 1.2, 2.5, 1.5)
    weights: Tuple[float, ...] = (0.4, 0.3, 0.2, 0.1)
    variant: Variant = Variant.BASELINE
    kappa: float = 1.0
    kappa_d: float = 0.35
    kappa_v: float = 2.75
    lam: float = 1.0
    eps: float = 1.0e-8
    info_levels: Tuple[float, ...] = (1, 10, 100, 1000)
    n_paths: int = 30
    grid: TimeGrid = field(default_factory=TimeGrid)
    seed: int = 0
    eps_pos: float = EPS_POS

    def __post_init__(self) -> None:
        if len(self.taus) != len(self.weights) or not self.taus:
            raise InvalidInputError("market", "taus and weights differ in length")
        weights = np.asarray(self.weights, dtype=float)
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1.0e-12:
            raise InvalidInputError("market", "trader weights must be positive and sum to 1")
        levels = np.asarray(self.info_levels, dtype=float)
        if np.any(levels < 1) or np.any(np.diff(levels) <= 0):
            raise InvalidInputError("market", "info_levels must be >= 1 and strictly increasing")
        if not self.s0 > 0:
            raise InvalidInputError("market", "s0 must be positive", s0=self.s0)
        if self.n_paths < 1:
            raise InvalidInputError("market", "n_paths must be positive", n_paths=self.n_paths)

    @property
    def traders(self) -> Tuple[TraderConfig, ...]:
        return tuple(TraderConfig(tau, weight) for tau, weight in zip(self.taus, self.weights))

    @property
    def family(self) -> CoefficientFamily:
        return CoefficientFamily(
            self.variant,
            self.mu_star,
            self.sigma_star,
            self.kappa,
            self.kappa_d,
            self.kappa_v,
            self.lam,
            self.eps,
        )


def model_prior(t, s0: float, mu_star: float, sigma_star: float):
    """Marginal law N(mean, var) of log S_t under the true GBM"""
    t = np.asarray(t, dtype=float)
    return np.log(s0) + (mu_star - 0.5 * sigma_star**2) * t, sigma_star**2 * t


def trader_posterior(
    log_price_true: float,
    n: float,
    trader: TraderConfig,
    prior: Tuple[float, float],
    rng: np.random.Generator,
) -> LognormalLaw:
    """
    Draw Y = X + eps with eps ~ N(0, tau^2/n) and return the lognormal
    posterior of the price given Y
    """
    if n < 1:
        raise InvalidInputError("info level", "n must be at least 1", n=n)
    obs_var = trader.tau**2 / n
    observation = log_price_true + np.sqrt(obs_var) * rng.standard_normal()
    post_mean, post_var = gaussian_conjugate_posterior(prior[0], prior[1], observation, obs_var)
    return LognormalLaw(post_mean, float(np.sqrt(post_var)))


def market_beliefs(posteriors: Sequence[LognormalLaw], weights: Sequence[float]) -> QuantileMixture:
    return QuantileMixture(tuple(posteriors), np.asarray(weights, dtype=float))


def coefficients(t, x, moments, family: CoefficientFamily):
    """(b, sigma) of the chosen family at price x and belief moments (m1, s)"""
    m1, s = moments
    x = np.asarray(x, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    if np.any(x <= 0) or np.any(m1 <= 0):
        raise InvalidInputError("coefficients", "price and belief mean must be positive")
    mu, sigma = family.mu_star, family.sigma_star
    variant = family.variant

    if variant is Variant.BASELINE:
        return x * (mu + family.kappa_d * np.log(m1 / x)), x * sigma * (1 + family.kappa_v * s / m1)

    b_true, sigma_true = mu * x, sigma * x
    cv = s / (m1 + family.eps)
    if variant is Variant.MEAN_REVERT:
        return b_true + family.kappa * (m1 - x), sigma_true
    if variant is Variant.CV_VOL:
        return b_true, sigma_true * (1 + family.kappa * cv)
    if variant is Variant.COMBINED:
        return b_true + family.kappa_d * (m1 - x), sigma_true * (1 + family.kappa_v * cv)
    if variant is Variant.RATIO_DRIFT:
        return b_true * (1 + family.kappa * (m1 / x - 1)), sigma_true
    if variant is Variant.PENALIZED_DRIFT:
        return b_true - family.lam * x * cv**2, sigma_true
    if variant is Variant.QUADRATIC_VOL:
        return b_true, sigma_true * np.sqrt(1 + family.kappa * ((m1 - x) / (m1 + family.eps)) ** 2)
    raise InvalidInputError("coefficient family", "unknown variant", variant=variant)


def observation_shocks(seed: int, path_index: int, grid: TimeGrid, n_traders: int) -> np.ndarray:
    """
    Standard normal shocks (n_steps + 1, n_traders) of one path. They do
    not depend on the information level, which is applied as a scale.
    """
    rng = path_generator(seed, path_index, STREAM_OBSERVATION)
    return rng.standard_normal((grid.n_steps + 1, n_traders))


def simulate_market_paths(config: MarketConfig, n: float, path_indices: Sequence[int]) -> List[PathBundle]:
    """
    Coupled (S, S~^(n)) on shared Brownian paths, vectorised over paths.

    Traders observe the current true log-price at every step, independently
    across steps; the posterior moments feed the coefficients directly.
    """
    if n < 1:
        raise InvalidInputError("info level", "n must be at least 1", n=n)
    path_indices = [int(index) for index in path_indices]
    grid = config.grid
    family = config.family
    taus = np.asarray(config.taus, dtype=float)
    weights = np.asarray(config.weights, dtype=float)

    increments = stack_brownian(config.seed, path_indices, grid)
    true_paths = simulate_gbm(
        config.mu_star, config.sigma_star, config.s0, increments, grid, config.eps_pos
    )
    shocks = np.stack(
        [observation_shocks(config.seed, index, grid, taus.size) for index in path_indices], axis=1
    )

    prior_mean, prior_var = model_prior(grid.times, config.s0, config.mu_star, config.sigma_star)
    obs_var = taus**2 / n
    observations = np.log(true_paths)[..., None] + np.sqrt(obs_var) * shocks
    post_mean, post_var = gaussian_conjugate_posterior(
        prior_mean[:, None, None], prior_var[:, None, None], observations, obs_var
    )
    m1, s = lognormal_mixture_moments(post_mean, np.sqrt(post_var), weights)

    def drift(t, x):
        k = grid.step_index(t)
        return coefficients(t, x, (m1[k], s[k]), family)[0]

    def diffusion(t, x):
        k = grid.step_index(t)
        return coefficients(t, x, (m1[k], s[k]), family)[1]

    synthetic = euler_maruyama(drift, diffusion, config.s0, increments, grid, floor=config.eps_pos * config.s0)
    # W2^2 between the market belief and the Dirac at the true price
    w2_sq = s**2 + (m1 - true_paths) ** 2

    return [
        PathBundle(
            grid,
            true_paths[:, column],
            synthetic[:, column],
            seed=config.seed,
            path_index=index,
            info={"model": "belief_market", "n": n},
            diagnostics={"m1": m1[:, column], "s": s[:, column], "w2_sq": w2_sq[:, column]},
        )
        for column, index in enumerate(path_indices)
    ]


def simulate_market_pair(config: MarketConfig, n: float, path_index: int) -> PathBundle:
    return simulate_market_paths(config, n, [path_index])[0]


def path_records(bundles: Sequence[PathBundle], n: float) -> List[Tuple[float, ...]]:
    return [
        (n, bundle.path_index, bundle.sup_sq_gap(), float(np.mean(bundle.diagnostics["w2_sq"])))
        for bundle in bundles
    ]


def summarize(paths: ResultTable, horizon: float) -> ResultTable:
    """Monte Carlo mean and standard error of sup|S~ - S|^2 per level"""
    records = []
    for n in np.unique(paths.column("n")):
        level = paths.where("n", n)
        errors = level.column("sup_sq_error")
        std_error = errors.std(ddof=1) / np.sqrt(errors.size) if errors.size > 1 else 0.0
        records.append((n, errors.mean(), std_error, horizon * level.column("mean_W2_sq").mean()))
    return ResultTable.from_records(SUMMARY_COLUMNS, records, dict(paths.metadata))


@dataclass
class ExperimentResult:
    paths: ResultTable
    summary: ResultTable
    bundles: dict


def run_level(config: MarketConfig, n: float) -> List[PathBundle]:
    bundles = simulate_market_paths(config, n, range(config.n_paths))
    logger.debug("Simulated %d market paths at n=%s", config.n_paths, n)
    return bundles


def convergence_experiment(config: MarketConfig, mapper: Callable = map) -> ExperimentResult:
    """
    E[sup_t |S~^(n) - S|^2] per information level, with standard errors.
    `mapper` runs the levels, e.g. an executor's map.
    """
    if len(config.info_levels) < 2:
        raise InvalidInputError("market", "the experiment needs at least two information levels")
    levels = list(config.info_levels)
    bundles = dict(zip(levels, mapper(partial(run_level, config), levels)))
    records = []
    for n in levels:
        records.extend(path_records(bundles[n], n))
    paths = ResultTable.from_records(PATH_COLUMNS, records, {"seed": config.seed})
    return ExperimentResult(paths, summarize(paths, config.grid.horizon), bundles)


def stability_fit(summary: ResultTable) -> Tuple[float, float]:
    """
    Empirical stability check: the smallest constant C with
    E sup|S~ - S|^2 <= C * int E[W2^2] dt at every level, and the
    log-log slope of the error against the integrated W2^2.
    """
    errors = summary.column("L2_sup_error")
    integrals = summary.column("int_W2_sq")
    constant = float(np.max(errors / integrals))
    return constant, loglog_slope(integrals, errors)


def rademacher_counterexample(weights: Sequence[float] = (0.5, 0.5)) -> Tuple[DiscreteMeasure1D, float]:
    """
    Two traders with identical beliefs 1/2 delta_{-1} + 1/2 delta_{+1}: the
    barycenter is that same law, whose W2 distance to the Dirac at either
    atom stays sqrt(2) however much information is added.
    """
    belief = DiscreteMeasure1D.from_atoms([-1.0, 1.0], [0.5, 0.5])
    barycenter = w2_barycenter_1d([belief, belief], weights)
    if not np.allclose(barycenter.atoms, belief.atoms) or not np.allclose(barycenter.weights, belief.weights):
        raise InvalidInputError("rademacher", "barycenter differs from the common belief")
    w2_value = w2_discrete(barycenter, DiscreteMeasure1D.dirac(1.0))
    if abs(w2_value - np.sqrt(2.0)) > 1.0e-12:
        raise InvalidInputError("rademacher", "W2 to the Dirac is not sqrt(2)", w2=w2_value)
    return barycenter, w2_value
