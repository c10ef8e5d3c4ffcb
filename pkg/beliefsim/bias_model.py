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

Ambiguity-driven bias: a trader mixes the true drift with an opinion drift,
weighted by how uncertain the price still is given the trader's information.
"""
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, List, Sequence, Tuple

import numpy as np

from common.exceptions import InvalidInputError
from common.file_model.result_table import ResultTable
from beliefsim.measures1d import LognormalLaw, gaussian_conjugate_posterior, lognormal_std
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

PATH_COLUMNS = ("n", "path_index", "sup_sq_error", "int_beta_sq", "stability_integral")
SUMMARY_COLUMNS = ("n", "L2_sup_error", "std_error", "int_beta_sq", "stability_integral")
MIN_RATE_LEVELS = 3
MIN_RATE_DECADES = 2.0


@dataclass(frozen=True)
class BiasConfig:
    kappa_b: float = 1.0e-3
    p_b: float = 2.4
    mu_op: float = 0.2
    c_rel: float = 1.0
    eps: float = 1.0e-6
    s0: float = 100.0
    mu_star: float = 0.08
    sigma_star: float = 0.6
    tau: float = 2.0
    info_levels: Tuple[float, ...] = (1, 10, 100, 1000)
    n_paths: int = 30
    grid: TimeGrid = field(default_factory=TimeGrid)
    seed: int = 0
    eps_pos: float = EPS_POS

    def __post_init__(self) -> None:
        if self.kappa_b < 0:
            raise InvalidInputError("bias", "kappa_b must be nonnegative", kappa_b=self.kappa_b)
        if not self.p_b > 0:
            raise InvalidInputError("bias", "p_b must be positive", p_b=self.p_b)
        if not self.eps > 0:
            raise InvalidInputError("bias", "eps must be positive", eps=self.eps)
        if self.c_rel < 0:
            raise InvalidInputError("bias", "c_rel must be nonnegative", c_rel=self.c_rel)
        if not self.tau > 0 or not self.s0 > 0:
            raise InvalidInputError("bias", "tau and s0 must be positive")
        levels = np.asarray(self.info_levels, dtype=float)
        if np.any(levels < 1) or np.any(np.diff(levels) <= 0):
            raise InvalidInputError("bias", "info_levels must be >= 1 and strictly increasing")
        if self.n_paths < 1:
            raise InvalidInputError("bias", "n_paths must be positive", n_paths=self.n_paths)
        if self.p_b < 1:
            logger.warning("Bias weight with p_b=%s is not Lipschitz at zero ambiguity", self.p_b)


@dataclass(frozen=True)
class AmbiguityState:
    s_hat: float
    gamma: float
    beta: float

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise InvalidInputError("ambiguity", "gamma must be nonnegative", gamma=self.gamma)
        if not 0 <= self.beta < 1 or (self.gamma == 0 and self.beta != 0):
            raise InvalidInputError("ambiguity", "beta must lie in [0, 1) and vanish with gamma", beta=self.beta)


def ambiguity(posterior: LognormalLaw) -> float:
    """
    Conditional std of the price, i.e. W2 from the posterior to the Dirac at
    its mean. `ambiguity_states` evaluates the same quantity on whole paths.
    """
    return posterior.std


def bias_weight(gamma, kappa_b: float, p_b: float):
    """beta = 1 - exp(-kappa_b gamma^p_b)"""
    return -np.expm1(-kappa_b * np.power(gamma, p_b))


def bias_weight_lipschitz(gamma, kappa_b: float, p_b: float):
    """d beta / d gamma = kappa_b p_b gamma^(p_b - 1) exp(-kappa_b gamma^p_b)"""
    gamma = np.asarray(gamma, dtype=float)
    return kappa_b * p_b * np.power(gamma, p_b - 1) * np.exp(-kappa_b * np.power(gamma, p_b))


def opinion_drift(s_hat, gamma, config: BiasConfig):
    if np.any(np.asarray(s_hat) < 0):
        raise InvalidInputError("opinion drift", "s_hat must be nonnegative")
    return config.mu_op * s_hat * (1 + config.c_rel * gamma / (s_hat + config.eps))


def mixed_drift(t, x, beta, rho, base_drift: Callable):
    return (1 - beta) * base_drift(t, x) + beta * rho


def ambiguity_states(config: BiasConfig, n: float, true_paths: np.ndarray, shocks: np.ndarray):
    """
    Per-step posterior of the true log-price from one fresh observation
    with noise tau^2/n. Returns (s_hat, gamma, beta) arrays shaped like
    `true_paths`.
    """
    grid = config.grid
    times = grid.times.reshape((-1,) + (1,) * (true_paths.ndim - 1))
    prior_mean = np.log(config.s0) + (config.mu_star - 0.5 * config.sigma_star**2) * times
    prior_var = config.sigma_star**2 * times
    obs_var = config.tau**2 / n
    observations = np.log(true_paths) + np.sqrt(obs_var) * shocks
    post_mean, post_var = gaussian_conjugate_posterior(prior_mean, prior_var, observations, obs_var)
    post_std = np.sqrt(post_var)
    s_hat = np.exp(post_mean + 0.5 * post_var)
    gamma = lognormal_std(post_mean, post_std)
    return s_hat, gamma, bias_weight(gamma, config.kappa_b, config.p_b)


def simulate_bias_paths(config: BiasConfig, n: float, path_indices: Sequence[int]) -> List[PathBundle]:
    if n < 1:
        raise InvalidInputError("info level", "n must be at least 1", n=n)
    path_indices = [int(index) for index in path_indices]
    grid = config.grid
    increments = stack_brownian(config.seed, path_indices, grid)
    true_paths = simulate_gbm(config.mu_star, config.sigma_star, config.s0, increments, grid, config.eps_pos)
    shocks = np.stack(
        [
            path_generator(config.seed, index, STREAM_OBSERVATION).standard_normal(grid.n_steps + 1)
            for index in path_indices
        ],
        axis=1,
    )
    s_hat, gamma, beta = ambiguity_states(config, n, true_paths, shocks)
    rho = opinion_drift(s_hat, gamma, config)

    def base_drift(t, x):
        return config.mu_star * x

    def drift(t, x):
        k = grid.step_index(t)
        return mixed_drift(t, x, beta[k], rho[k], base_drift)

    def diffusion(t, x):
        return config.sigma_star * x

    synthetic = euler_maruyama(drift, diffusion, config.s0, increments, grid, floor=config.eps_pos * config.s0)
    return [
        PathBundle(
            grid,
            true_paths[:, column],
            synthetic[:, column],
            seed=config.seed,
            path_index=index,
            info={"model": "bias_shrink", "n": n},
            diagnostics={
                "s_hat": s_hat[:, column],
                "gamma": gamma[:, column],
                "beta": beta[:, column],
                "rho": rho[:, column],
            },
        )
        for column, index in enumerate(path_indices)
    ]


def simulate_bias_pair(config: BiasConfig, n: float, path_index: int) -> PathBundle:
    return simulate_bias_paths(config, n, [path_index])[0]


def _time_integral(values: np.ndarray, grid: TimeGrid) -> float:
    # left-point rule, matching the Euler scheme
    return float(np.sum(values[:-1]) * grid.dt)


def path_records(bundles: Sequence[PathBundle], n: float) -> List[Tuple[float, ...]]:
    records = []
    for bundle in bundles:
        beta_sq = bundle.diagnostics["beta"] ** 2
        integrand = beta_sq * (1 + bundle.diagnostics["rho"] ** 2 + bundle.true_path**2)
        records.append(
            (
                n,
                bundle.path_index,
                bundle.sup_sq_gap(),
                _time_integral(beta_sq, bundle.grid),
                _time_integral(integrand, bundle.grid),
            )
        )
    return records


def summarize(paths: ResultTable) -> ResultTable:
    records = []
    for n in np.unique(paths.column("n")):
        level = paths.where("n", n)
        errors = level.column("sup_sq_error")
        std_error = errors.std(ddof=1) / np.sqrt(errors.size) if errors.size > 1 else 0.0
        records.append(
            (
                n,
                errors.mean(),
                std_error,
                level.column("int_beta_sq").mean(),
                level.column("stability_integral").mean(),
            )
        )
    return ResultTable.from_records(SUMMARY_COLUMNS, records, dict(paths.metadata))


@dataclass
class RateResult:
    paths: ResultTable
    summary: ResultTable
    slope: float
    eta_target: float
    bundles: dict

    @property
    def stability_constant(self) -> float:
        """Smallest C with E sup|dS|^2 <= C E int beta^2 (1 + rho^2 + S^2) dt at every level"""
        integrals = self.summary.column("stability_integral")
        errors = self.summary.column("L2_sup_error")
        mask = integrals > 0
        if not np.any(mask):
            return 0.0
        return float(np.max(errors[mask] / integrals[mask]))

    @property
    def stability_slope(self) -> float:
        """Log-log slope of the error against the stability integral over the levels where it is positive"""
        integrals = self.summary.column("stability_integral")
        mask = integrals > 0
        return loglog_slope(integrals[mask], self.summary.column("L2_sup_error")[mask])


def run_level(config: BiasConfig, n: float) -> List[PathBundle]:
    bundles = simulate_bias_paths(config, n, range(config.n_paths))
    logger.debug("Simulated %d bias paths at n=%s", config.n_paths, n)
    return bundles


def shrinkage_experiment(config: BiasConfig, mapper: Callable = map) -> Tuple[ResultTable, ResultTable, dict]:
    levels = list(config.info_levels)
    bundles = dict(zip(levels, mapper(partial(run_level, config), levels)))
    records = []
    for n in levels:
        records.extend(path_records(bundles[n], n))
    paths = ResultTable.from_records(PATH_COLUMNS, records, {"seed": config.seed})
    return paths, summarize(paths), bundles


def rate_experiment(config: BiasConfig, eta_target: float = 0.5, mapper: Callable = map) -> RateResult:
    """
    Mean sup-squared error per information level and the least-squares
    slope of log error against log n
    """
    levels = np.asarray(config.info_levels, dtype=float)
    if levels.size < MIN_RATE_LEVELS or np.log10(levels[-1] / levels[0]) < MIN_RATE_DECADES:
        raise InvalidInputError(
            "rate experiment",
            "needs at least three information levels spanning two decades",
            levels=tuple(config.info_levels),
        )
    paths, summary, bundles = shrinkage_experiment(config, mapper)
    slope = loglog_slope(summary.column("n"), summary.column("L2_sup_error"))
    if slope > -eta_target:
        logger.info("Fitted error slope %.3f is flatter than -%s", slope, eta_target)
    return RateResult(paths, summary, slope, eta_target, bundles)
