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

One-dimensional probability measures: W2 distance and barycenters through
quantile functions, lognormal laws and their comonotone mixtures, Gaussian
conjugate updates and discrete relative entropy.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import ot
from scipy import special, stats

from common.exceptions import InvalidInputError, SaturationError

WEIGHT_TOL = 1.0e-12
DEFAULT_QUANTILE_POINTS = 512
INFINITE_DIVERGENCE = math.inf
# largest argument with a finite exp in double precision
MAX_EXP_ARG = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class DiscreteMeasure1D:
    """
    Finitely supported law on the reals. Use `from_atoms` to build one from
    unsorted atoms; the constructor itself only validates.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if atoms.ndim != 1 or atoms.size == 0:
            raise InvalidInputError("measure", "needs at least one atom")
        if atoms.shape != weights.shape:
            raise InvalidInputError("measure", "atoms and weights differ in length")
        if not np.all(np.isfinite(atoms)):
            raise InvalidInputError("measure", "atoms must be finite")
        if np.any(weights < 0):
            raise InvalidInputError("measure", "weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidInputError("measure", "weights must sum to 1", total=float(weights.sum()))
        if np.any(np.diff(atoms) <= 0):
            raise InvalidInputError("measure", "atoms must be strictly increasing")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_atoms(
        cls, atoms: Sequence[float], weights: Optional[Sequence[float]] = None
    ) -> "DiscreteMeasure1D":
        """Sort, merge duplicate atoms and renormalise"""
        atoms = np.asarray(atoms, dtype=float).ravel()
        if atoms.size == 0:
            raise InvalidInputError("measure", "needs at least one atom")
        if weights is None:
            weights = np.full(atoms.size, 1.0 / atoms.size)
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.shape != atoms.shape:
            raise InvalidInputError("measure", "atoms and weights differ in length")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise InvalidInputError("measure", "weights must be nonnegative with positive mass")
        unique, inverse = np.unique(atoms, return_inverse=True)
        merged = np.bincount(inverse.ravel(), weights=weights, minlength=unique.size)
        return cls(unique, merged / merged.sum())

    @classmethod
    def dirac(cls, z: float) -> "DiscreteMeasure1D":
        return cls(np.array([float(z)]), np.array([1.0]))

    def __len__(self) -> int:
        return self.atoms.size

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.atoms))

    @property
    def variance(self) -> float:
        return float(np.dot(self.weights, (self.atoms - self.mean) ** 2))

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def quantile(self, u) -> np.ndarray:
        """Left-continuous inverse CDF"""
        index = np.searchsorted(self.cdf, np.asarray(u, dtype=float), side="left")
        return self.atoms[np.clip(index, 0, len(self) - 1)]


@dataclass(frozen=True)
class LognormalLaw:
    """Law of e^{m + s Z}, Z ~ N(0, 1)"""

    m: float
    s: float

    def __post_init__(self) -> None:
        if not self.s >= 0:
            raise InvalidInputError("lognormal", "log-std must be nonnegative", s=self.s)
        if self.m + 0.5 * self.s**2 > MAX_EXP_ARG:
            raise SaturationError("lognormal", "mean overflows", m=self.m, s=self.s)

    @property
    def mean(self) -> float:
        return math.exp(self.m + 0.5 * self.s**2)

    @property
    def variance(self) -> float:
        return math.expm1(self.s**2) * math.exp(2.0 * self.m + self.s**2)

    @property
    def std(self) -> float:
        return float(lognormal_std(self.m, self.s))

    def discretize(self, n_points: int = DEFAULT_QUANTILE_POINTS) -> DiscreteMeasure1D:
        return DiscreteMeasure1D.from_atoms(np.exp(self.m + self.s * _mid_quantiles(n_points)))


@dataclass(frozen=True)
class QuantileMixture:
    """
    Law of sum_i w_i e^{m_i + s_i Z} for one shared Z ~ N(0, 1): the
    comonotone sum that realises the W2 barycenter of lognormal laws
    """

    components: Tuple[LognormalLaw, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        if len(self.components) == 0 or len(self.components) != weights.size:
            raise InvalidInputError("mixture", "components and weights differ in length")
        _check_simplex(weights)
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", weights)

    @property
    def log_means(self) -> np.ndarray:
        return np.array([law.m for law in self.components])

    @property
    def log_stds(self) -> np.ndarray:
        return np.array([law.s for law in self.components])

    def sample(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)[..., None]
        return np.sum(self.weights * np.exp(self.log_means + self.log_stds * z), axis=-1)

    def discretize(self, n_points: int = DEFAULT_QUANTILE_POINTS) -> DiscreteMeasure1D:
        return DiscreteMeasure1D.from_atoms(self.sample(_mid_quantiles(n_points)))


def _mid_quantiles(n_points: int) -> np.ndarray:
    return stats.norm.ppf((np.arange(n_points) + 0.5) / n_points)


def _check_simplex(weights: np.ndarray, strict: bool = False) -> None:
    if np.any(weights < 0) or (strict and np.any(weights <= 0)):
        raise InvalidInputError("weights", "must be positive" if strict else "must be nonnegative")
    if abs(weights.sum() - 1.0) > WEIGHT_TOL:
        raise InvalidInputError("weights", "must sum to 1", total=float(weights.sum()))


def discretize_normal(
    mean: float, std: float, n_points: int = DEFAULT_QUANTILE_POINTS
) -> DiscreteMeasure1D:
    """Equal-weight mid-quantile discretisation of N(mean, std^2)"""
    return DiscreteMeasure1D.from_atoms(mean + std * _mid_quantiles(n_points))


def w2_discrete(mu: DiscreteMeasure1D, nu: DiscreteMeasure1D) -> float:
    """
    W2 through the quantile coupling, exact on the merged weight partition
    """
    if len(mu) == 0 or len(nu) == 0:
        raise InvalidInputError("measure", "W2 needs nonempty measures")
    cost = ot.wasserstein_1d(mu.atoms, nu.atoms, mu.weights, nu.weights, p=2)
    return math.sqrt(max(float(cost), 0.0))


def w2_barycenter_1d(
    measures: Sequence[DiscreteMeasure1D], weights: Sequence[float]
) -> DiscreteMeasure1D:
    """
    Weighted W2 barycenter in 1D: the quantile average
    F^{-1}(u) = sum_i w_i F_i^{-1}(u), evaluated on every cell of the
    merged CDF partition.
    """
    weights = np.asarray(weights, dtype=float)
    if len(measures) == 0 or len(measures) != weights.size:
        raise InvalidInputError("barycenter", "measures and weights differ in length")
    _check_simplex(weights, strict=True)
    breaks = np.unique(np.concatenate([np.clip(measure.cdf, 0.0, 1.0) for measure in measures]))
    breaks = np.concatenate(([0.0], breaks[breaks < 1.0], [1.0]))
    cell_mass = np.diff(breaks)
    keep = cell_mass > 0
    mid = 0.5 * (breaks[:-1] + breaks[1:])[keep]
    quantiles = np.stack([measure.quantile(mid) for measure in measures])
    return DiscreteMeasure1D.from_atoms(weights @ quantiles, cell_mass[keep])


def lognormal_std(m, s):
    """Standard deviation of e^{m + s Z}, elementwise"""
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    return np.sqrt(np.expm1(s**2)) * np.exp(m + 0.5 * s**2)


def lognormal_mixture_moments(m, s, weights) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and std of sum_i w_i e^{m_i + s_i Z}, components on the last axis.

    The variance is summed as sum_ij w_i w_j M_i M_j expm1(s_i s_j) with
    M_i = e^{m_i + s_i^2/2}: nonnegative and exactly zero when all s_i = 0.
    """
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    weights = np.asarray(weights, dtype=float)
    log_means = m + 0.5 * s**2
    over = np.argwhere(log_means > MAX_EXP_ARG)
    if over.size:
        raise SaturationError("lognormal mixture", "mean overflows", component=int(over[0][-1]))
    weighted = weights * np.exp(log_means)
    mean = weighted.sum(axis=-1)
    with np.errstate(over="ignore", invalid="ignore"):
        cross = np.expm1(s[..., :, None] * s[..., None, :])
        variance = np.einsum("...i,...ij,...j->...", weighted, cross, weighted)
    if not np.all(np.isfinite(variance)):
        over = np.argwhere(~np.isfinite(cross))
        component = int(over[0][-1]) if over.size else int(np.argmax(s))
        raise SaturationError("lognormal mixture", "second moment overflows", component=component)
    return mean, np.sqrt(np.maximum(variance, 0.0))


def barycenter_lognormal_moments(mix: QuantileMixture) -> Tuple[float, float]:
    mean, std = lognormal_mixture_moments(mix.log_means, mix.log_stds, mix.weights)
    return float(mean), float(std)


def gaussian_conjugate_posterior(prior_mean, prior_var, obs, obs_var):
    """
    Posterior of X ~ N(prior_mean, prior_var) after observing X + N(0, obs_var).
    Works elementwise on arrays.
    """
    prior_var = np.asarray(prior_var, dtype=float)
    obs_var = np.asarray(obs_var, dtype=float)
    if np.any(obs_var <= 0):
        raise InvalidInputError("obs_var", "observation variance must be positive")
    if np.any(prior_var < 0):
        raise InvalidInputError("prior_var", "prior variance must be nonnegative")
    total = prior_var + obs_var
    post_var = prior_var * obs_var / total
    post_mean = (obs_var * prior_mean + prior_var * obs) / total
    if post_mean.ndim == 0:
        return float(post_mean), float(post_var)
    return post_mean, post_var


def w2_to_dirac(mu: DiscreteMeasure1D, z: float) -> float:
    """Squared W2 from mu to the Dirac at z: Var(mu) + (mean(mu) - z)^2"""
    return mu.variance + (mu.mean - z) ** 2


def kl_discrete(mu: DiscreteMeasure1D, nu: DiscreteMeasure1D) -> float:
    """
    sum m_i log(m_i / p_i) over the union of atoms. Returns
    INFINITE_DIVERGENCE when mu charges an atom nu does not.
    """
    support = np.union1d(mu.atoms, nu.atoms)
    m = np.zeros(support.size)
    p = np.zeros(support.size)
    m[np.searchsorted(support, mu.atoms)] = mu.weights
    p[np.searchsorted(support, nu.atoms)] = nu.weights
    value = float(np.sum(special.rel_entr(m, p)))
    if math.isinf(value):
        return INFINITE_DIVERGENCE
    return max(value, 0.0)
