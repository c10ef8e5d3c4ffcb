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
"""
import math

import numpy as np
import pytest

from common.exceptions import InvalidInputError, SaturationError
from beliefsim.measures1d import (
    INFINITE_DIVERGENCE,
    DiscreteMeasure1D,
    LognormalLaw,
    QuantileMixture,
    barycenter_lognormal_moments,
    discretize_normal,
    gaussian_conjugate_posterior,
    kl_discrete,
    lognormal_mixture_moments,
    w2_barycenter_1d,
    w2_discrete,
    w2_to_dirac,
)

RADEMACHER = DiscreteMeasure1D(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))


def random_measure(rng, max_atoms=8):
    size = rng.integers(1, max_atoms + 1)
    return DiscreteMeasure1D.from_atoms(rng.normal(size=size) * 3, rng.dirichlet(np.ones(size)))


def test_from_atoms_sorts_and_merges():
    measure = DiscreteMeasure1D.from_atoms([2.0, 0.0, 2.0], [1.0, 1.0, 2.0])
    np.testing.assert_array_equal(measure.atoms, [0.0, 2.0])
    np.testing.assert_allclose(measure.weights, [0.25, 0.75])
    assert measure.mean == pytest.approx(1.5)


@pytest.mark.parametrize(
    "atoms, weights",
    [([], []), ([0.0, 1.0], [0.5]), ([1.0, 0.0], [0.5, 0.5]), ([0.0, 1.0], [0.7, 0.7]), ([np.nan], [1.0])],
)
def test_invalid_measures_are_rejected(atoms, weights):
    with pytest.raises(InvalidInputError):
        DiscreteMeasure1D(np.array(atoms), np.array(weights))


def test_w2_between_diracs():
    assert w2_discrete(DiscreteMeasure1D.dirac(-1.5), DiscreteMeasure1D.dirac(2.0)) == pytest.approx(3.5)


def test_w2_examples():
    assert w2_discrete(RADEMACHER, DiscreteMeasure1D.dirac(1.0)) == pytest.approx(math.sqrt(2.0), abs=1e-12)
    half = DiscreteMeasure1D(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    assert w2_discrete(half, DiscreteMeasure1D.dirac(0.5)) == pytest.approx(0.5, abs=1e-12)


def test_w2_metric_properties(rng):
    for _ in range(200):
        mu, nu, eta = (random_measure(rng) for _ in range(3))
        assert w2_discrete(mu, nu) == pytest.approx(w2_discrete(nu, mu), rel=1e-12, abs=1e-12)
        assert w2_discrete(mu, eta) <= w2_discrete(mu, nu) + w2_discrete(nu, eta) + 1e-10


def test_barycenter_of_diracs_and_identical_measures(rng):
    bar = w2_barycenter_1d([DiscreteMeasure1D.dirac(0.0), DiscreteMeasure1D.dirac(2.0)], [0.5, 0.5])
    np.testing.assert_allclose(bar.atoms, [1.0])
    measure = random_measure(rng)
    bar = w2_barycenter_1d([measure, measure], [0.3, 0.7])
    np.testing.assert_allclose(bar.atoms, measure.atoms, atol=1e-12)
    np.testing.assert_allclose(bar.weights, measure.weights, atol=1e-12)


def test_barycenter_of_rademacher_laws_keeps_two_atoms():
    bar = w2_barycenter_1d([RADEMACHER, RADEMACHER], [0.25, 0.75])
    np.testing.assert_allclose(bar.atoms, [-1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(bar.weights, [0.5, 0.5], atol=1e-12)


def test_barycenter_rejects_bad_weights():
    with pytest.raises(InvalidInputError):
        w2_barycenter_1d([RADEMACHER], [0.5, 0.5])
    with pytest.raises(InvalidInputError):
        w2_barycenter_1d([RADEMACHER, RADEMACHER], [1.0, 0.0])


def _objective(candidate, measures, weights):
    return sum(w * w2_discrete(candidate, measure) ** 2 for w, measure in zip(weights, measures))


def test_barycenter_beats_perturbed_candidates(rng):
    for _ in range(10):
        measures = [random_measure(rng) for _ in range(3)]
        weights = rng.dirichlet(np.ones(3))
        bar = w2_barycenter_1d(measures, weights)
        best = _objective(bar, measures, weights)
        for _ in range(100):
            atoms = bar.atoms + rng.normal(scale=0.1, size=len(bar))
            candidate = DiscreteMeasure1D.from_atoms(atoms, bar.weights)
            assert best <= _objective(candidate, measures, weights) + 1e-10


def test_barycenter_distance_is_dominated(rng):
    for _ in range(1000):
        m = rng.integers(1, 5)
        measures = [random_measure(rng) for _ in range(m)]
        weights = rng.dirichlet(np.ones(m)) * 0.999 + 0.001 / m
        weights = weights / weights.sum()
        reference = random_measure(rng)
        bar = w2_barycenter_1d(measures, weights)
        bound = 4 * max(w2_discrete(measure, reference) ** 2 for measure in measures)
        assert w2_discrete(bar, reference) ** 2 <= bound + 1e-10


def test_distance_to_dirac_is_minimised_at_the_mean(rng):
    for _ in range(1000):
        measure = random_measure(rng)
        assert w2_to_dirac(measure, measure.mean) == pytest.approx(measure.variance, abs=1e-10)
        grid = np.linspace(measure.atoms[0] - 1, measure.atoms[-1] + 1, 101)
        assert w2_to_dirac(measure, measure.mean) <= min(w2_to_dirac(measure, z) for z in grid) + 1e-10


def test_distance_to_dirac_examples():
    assert w2_to_dirac(DiscreteMeasure1D.dirac(3.0), 3.0) == 0.0
    measure = DiscreteMeasure1D(np.array([0.0, 2.0]), np.array([0.5, 0.5]))
    assert w2_to_dirac(measure, 1.0) == pytest.approx(1.0)
    assert w2_discrete(measure, DiscreteMeasure1D.dirac(1.0)) ** 2 == pytest.approx(1.0)


def test_lognormal_std():
    assert LognormalLaw(0.0, 0.5).std == pytest.approx(0.603324, abs=1e-6)


def test_lognormal_discretization_is_close_in_std():
    law = LognormalLaw(0.1, 0.4)
    measure = law.discretize()
    assert len(measure) == 512
    assert math.sqrt(measure.variance) == pytest.approx(law.std, rel=1e-2)


def test_lognormal_mean_overflow_saturates():
    with pytest.raises(SaturationError):
        LognormalLaw(800.0, 0.0)


def test_mixture_moments_examples():
    assert barycenter_lognormal_moments(QuantileMixture((LognormalLaw(0.0, 0.0),), np.array([1.0]))) == (1.0, 0.0)
    mean, std = lognormal_mixture_moments([0.0, 1.0], [0.0, 0.0], [0.5, 0.5])
    assert mean == pytest.approx(0.5 + 0.5 * math.e)
    assert std == 0.0
    mix = QuantileMixture((LognormalLaw(0.0, 0.5), LognormalLaw(0.0, 1.0)), np.array([0.5, 0.5]))
    mean, _ = barycenter_lognormal_moments(mix)
    assert mean == pytest.approx(1.390935, abs=1e-6)


def test_mixture_moments_against_sampling(rng):
    mix = QuantileMixture((LognormalLaw(0.0, 0.5), LognormalLaw(0.0, 1.0)), np.array([0.5, 0.5]))
    draws = mix.sample(rng.standard_normal(1_000_000))
    mean, std = barycenter_lognormal_moments(mix)
    assert abs(draws.mean() - mean) < 3 * draws.std() / 1000
    assert abs(draws.std() - std) < 0.02 * std


def test_mixture_moments_name_the_overflowing_component():
    with pytest.raises(SaturationError) as error:
        lognormal_mixture_moments([0.0, 750.0], [0.1, 0.1], [0.5, 0.5])
    assert error.value.extensions["component"] == 1


def test_mixture_rejects_mismatched_weights():
    with pytest.raises(InvalidInputError):
        QuantileMixture((LognormalLaw(0.0, 1.0),), np.array([0.5, 0.5]))


def test_conjugate_posterior_examples():
    assert gaussian_conjugate_posterior(0.0, 1.0, 2.0, 1.0) == (1.0, 0.5)
    mean, var = gaussian_conjugate_posterior(0.3, 2.0, 5.0, 2.0e12)
    assert mean == pytest.approx(0.3, rel=1e-6)
    assert var == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(InvalidInputError):
        gaussian_conjugate_posterior(0.0, 1.0, 0.0, 0.0)


def test_conjugate_posterior_matches_grid_bayes(rng):
    for _ in range(20):
        prior_mean, prior_var = rng.normal(), rng.uniform(0.1, 4.0)
        obs, obs_var = rng.normal() * 2, rng.uniform(0.1, 4.0)
        x = np.linspace(prior_mean - 12 * math.sqrt(prior_var), prior_mean + 12 * math.sqrt(prior_var), 40001)
        log_density = -((x - prior_mean) ** 2) / (2 * prior_var) - (obs - x) ** 2 / (2 * obs_var)
        density = np.exp(log_density - log_density.max())
        density /= density.sum()
        grid_mean = float(np.dot(density, x))
        grid_var = float(np.dot(density, (x - grid_mean) ** 2))
        mean, var = gaussian_conjugate_posterior(prior_mean, prior_var, obs, obs_var)
        assert mean == pytest.approx(grid_mean, abs=1e-4)
        assert var == pytest.approx(grid_var, abs=1e-4)


def test_conjugate_posterior_works_on_arrays():
    mean, var = gaussian_conjugate_posterior(np.zeros(3), np.ones(3), np.array([2.0, 0.0, -2.0]), 1.0)
    np.testing.assert_allclose(mean, [1.0, 0.0, -1.0])
    np.testing.assert_allclose(var, 0.5)


def test_discretize_normal_is_symmetric():
    measure = discretize_normal(1.0, 2.0, n_points=101)
    assert measure.mean == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(measure.atoms - 1.0, -(measure.atoms[::-1] - 1.0), atol=1e-12)


def test_kl_examples(rng):
    measure = random_measure(rng)
    assert kl_discrete(measure, measure) == 0.0
    mu = DiscreteMeasure1D(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    nu = DiscreteMeasure1D(np.array([0.0, 1.0]), np.array([0.25, 0.75]))
    assert kl_discrete(mu, nu) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-12)
    assert kl_discrete(mu, nu) == pytest.approx(0.143841, abs=1e-6)


def test_kl_outside_support_is_infinite():
    mu = DiscreteMeasure1D(np.array([0.0, 2.0]), np.array([0.5, 0.5]))
    nu = DiscreteMeasure1D(np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    assert kl_discrete(mu, nu) == INFINITE_DIVERGENCE
