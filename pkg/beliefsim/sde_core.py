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

Seeded Brownian paths and Euler-Maruyama integration.

Every path draws its noise from a counter-based Philox generator keyed by
(seed, path_index, stream), so path i is the same however many paths are
requested and in whatever order they are simulated.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Union

import numpy as np

from common.exceptions import InvalidInputError, NumericalFailureError

DAYS_PER_YEAR = 252
EPS_POS = 1.0e-8

# noise streams of one path
STREAM_BROWNIAN = 0
STREAM_OBSERVATION = 1
STREAM_DRIFT = 2
STREAM_SIGNAL = 3
STREAM_INITIAL = 4

Coefficient = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    horizon: float = 1.0
    n_steps: int = DAYS_PER_YEAR

    def __post_init__(self) -> None:
        if not self.horizon > 0:
            raise InvalidInputError("grid", "horizon must be positive", horizon=self.horizon)
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidInputError("grid", "n_steps must be a positive integer", n_steps=self.n_steps)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def step_index(self, t: float) -> int:
        return int(round(t / self.dt))


@dataclass(frozen=True)
class BrownianPath:
    increments: np.ndarray
    seed: int
    path_index: int

    def __len__(self) -> int:
        return len(self.increments)


@dataclass
class PathBundle:
    """
    Coupled paths of one model run. All paths start from the same value;
    `diagnostics` holds per-step auxiliary series (beliefs, bias weight, ...).
    """

    grid: TimeGrid
    true_path: np.ndarray
    synthetic_path: np.ndarray
    filtered_path: Optional[np.ndarray] = None
    seed: int = 0
    path_index: int = 0
    info: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = self.grid.n_steps + 1
        paths = [self.true_path, self.synthetic_path]
        if self.filtered_path is not None:
            paths.append(self.filtered_path)
        for path in paths:
            if len(path) != expected:
                raise InvalidInputError("path bundle", "path length must be n_steps + 1", length=len(path))
            if path[0] != self.true_path[0]:
                raise InvalidInputError("path bundle", "paths must share their initial value")

    def sup_sq_gap(self, reference: str = "true") -> float:
        """sup_t |synthetic - reference|^2"""
        base = self.true_path if reference == "true" else self.filtered_path
        return float(np.max((self.synthetic_path - base) ** 2))


def path_generator(seed: int, path_index: int, stream: int = STREAM_BROWNIAN) -> np.random.Generator:
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(stream)))
    return np.random.Generator(np.random.Philox(sequence))


def generate_brownian(seed: int, path_index: int, grid: TimeGrid) -> BrownianPath:
    rng = path_generator(seed, path_index, STREAM_BROWNIAN)
    increments = rng.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    return BrownianPath(increments, seed, path_index)


def stack_brownian(seed: int, path_indices, grid: TimeGrid) -> np.ndarray:
    """Increments of several paths as an (n_steps, n_paths) array"""
    return np.stack(
        [generate_brownian(seed, index, grid).increments for index in path_indices], axis=1
    )


def euler_maruyama(
    drift: Coefficient,
    diffusion: Coefficient,
    x0: Union[float, np.ndarray],
    w: Union[BrownianPath, np.ndarray],
    grid: TimeGrid,
    floor: Optional[float] = None,
) -> np.ndarray:
    """
    x_{k+1} = x_k + drift(t_k, x_k) dt + diffusion(t_k, x_k) dW_k

    `w` is a BrownianPath or an (n_steps, ...) array of increments, the
    trailing axes batching independent paths. Returns an array of shape
    (n_steps + 1, ...).
    """
    increments = w.increments if isinstance(w, BrownianPath) else np.asarray(w, dtype=float)
    if increments.shape[0] != grid.n_steps:
        raise InvalidInputError("brownian path", "length must equal n_steps", length=increments.shape[0])
    dt = grid.dt
    times = grid.times
    path = np.empty((grid.n_steps + 1,) + increments.shape[1:])
    path[0] = x0
    x = path[0]
    for k in range(grid.n_steps):
        t = times[k]
        x = x + drift(t, x) * dt + diffusion(t, x) * increments[k]
        if floor is not None:
            x = np.maximum(x, floor)
        if not np.all(np.isfinite(x)):
            raise NumericalFailureError("euler_maruyama", "non-finite state", step=k + 1)
        path[k + 1] = x
    return path


def simulate_gbm(
    mu: float,
    sigma: float,
    s0: float,
    w: Union[BrownianPath, np.ndarray],
    grid: TimeGrid,
    eps_pos: float = EPS_POS,
) -> np.ndarray:
    """Euler path of dS = mu S dt + sigma S dW, floored at eps_pos * s0"""
    if not s0 > 0:
        raise InvalidInputError("s0", "initial price must be positive", s0=s0)
    return euler_maruyama(
        lambda t, x: mu * x,
        lambda t, x: sigma * x,
        s0,
        w,
        grid,
        floor=eps_pos * s0,
    )
