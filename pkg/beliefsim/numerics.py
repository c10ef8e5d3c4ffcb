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

Special functions and scalar solvers shared by the model modules.
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special, stats

from common.exceptions import InvalidInputError, NumericalFailureError, SaturationError

SERIES_TOL = 1.0e-16
MAX_SERIES_TERMS = 10_000
ASYMPTOTIC_KUMMER_ARG = 700.0
MAX_LOG_FLOAT = math.log(np.finfo(float).max)
BRENT_MAX_ITER = 200
MAX_DOUBLINGS = 1000


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise InvalidInputError("bracket", "lo must be below hi", lo=self.lo, hi=self.hi)
        if not (np.isfinite(self.f_lo) and np.isfinite(self.f_hi)):
            raise InvalidInputError("bracket", "function is not finite at the ends")
        if self.f_lo * self.f_hi > 0:
            raise InvalidInputError(
                "bracket", "no sign change", f_lo=self.f_lo, f_hi=self.f_hi
            )

    @classmethod
    def around(cls, f: Callable[[float], float], lo: float, hi: float) -> "Bracket":
        return cls(lo, hi, f(lo), f(hi))


def brent_root(
    f: Callable[[float], float],
    bracket: Bracket,
    tol: float = 1.0e-12,
    rtol: Optional[float] = None,
    max_iter: int = BRENT_MAX_ITER,
) -> float:
    """
    Root of `f` inside a sign-changing bracket. Stops once the bracket
    is narrower than tol + rtol*|root|.
    """
    if bracket.f_lo == 0.0:
        return bracket.lo
    if bracket.f_hi == 0.0:
        return bracket.hi
    rtol = max(rtol if rtol is not None else tol, 4 * np.finfo(float).eps)
    root, result = optimize.brentq(
        f,
        bracket.lo,
        bracket.hi,
        xtol=tol,
        rtol=rtol,
        maxiter=max_iter,
        full_output=True,
        disp=False,
    )
    if not result.converged:
        raise NumericalFailureError(
            "brent_root", result.flag, best_iterate=root, iterations=result.iterations
        )
    return float(root)


def expand_bracket(
    f: Callable[[float], float],
    start: float = 1.0,
    limit: Optional[float] = None,
    max_doublings: int = MAX_DOUBLINGS,
) -> Tuple[Optional[Bracket], float]:
    """
    Bracket the root of a decreasing function by doubling [-h, h].

    Returns (bracket, h). The bracket is None when |x| reached `limit`
    before the sign changed; h is then the last half-width tried.
    """
    half_width = start
    for _ in range(max_doublings):
        f_lo, f_hi = f(-half_width), f(half_width)
        if f_lo >= 0.0 >= f_hi:
            return Bracket(-half_width, half_width, f_lo, f_hi), half_width
        if limit is not None and half_width >= limit:
            return None, half_width
        half_width *= 2.0
        if limit is not None:
            half_width = min(half_width, limit)
    raise NumericalFailureError(
        "expand_bracket", "no sign change", doublings=max_doublings, half_width=half_width
    )


def log_sum_exp(values: Sequence[float], log_weights: Optional[Sequence[float]] = None) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidInputError("values", "log_sum_exp needs at least one element")
    if log_weights is not None:
        values = values + np.asarray(log_weights, dtype=float)
    return float(special.logsumexp(values))


def _kummer_series(a: float, b: float, u: float, tol: float, max_terms: int) -> float:
    # u >= 0 here, so all terms are positive
    term = 1.0
    total = 1.0
    for k in range(max_terms):
        term *= (a + k) / (b + k) * u / (k + 1)
        total += term
        if term <= tol * total:
            return total
    raise NumericalFailureError("kummer_1f1", "series did not converge", a=a, b=b, u=u, terms=max_terms)


def _asymptotic_sum(p: float, q: float, z: float, tol: float, max_terms: int) -> float:
    """sum_k (p)_k (q)_k / (k! z^k), truncated at the first term below tol or at the smallest term"""
    term = 1.0
    total = 1.0
    for k in range(max_terms):
        next_term = term * (p + k) * (q + k) / ((k + 1) * z)
        if abs(next_term) >= abs(term):
            break
        term = next_term
        total += term
        if abs(term) <= tol * abs(total):
            break
    return total


def _log_kummer_large(a: float, b: float, u: float, tol: float, max_terms: int) -> float:
    """
    Large-argument expansion of log 1F1(a; b; u), |u| > 700:

        u > 0:  log G(b) - log G(a) + u + (a - b) log u + log S(b - a, 1 - a; u)
        u < 0:  log G(b) - log G(b - a) - a log|u| + log S(a, a - b + 1; |u|)

    dropping the exponentially small companion term.
    """
    if u > 0.0:
        series = _asymptotic_sum(b - a, 1 - a, u, tol, max_terms)
        return special.gammaln(b) - special.gammaln(a) + u + (a - b) * math.log(u) + math.log(series)
    z = -u
    series = _asymptotic_sum(a, a - b + 1, z, tol, max_terms)
    return special.gammaln(b) - special.gammaln(b - a) - a * math.log(z) + math.log(series)


def log_kummer_1f1(
    a: float, b: float, u: float, tol: float = SERIES_TOL, max_terms: int = MAX_SERIES_TERMS
) -> float:
    """
    log 1F1(a; b; u) for a >= 0, b > 0.

    Negative arguments go through Kummer's transformation
    1F1(a; b; u) = e^u 1F1(b - a; b; -u), so the series summed always has
    positive terms; that needs a <= b. Past |u| = 700 the large-argument
    expansion replaces the power series.
    """
    if b <= 0 or a < 0:
        raise InvalidInputError("kummer parameters", "need a >= 0 and b > 0", a=a, b=b)
    if not np.isfinite(u):
        raise InvalidInputError("kummer argument", "must be finite", u=u)
    if u == 0.0 or a == 0.0:
        return 0.0
    if u < 0.0 and a > b:
        raise InvalidInputError("kummer parameters", "negative arguments need a <= b", a=a, b=b, u=u)
    if u < 0.0 and b == a:
        return u
    if abs(u) > ASYMPTOTIC_KUMMER_ARG:
        return _log_kummer_large(a, b, u, tol, max_terms)
    if u > 0.0:
        return math.log(_kummer_series(a, b, u, tol, max_terms))
    return u + math.log(_kummer_series(b - a, b, -u, tol, max_terms))


def kummer_1f1(
    a: float, b: float, u: float, tol: float = SERIES_TOL, max_terms: int = MAX_SERIES_TERMS
) -> float:
    """Confluent hypergeometric function 1F1(a; b; u)"""
    if 0.0 < u <= ASYMPTOTIC_KUMMER_ARG:
        if b <= 0 or a < 0:
            raise InvalidInputError("kummer parameters", "need a >= 0 and b > 0", a=a, b=b)
        if a == 0.0:
            return 1.0
        return _kummer_series(a, b, u, tol, max_terms)
    log_value = log_kummer_1f1(a, b, u, tol, max_terms)
    if log_value > MAX_LOG_FLOAT:
        raise SaturationError("kummer_1f1", "value outside representable range", a=a, b=b, u=u)
    return math.exp(log_value)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise InvalidInputError("fit", "need at least two paired points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise InvalidInputError("fit", "log-log fit needs positive finite values")
    log_x = np.log(x)
    if np.ptp(log_x) == 0.0:
        raise InvalidInputError("fit", "zero variance in x")
    return float(stats.linregress(log_x, np.log(y)).slope)
