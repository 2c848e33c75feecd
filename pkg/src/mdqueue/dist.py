"""Service-time distribution families with exact cdf/pdf and stationary-excess laws.

Supported families all have analytic cdf and density: exponential, Erlang and
hyperexponential mixtures.  Tabulated or atomic distributions are rejected by
construction; the downstream solvers need F' everywhere and a strictly
increasing F for the inverse maps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

__all__ = ["ServiceDist"]

_INV_TOL = 1e-12


def _check_nonneg(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("time argument must be nonnegative")
    return x


@dataclass(frozen=True)
class ServiceDist:
    """Absolutely continuous service-time law on (0, inf).

    family: "exponential" | "erlang" | "hyperexponential"
    rates:  positive rate parameters (one per mixture branch; a single rate
            for exponential/erlang)
    shape:  Erlang integer shape (1 for the other families)
    weights: mixture weights summing to 1
    """

    family: str
    rates: np.ndarray
    shape: int = 1
    weights: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        object.__setattr__(self, "rates", np.atleast_1d(np.asarray(self.rates, dtype=float)))
        object.__setattr__(self, "weights", np.atleast_1d(np.asarray(self.weights, dtype=float)))
        if self.family not in ("exponential", "erlang", "hyperexponential"):
            raise ValueError(f"unsupported family: {self.family!r}")
        if np.any(self.rates <= 0):
            raise ValueError("rates must be positive")
        if self.shape < 1 or self.shape != int(self.shape):
            raise ValueError("shape must be an integer >= 1")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if self.family == "hyperexponential" and len(self.rates) != len(self.weights):
            raise ValueError("weights and rates must have equal length")

    # -- constructors ------------------------------------------------------

    @classmethod
    def exponential(cls, rate: float) -> "ServiceDist":
        return cls("exponential", rates=np.array([rate]))

    @classmethod
    def erlang(cls, shape: int, rate: float) -> "ServiceDist":
        return cls("erlang", rates=np.array([rate]), shape=int(shape))

    @classmethod
    def hyperexponential(cls, weights, rates) -> "ServiceDist":
        return cls("hyperexponential", rates=np.asarray(rates), weights=np.asarray(weights))

    @classmethod
    def from_spec(cls, spec: dict) -> "ServiceDist":
        """Build from the JSON config block {"family": ..., parameters}."""
        spec = dict(spec)
        family = spec.pop("family", None)
        if family == "exponential":
            d = cls.exponential(spec.pop("rate"))
        elif family == "erlang":
            d = cls.erlang(spec.pop("shape"), spec.pop("rate"))
        elif family == "hyperexponential":
            d = cls.hyperexponential(spec.pop("weights"), spec.pop("rates"))
        else:
            raise ValueError(f"unsupported distribution family: {family!r}")
        if spec:
            raise ValueError(f"unknown distribution keys: {sorted(spec)}")
        return d

    # -- moments -----------------------------------------------------------

    @property
    def mean(self) -> float:
        if self.family == "exponential":
            return 1.0 / self.rates[0]
        if self.family == "erlang":
            return self.shape / self.rates[0]
        return float(np.sum(self.weights / self.rates))

    @property
    def mu(self) -> float:
        """Service rate, the reciprocal mean."""
        return 1.0 / self.mean

    # -- cdf / pdf ---------------------------------------------------------

    def cdf(self, x):
        x = _check_nonneg(x)
        if self.family == "exponential":
            return -np.expm1(-self.rates[0] * x)
        if self.family == "erlang":
            return gammainc(self.shape, self.rates[0] * x)
        return np.sum(self.weights[:, None] * -np.expm1(-np.outer(self.rates, np.atleast_1d(x))), axis=0).reshape(np.shape(x))

    def pdf(self, x):
        x = _check_nonneg(x)
        if self.family == "exponential":
            lam = self.rates[0]
            return lam * np.exp(-lam * x)
        if self.family == "erlang":
            lam, k = self.rates[0], self.shape
            from scipy.special import gammaln

            logpdf = k * np.log(lam) + np.where(x > 0, (k - 1) * np.log(np.maximum(x, 1e-300)), 0.0) - lam * x - gammaln(k)
            dens = np.exp(logpdf)
            if k > 1:
                dens = np.where(x > 0, dens, 0.0)
            return dens
        return np.sum(
            (self.weights * self.rates)[:, None] * np.exp(-np.outer(self.rates, np.atleast_1d(x))), axis=0
        ).reshape(np.shape(x))

    def survival(self, x):
        return 1.0 - self.cdf(x)

    # -- stationary excess (equilibrium) law -------------------------------

    def eq_cdf(self, x):
        """F0(x) = mu * int_0^x (1 - F(y)) dy, in closed form per family."""
        x = _check_nonneg(x)
        if self.family == "exponential":
            return self.cdf(x)
        if self.family == "erlang":
            lam, k = self.rates[0], self.shape
            acc = 0.0
            for j in range(1, k + 1):
                acc = acc + gammainc(j, lam * x)
            return acc / k
        integr = np.sum(
            (self.weights / self.rates)[:, None] * -np.expm1(-np.outer(self.rates, np.atleast_1d(x))), axis=0
        ).reshape(np.shape(x))
        return self.mu * integr

    def eq_pdf(self, x):
        """F0'(x) = mu * (1 - F(x)); bounded by mu."""
        return self.mu * self.survival(x)

    # -- monotone inverses -------------------------------------------------

    def _inverse(self, fn, dfn, p: float) -> float:
        """Safeguarded bisection/Newton solve of fn(x) = p to 1e-12."""
        if p < 0 or p >= 1:
            if p == 1.0:
                return np.inf
            raise ValueError("probability must be in [0, 1)")
        if p == 0.0:
            return 0.0
        lo, hi = 0.0, self.mean
        while fn(hi) < p:
            hi *= 2.0
            if hi > 1e12:
                raise RuntimeError("inverse bracket growth failed")
        x = 0.5 * (lo + hi)
        for _ in range(200):
            fx = float(fn(x)) - p
            if fx > 0:
                hi = x
            else:
                lo = x
            d = float(dfn(x))
            step = fx / d if d > 0 else np.inf
            x_new = x - step
            if not (lo < x_new < hi):
                x_new = 0.5 * (lo + hi)
            if abs(x_new - x) < _INV_TOL:
                return x_new
            x = x_new
        return x

    def ppf(self, p: float) -> float:
        """F^{-1}(p)."""
        if self.family == "exponential":
            if p >= 1.0:
                return np.inf
            return float(-np.log1p(-p) / self.rates[0])
        return self._inverse(self.cdf, self.pdf, p)

    def eq_ppf(self, p: float) -> float:
        """F0^{-1}(p)."""
        if self.family == "exponential":
            return self.ppf(p)
        return self._inverse(self.eq_cdf, self.eq_pdf, p)

    def horizon_for_tail(self, eps: float) -> float:
        """Smallest T with 1 - F(T) <= eps."""
        return self.ppf(1.0 - eps)

    # -- sampling ----------------------------------------------------------

    def sample(self, rng: np.random.Generator, size=None):
        """Draw from F by exact structural sampling."""
        if self.family == "exponential":
            return rng.exponential(1.0 / self.rates[0], size=size)
        if self.family == "erlang":
            return rng.gamma(self.shape, 1.0 / self.rates[0], size=size)
        branch = rng.choice(len(self.weights), size=size, p=self.weights)
        scale = 1.0 / self.rates[branch]
        return rng.exponential(scale)

    def sample_equilibrium(self, rng: np.random.Generator, size=None):
        """Draw from F0 (inverse transform for the non-memoryless families)."""
        if self.family == "exponential":
            return self.sample(rng, size=size)
        u = rng.random(size=size)
        if np.isscalar(u) or u.ndim == 0:
            return self.eq_ppf(float(u))
        return np.array([self.eq_ppf(float(ui)) for ui in u])
