"""Vector spaces, box domains and the PDF / realizer / random-variable hierarchy.

Points are plain 1-d ``numpy`` arrays. A :class:`VectorSpace` carries the
dimension and optional component names, a :class:`BoxSubset` the (inclusive)
bounds of a domain. Every density in the catalog is normalized and returns
``-inf`` as its log-value outside its support.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special
from scipy.linalg import cho_solve, solve_triangular

__all__ = [
    "ContractError",
    "ImproperMeasureError",
    "VectorSpace",
    "BoxSubset",
    "CovarianceMatrix",
    "ScalarFunction",
    "JointPdf",
    "UniformJointPdf",
    "GaussianJointPdf",
    "GammaJointPdf",
    "LogNormalJointPdf",
    "BetaJointPdf",
    "JeffreysJointPdf",
    "Realizer",
    "RandomVariable",
    "box_contains",
    "log_mean_exp",
    "log_normalization_estimate",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Raised when arguments violate a documented precondition."""


class ImproperMeasureError(ValueError):
    """Raised when drawing from a measure that cannot be normalized."""


@dataclass(frozen=True)
class VectorSpace:
    dim: int
    prefix: str = "param_"
    component_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ContractError(f"vector space dimension must be >= 1, got {self.dim}")
        if self.component_names is not None:
            names = tuple(self.component_names)
            if len(names) != self.dim:
                raise ContractError(
                    f"expected {self.dim} component names, got {len(names)}"
                )
            object.__setattr__(self, "component_names", names)

    def zero_vector(self) -> np.ndarray:
        return np.zeros(self.dim)

    def check(self, p) -> np.ndarray:
        """Return ``p`` as a float array, raising if its length is wrong."""
        arr = np.atleast_1d(np.asarray(p, dtype=float))
        if arr.shape != (self.dim,):
            raise ContractError(
                f"point of shape {arr.shape} does not belong to a {self.dim}-d space"
            )
        return arr


@dataclass(frozen=True)
class BoxSubset:
    """Axis-aligned box ``mins <= x <= maxs`` (bounds inclusive).

    Infinite bounds are allowed and make the box unbounded.
    """

    mins: np.ndarray
    maxs: np.ndarray
    space: VectorSpace = None
    prefix: str = ""

    def __post_init__(self):
        mins = np.atleast_1d(np.asarray(self.mins, dtype=float)).copy()
        maxs = np.atleast_1d(np.asarray(self.maxs, dtype=float)).copy()
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ContractError("box bounds must be 1-d arrays of equal length")
        if np.any(np.isnan(mins)) or np.any(np.isnan(maxs)):
            raise ContractError("box bounds must not be NaN")
        if np.any(mins > maxs):
            raise ContractError(f"box has mins > maxs: {mins} vs {maxs}")
        space = self.space if self.space is not None else VectorSpace(mins.size)
        if space.dim != mins.size:
            raise ContractError("box bounds do not match the space dimension")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        object.__setattr__(self, "space", space)

    @classmethod
    def unbounded(cls, dim: int) -> "BoxSubset":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.mins)) and np.all(np.isfinite(self.maxs)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.maxs - self.mins))

    def contains(self, p) -> bool:
        return box_contains(self, p)


def box_contains(domain: BoxSubset, p) -> bool:
    """True iff ``mins[i] <= p[i] <= maxs[i]`` for every component."""
    arr = domain.space.check(p)
    return bool(np.all(arr >= domain.mins) and np.all(arr <= domain.maxs))


class CovarianceMatrix:
    """Symmetric positive-definite matrix with a cached Cholesky factor."""

    def __init__(self, entries, rtol: float = 1e-12):
        a = np.atleast_2d(np.asarray(entries, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractError(f"covariance must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ContractError("covariance entries must be finite")
        scale = max(1.0, float(np.max(np.abs(a))))
        if np.max(np.abs(a - a.T)) > rtol * scale:
            raise ContractError("covariance matrix is not symmetric")
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise ContractError("covariance matrix is not positive definite") from None
        if np.any(np.diag(chol) <= 0):
            raise ContractError("covariance matrix is not positive definite")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        chol.setflags(write=False)
        self._entries = a
        self._chol = chol

    @classmethod
    def diagonal(cls, variances) -> "CovarianceMatrix":
        return cls(np.diag(np.atleast_1d(np.asarray(variances, dtype=float))))

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def solve(self, b) -> np.ndarray:
        return cho_solve((self._chol, True), b)

    def mahalanobis_sq(self, r) -> float:
        """``r^T C^{-1} r`` via a triangular solve."""
        z = solve_triangular(self._chol, np.asarray(r, dtype=float), lower=True)
        return float(z @ z)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._entries, dtype=dtype)

    def __repr__(self):
        return f"CovarianceMatrix({self._entries.tolist()!r})"


class ScalarFunction(abc.ABC):
    """A log-density (or log-likelihood) defined over a box domain."""

    domain: BoxSubset

    @abc.abstractmethod
    def ln_value(self, p) -> float:
        """Natural logarithm of the function at ``p``."""

    def actual_value(self, p) -> float:
        return math.exp(self.ln_value(p))


class JointPdf(ScalarFunction):
    """Base class for normalized densities on a box."""

    def __init__(self, domain: BoxSubset):
        self.domain = domain

    @property
    def dim(self) -> int:
        return self.domain.dim

    def ln_value(self, p) -> float:
        x = self.domain.space.check(p)
        if not (np.all(x >= self.domain.mins) and np.all(x <= self.domain.maxs)):
            return -np.inf
        return self._ln_density(x)

    @abc.abstractmethod
    def _ln_density(self, x: np.ndarray) -> float:
        """Log-density for an in-domain point."""

    def ln_values(self, xs) -> np.ndarray:
        """``ln_value`` for each row of ``xs`` (shape ``(n, dim)``)."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        inside = np.all((xs >= self.domain.mins) & (xs <= self.domain.maxs), axis=1)
        out = np.full(xs.shape[0], -np.inf)
        out[inside] = self._ln_densities(xs[inside])
        return out

    def _ln_densities(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self._ln_density(x) for x in xs], dtype=float)

    def log_normalization_factor(self, num_samples: int, rng=None) -> float:
        return log_normalization_estimate(self, num_samples, rng)


def _positive_params(name, values, dim) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(values, dtype=float), (dim,)).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ContractError(f"{name} must be finite and strictly positive, got {arr}")
    return arr


class UniformJointPdf(JointPdf):
    def __init__(self, domain: BoxSubset):
        if not domain.is_bounded:
            raise ContractError("uniform density requires a bounded box")
        if domain.volume <= 0:
            raise ContractError("uniform density requires a box of positive volume")
        super().__init__(domain)
        self._ln_const = -float(np.sum(np.log(domain.maxs - domain.mins)))

    def _ln_density(self, x):
        return self._ln_const

    def _ln_densities(self, xs):
        return np.full(xs.shape[0], self._ln_const)


class GaussianJointPdf(JointPdf):
    """Multivariate normal. With a finite ``domain`` the density is cut off
    (not renormalized) outside the box."""

    def __init__(self, mean, cov, domain: BoxSubset | None = None):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if not np.all(np.isfinite(mean)):
            raise ContractError("gaussian mean must be finite")
        if not isinstance(cov, CovarianceMatrix):
            cov_arr = np.asarray(cov, dtype=float)
            cov = CovarianceMatrix(np.diag(cov_arr) if cov_arr.ndim == 1 else cov_arr)
        if cov.dim != mean.size:
            raise ContractError("gaussian mean and covariance dimensions differ")
        super().__init__(domain if domain is not None else BoxSubset.unbounded(mean.size))
        self.mean = mean
        self.cov = cov
        self._ln_const = -0.5 * (mean.size * _LOG_2PI + cov.log_det())

    def _ln_density(self, x):
        return self._ln_const - 0.5 * self.cov.mahalanobis_sq(x - self.mean)

    def _ln_densities(self, xs):
        z = solve_triangular(self.cov.cholesky, (xs - self.mean).T, lower=True)
        return self._ln_const - 0.5 * np.sum(z * z, axis=0)


class GammaJointPdf(JointPdf):
    """Independent gamma components, shape ``k`` and scale ``theta``."""

    def __init__(self, shape, scale, dim: int | None = None):
        dim = dim or max(np.size(shape), np.size(scale))
        self.shape = _positive_params("gamma shape", shape, dim)
        self.scale = _positive_params("gamma scale", scale, dim)
        super().__init__(BoxSubset(np.zeros(dim), np.full(dim, np.inf)))
        self._ln_const = -float(np.sum(special.gammaln(self.shape) + self.shape * np.log(self.scale)))

    def _ln_density(self, x):
        with np.errstate(divide="ignore"):
            terms = special.xlogy(self.shape - 1, x) - x / self.scale
        return self._ln_const + float(np.sum(terms))


class LogNormalJointPdf(JointPdf):
    """Independent log-normal components; ``log_mean``/``log_sd`` describe
    the underlying normal."""

    def __init__(self, log_mean, log_sd, dim: int | None = None):
        dim = dim or max(np.size(log_mean), np.size(log_sd))
        self.log_mean = np.broadcast_to(np.asarray(log_mean, dtype=float), (dim,)).copy()
        if not np.all(np.isfinite(self.log_mean)):
            raise ContractError("log-normal log_mean must be finite")
        self.log_sd = _positive_params("log-normal log_sd", log_sd, dim)
        super().__init__(BoxSubset(np.zeros(dim), np.full(dim, np.inf)))

    def _ln_density(self, x):
        if np.any(x <= 0):
            return -np.inf
        lx = np.log(x)
        z = (lx - self.log_mean) / self.log_sd
        return float(np.sum(-0.5 * z * z - lx - np.log(self.log_sd) - 0.5 * _LOG_2PI))


class BetaJointPdf(JointPdf):
    def __init__(self, a, b, dim: int | None = None):
        dim = dim or max(np.size(a), np.size(b))
        self.a = _positive_params("beta a", a, dim)
        self.b = _positive_params("beta b", b, dim)
        super().__init__(BoxSubset(np.zeros(dim), np.ones(dim)))
        self._ln_const = -float(np.sum(special.betaln(self.a, self.b)))

    def _ln_density(self, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = special.xlogy(self.a - 1, x) + special.xlog1py(self.b - 1, -x)
        val = self._ln_const + float(np.sum(terms))
        return val if not math.isnan(val) else -np.inf


class JeffreysJointPdf(JointPdf):
    """Density proportional to ``prod 1/x_i`` on a box with ``mins >= 0``.

    Normalized when ``0 < mins`` and ``maxs < inf``; otherwise the measure is
    improper, ``ln_value`` returns the unnormalized value and drawing raises
    :class:`ImproperMeasureError`.
    """

    def __init__(self, domain: BoxSubset):
        if np.any(domain.mins < 0):
            raise ContractError("Jeffreys density requires non-negative box bounds")
        super().__init__(domain)
        self.proper = bool(np.all(domain.mins > 0) and np.all(np.isfinite(domain.maxs)))
        self._ln_const = (
            -float(np.sum(np.log(np.log(domain.maxs / domain.mins)))) if self.proper else 0.0
        )

    def _ln_density(self, x):
        if np.any(x <= 0):
            return -np.inf
        return self._ln_const - float(np.sum(np.log(x)))


class Realizer(abc.ABC):
    """Draw mechanism paired with a density. Holds no RNG state of its own."""

    @abc.abstractmethod
    def realization(self, rng: np.random.Generator) -> np.ndarray:
        ...


class _UniformRealizer(Realizer):
    def __init__(self, pdf: UniformJointPdf):
        self.pdf = pdf

    def realization(self, rng):
        d = self.pdf.domain
        return rng.uniform(d.mins, d.maxs)


class _GaussianRealizer(Realizer):
    max_tries = 100_000

    def __init__(self, pdf: GaussianJointPdf):
        self.pdf = pdf

    def realization(self, rng):
        pdf = self.pdf
        for _ in range(self.max_tries):
            x = pdf.mean + pdf.cov.cholesky @ rng.standard_normal(pdf.dim)
            if np.all(x >= pdf.domain.mins) and np.all(x <= pdf.domain.maxs):
                return x
        raise RuntimeError("rejection sampling of the truncated gaussian did not succeed")


class _GammaRealizer(Realizer):
    def __init__(self, pdf: GammaJointPdf):
        self.pdf = pdf

    def realization(self, rng):
        return rng.gamma(self.pdf.shape, self.pdf.scale)


class _LogNormalRealizer(Realizer):
    def __init__(self, pdf: LogNormalJointPdf):
        self.pdf = pdf

    def realization(self, rng):
        return rng.lognormal(self.pdf.log_mean, self.pdf.log_sd)


class _BetaRealizer(Realizer):
    def __init__(self, pdf: BetaJointPdf):
        self.pdf = pdf

    def realization(self, rng):
        return rng.beta(self.pdf.a, self.pdf.b)


class _JeffreysRealizer(Realizer):
    def __init__(self, pdf: JeffreysJointPdf):
        self.pdf = pdf

    def realization(self, rng):
        if not self.pdf.proper:
            raise ImproperMeasureError(
                "cannot draw from an improper Jeffreys measure; "
                "bound the box away from 0 and infinity"
            )
        d = self.pdf.domain
        return np.exp(rng.uniform(np.log(d.mins), np.log(d.maxs)))


_REALIZERS = {
    UniformJointPdf: _UniformRealizer,
    GaussianJointPdf: _GaussianRealizer,
    GammaJointPdf: _GammaRealizer,
    LogNormalJointPdf: _LogNormalRealizer,
    BetaJointPdf: _BetaRealizer,
    JeffreysJointPdf: _JeffreysRealizer,
}


@dataclass
class RandomVariable:
    """A density together with the mechanism used to draw from it."""

    pdf: ScalarFunction
    realizer: Realizer
    domain: BoxSubset = field(default=None)
    prefix: str = ""

    def __post_init__(self):
        if self.domain is None:
            self.domain = self.pdf.domain

    @classmethod
    def from_pdf(cls, pdf: JointPdf, prefix: str = "") -> "RandomVariable":
        try:
            realizer = _REALIZERS[type(pdf)](pdf)
        except KeyError:
            raise ContractError(f"no realizer registered for {type(pdf).__name__}") from None
        return cls(pdf, realizer, pdf.domain, prefix)

    @classmethod
    def uniform(cls, domain: BoxSubset, prefix: str = "") -> "RandomVariable":
        return cls.from_pdf(UniformJointPdf(domain), prefix)

    @classmethod
    def gaussian(cls, mean, cov, domain=None, prefix: str = "") -> "RandomVariable":
        return cls.from_pdf(GaussianJointPdf(mean, cov, domain), prefix)

    @classmethod
    def gamma(cls, shape, scale, prefix: str = "") -> "RandomVariable":
        return cls.from_pdf(GammaJointPdf(shape, scale), prefix)

    @classmethod
    def lognormal(cls, log_mean, log_sd, prefix: str = "") -> "RandomVariable":
        return cls.from_pdf(LogNormalJointPdf(log_mean, log_sd), prefix)

    @classmethod
    def beta(cls, a, b, prefix: str = "") -> "RandomVariable":
        return cls.from_pdf(BetaJointPdf(a, b), prefix)

    @classmethod
    def jeffreys(cls, domain: BoxSubset, prefix: str = "") -> "RandomVariable":
        return cls.from_pdf(JeffreysJointPdf(domain), prefix)

    def draw(self, rng) -> np.ndarray:
        return self.realizer.realization(np.random.default_rng(rng))


def log_mean_exp(values) -> float:
    """``log(mean(exp(values)))`` with max-shift stabilization."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ContractError("log_mean_exp of an empty array")
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.mean(np.exp(v - m))))


def log_normalization_estimate(pdf: ScalarFunction, num_samples: int, rng=None) -> float:
    """Monte Carlo estimate of ``ln`` of the integral of ``pdf`` over its box.

    Uses uniform draws on the domain: ``ln(volume) + log_mean_exp(ln_value)``.
    The estimator is exact for densities that are constant on the box.
    """
    domain = pdf.domain
    if not domain.is_bounded:
        raise ContractError("cannot estimate normalization on unbounded box")
    if num_samples < 1:
        raise ContractError("num_samples must be >= 1")
    rng = np.random.default_rng(rng)
    xs = rng.uniform(domain.mins, domain.maxs, size=(int(num_samples), domain.dim))
    if isinstance(pdf, JointPdf):
        lv = pdf.ln_values(xs)
    else:
        lv = np.array([pdf.ln_value(x) for x in xs])
    return float(np.sum(np.log(domain.maxs - domain.mins))) + log_mean_exp(lv)


def as_points(samples: Sequence, dim: int | None = None) -> np.ndarray:
    """Stack a sequence of points into an ``(n, dim)`` float array."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if dim in (None, 1) else arr.reshape(-1, dim)
    return arr
