"""Gaussian measures on functions over [0, 1] and the pCN sampler.

Functions are represented by their coefficients in the Dirichlet sine basis
``phi_k(x) = sqrt(2) sin(k pi x)``, the eigenfunctions of the negative
Laplacian with eigenvalues ``mu_k = (k pi)**2``. A Gaussian measure with
precision ``beta * (-Laplacian)**alpha`` then has independent coefficients
with variances ``lambda_k = 1 / (beta * mu_k**alpha)`` (a Karhunen-Loeve
expansion truncated at ``K`` terms).

The preconditioned Crank-Nicolson proposal

    v = mean + sqrt(1 - s**2) (u - mean) + s * xi,   xi ~ N(0, C)

leaves the prior invariant, so the acceptance probability only involves the
log-likelihood and does not degrade as ``K`` grows.
"""

from __future__ import annotations

import abc
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PcnOptions

logger = logging.getLogger(__name__)

__all__ = [
    "SpectralFunction",
    "LaplacianGaussianMeasure",
    "FunctionLikelihood",
    "PointObservationLikelihood",
    "PcnSampler",
    "PcnResult",
    "laplacian_eigenpair",
    "evaluate_function",
    "prior_draw",
    "pcn_propose",
    "pcn_step",
    "run_pcn",
    "write_pcn_chain",
    "read_pcn_chain",
    "grid_values",
]

GRID_POINTS = 129


def laplacian_eigenpair(k: int):
    """Eigenvalue ``(k pi)**2`` and eigenfunction ``sqrt(2) sin(k pi x)``."""
    if int(k) != k or k < 1:
        raise ValueError(f"eigenpair index must be a positive integer, got {k}")
    mu = (k * math.pi) ** 2

    def phi(x):
        return math.sqrt(2.0) * np.sin(k * math.pi * np.asarray(x, dtype=float))

    return mu, phi


@dataclass(frozen=True)
class SpectralFunction:
    """Function ``u(x) = sum_k coeffs[k-1] * phi_k(x)`` on [0, 1]."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size < 1:
            raise ValueError("a spectral function needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return self.coeffs.size

    @classmethod
    def zero(cls, K: int) -> "SpectralFunction":
        return cls(np.zeros(K))

    def __call__(self, x):
        return evaluate_function(self, x)

    def __mul__(self, a: float) -> "SpectralFunction":
        return SpectralFunction(a * self.coeffs)

    __rmul__ = __mul__

    def __add__(self, other: "SpectralFunction") -> "SpectralFunction":
        return SpectralFunction(self.coeffs + other.coeffs)


def evaluate_function(u: SpectralFunction, x):
    """Point values of ``u``; ``x`` may be a scalar or an array in [0, 1]."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0.0) or np.any(xa > 1.0) or np.any(np.isnan(xa)):
        raise ValueError("evaluation points must lie in [0, 1]")
    k = np.arange(1, u.K + 1)
    basis = math.sqrt(2.0) * np.sin(np.multiply.outer(xa, k) * math.pi)
    return basis @ u.coeffs


def grid_values(u: SpectralFunction, n: int = GRID_POINTS):
    """``(x, u(x))`` on ``n`` uniformly spaced points, for plotting."""
    x = np.linspace(0.0, 1.0, n)
    return x, evaluate_function(u, x)


class LaplacianGaussianMeasure:
    """Gaussian measure with precision ``beta * (-Laplacian)**alpha``.

    Parameters
    ----------
    K : int
        Number of retained eigenpairs.
    alpha : float
        Power of the Laplacian, > 1/2 so that the covariance is trace class.
    beta : float
        Precision coefficient, > 0.
    mean : SpectralFunction, optional
        Defaults to the zero function.
    """

    def __init__(self, K: int, alpha: float = 1.0, beta: float = 1.0,
                 mean: SpectralFunction | None = None):
        if int(K) != K or K < 1:
            raise ValueError("K must be a positive integer")
        if not alpha > 0.5:
            raise ValueError("alpha must exceed 1/2")
        if not beta > 0:
            raise ValueError("beta must be positive")
        self.K = int(K)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.mean = mean if mean is not None else SpectralFunction.zero(self.K)
        if self.mean.K != self.K:
            raise ValueError("mean truncation differs from K")
        k = np.arange(1, self.K + 1)
        self.laplacian_eigenvalues = (k * math.pi) ** 2
        self.eigenvalues = 1.0 / (self.beta * self.laplacian_eigenvalues ** self.alpha)
        self.sqrt_eigenvalues = np.sqrt(self.eigenvalues)

    def draw(self, rng) -> SpectralFunction:
        return prior_draw(self, rng)


def prior_draw(measure: LaplacianGaussianMeasure, rng) -> SpectralFunction:
    rng = np.random.default_rng(rng)
    xi = rng.standard_normal(measure.K)
    return SpectralFunction(measure.mean.coeffs + measure.sqrt_eigenvalues * xi)


def pcn_propose(u: SpectralFunction, measure: LaplacianGaussianMeasure, step: float,
                rng) -> SpectralFunction:
    if not 0.0 <= step <= 1.0:
        raise ValueError(f"pCN step must lie in [0, 1], got {step}")
    rng = np.random.default_rng(rng)
    xi = rng.standard_normal(measure.K)
    m = measure.mean.coeffs
    if step == 0.0:
        return u
    v = m + math.sqrt(1.0 - step * step) * (u.coeffs - m) + step * measure.sqrt_eigenvalues * xi
    return SpectralFunction(v)


class FunctionLikelihood(abc.ABC):
    """Log-likelihood of a function. Must be a pure function of ``u``."""

    @abc.abstractmethod
    def evaluate(self, u: SpectralFunction) -> float:
        ...


class PointObservationLikelihood(FunctionLikelihood):
    """Independent Gaussian observations ``y_j = u(x_j) + noise``."""

    def __init__(self, x_obs, y_obs, sigma: float):
        self.x_obs = np.asarray(x_obs, dtype=float)
        self.y_obs = np.asarray(y_obs, dtype=float)
        if self.x_obs.shape != self.y_obs.shape:
            raise ValueError("observation locations and values differ in shape")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)

    def evaluate(self, u):
        r = evaluate_function(u, self.x_obs) - self.y_obs
        return -0.5 * float(r @ r) / self.sigma ** 2


def pcn_step(u: SpectralFunction, ln_like_u: float, llhd: FunctionLikelihood,
             measure: LaplacianGaussianMeasure, step: float, rng):
    """One pCN transition.

    Returns
    -------
    u_next, ln_like_next, accepted, acc_prob, failed
    """
    rng = np.random.default_rng(rng)
    v = pcn_propose(u, measure, step, rng)
    lv = float(llhd.evaluate(v))
    failed = not math.isfinite(lv) and lv != -math.inf
    if failed or lv == -math.inf:
        acc_prob = 0.0
    else:
        gap = lv - ln_like_u
        acc_prob = 1.0 if gap >= 0 else math.exp(gap)
    accepted = rng.random() < acc_prob
    if accepted:
        return v, lv, True, acc_prob, failed
    return u, ln_like_u, False, acc_prob, failed


class PcnSampler:
    """Stepwise pCN sampler exposing the running acceptance average.

    >>> s = PcnSampler(measure, llhd, PcnOptions(), rng=0)     # doctest: +SKIP
    >>> for i in range(opts.num_iters):                         # doctest: +SKIP
    ...     s.step()
    ...     print(s.avg_acc_prob(), s.llhd_val())
    """

    def __init__(self, measure: LaplacianGaussianMeasure, llhd: FunctionLikelihood,
                 opts: PcnOptions | None = None, rng=None, initial: SpectralFunction | None = None):
        self.measure = measure
        self.llhd = llhd
        self.opts = opts if opts is not None else PcnOptions()
        self.rng = np.random.default_rng(rng)
        self.current = initial if initial is not None else measure.mean
        self._ln_like = float(llhd.evaluate(self.current))
        self.iteration = 0
        self.accepted = 0
        self.failures = 0
        self._acc_sum = 0.0

    def step(self) -> SpectralFunction:
        u, ll, accepted, acc_prob, failed = pcn_step(
            self.current, self._ln_like, self.llhd, self.measure, self.opts.rwmh_step, self.rng)
        self.current, self._ln_like = u, ll
        self.iteration += 1
        self.accepted += accepted
        self.failures += failed
        self._acc_sum += acc_prob
        return u

    def avg_acc_prob(self) -> float:
        return self._acc_sum / self.iteration if self.iteration else float("nan")

    def acceptance_rate(self) -> float:
        return self.accepted / self.iteration if self.iteration else float("nan")

    def llhd_val(self) -> float:
        return self._ln_like


@dataclass
class PcnResult:
    iterations: np.ndarray
    coeffs: np.ndarray
    acc_prob_avg: np.ndarray
    ln_like: np.ndarray
    avg_acc_prob: float
    acceptance_rate: float
    failures: int = 0
    measure: LaplacianGaussianMeasure | None = field(default=None, repr=False)

    def __len__(self):
        return self.coeffs.shape[0]

    def functions(self) -> list[SpectralFunction]:
        return [SpectralFunction(c) for c in self.coeffs]


def run_pcn(measure: LaplacianGaussianMeasure, llhd: FunctionLikelihood,
            opts: PcnOptions | None = None, rng=None,
            initial: SpectralFunction | None = None) -> PcnResult:
    """Run ``num_iters`` pCN steps, keeping every ``save_freq``-th state
    (iterations ``save_freq, 2*save_freq, ...``)."""
    opts = opts if opts is not None else PcnOptions()
    s = PcnSampler(measure, llhd, opts, rng, initial)
    its, coeffs, accs, lls = [], [], [], []
    for i in range(1, opts.num_iters + 1):
        s.step()
        if i % opts.save_freq == 0:
            its.append(i)
            coeffs.append(s.current.coeffs)
            accs.append(s.avg_acc_prob())
            lls.append(s.llhd_val())
        if i % 100 == 0:
            logger.debug("pCN iteration %d: avg acc prob %.4f, ln like %.6g",
                         i, s.avg_acc_prob(), s.llhd_val())
    return PcnResult(np.array(its, dtype=int),
                     np.array(coeffs).reshape(len(its), measure.K),
                     np.array(accs), np.array(lls),
                     s.avg_acc_prob(), s.acceptance_rate(), s.failures, measure)


def write_pcn_chain(result: PcnResult, path) -> None:
    """CSV with columns ``iter,acc_prob_avg,ln_like,c_1..c_K``."""
    K = result.coeffs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "acc_prob_avg", "ln_like"] + [f"c_{k}" for k in range(1, K + 1)])
        for it, a, ll, c in zip(result.iterations, result.acc_prob_avg, result.ln_like,
                                result.coeffs):
            w.writerow([int(it), f"{a:.17g}", f"{ll:.17g}"] + [f"{v:.17g}" for v in c])


def read_pcn_chain(path) -> PcnResult:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return PcnResult(data[:, 0].astype(int), data[:, 3:], data[:, 1], data[:, 2],
                     float(data[-1, 1]) if len(data) else float("nan"), float("nan"))
