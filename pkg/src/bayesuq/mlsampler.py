"""Multi-level (adaptive tempering) sampler with evidence estimation.

The posterior is reached through a ladder of intermediate targets
``prior(theta) * like(theta)**tau`` with ``0 = tau_0 < tau_1 < ... = 1``.
Each level

1. picks ``tau_next`` so that the effective-sample-size ratio of the
   incremental weights ``like**(tau_next - tau)`` lands in
   ``[min_effective_size_ratio, max_effective_size_ratio]``;
2. adds ``log(mean(weights))`` to the running log-evidence;
3. resamples the particles systematically;
4. moves every particle with a few random-walk Metropolis steps targeting the
   new tempered density. The proposal covariance follows the weighted
   particle covariance and its scale is doubled/halved between levels to keep
   the rejection rate inside ``[min_rejection_rate, max_rejection_rate]``.

Per-particle random streams are derived from ``(root seed, level, index)``,
so results do not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import MlOptions
from .core import RandomVariable, ScalarFunction, log_mean_exp

logger = logging.getLogger(__name__)

__all__ = [
    "DegenerateLevelError",
    "Level",
    "EvidenceAccumulator",
    "MultilevelResult",
    "ess_ratio",
    "next_temperature",
    "systematic_resample",
    "run_multilevel",
]


class DegenerateLevelError(RuntimeError):
    def __init__(self, level: int):
        self.level = level
        super().__init__(f"degenerate level {level}: all importance weights are zero")


def ess_ratio(weights) -> float:
    """Normalized effective sample size ``(sum w)**2 / (N * sum w**2)``."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or not np.any(w > 0):
        raise DegenerateLevelError(-1)
    w = w / np.max(w)
    return float(np.sum(w) ** 2 / (w.size * np.sum(w * w)))


def _ess_from_log(log_w: np.ndarray) -> float:
    m = np.max(log_w)
    if m == -np.inf:
        return 0.0
    return ess_ratio(np.exp(log_w - m))


def next_temperature(ln_like, tau_curr: float, opts: MlOptions | None = None,
                     max_iter: int = 100) -> float:
    """Largest ``tau_next <= 1`` keeping the ESS ratio of the incremental
    weights ``exp((tau_next - tau_curr) * ln_like)`` at or above the band's
    lower edge; returns 1 when the full step already does."""
    opts = opts if opts is not None else MlOptions()
    if not 0.0 <= tau_curr < 1.0:
        raise ValueError(f"tau_curr must lie in [0, 1), got {tau_curr}")
    ll = np.asarray(ln_like, dtype=float)
    finite = ll > -np.inf

    def ess(tau):
        with np.errstate(invalid="ignore"):
            log_w = np.where(finite, (tau - tau_curr) * ll, -np.inf)
        return _ess_from_log(log_w)

    lo_ess = opts.min_effective_size_ratio
    if ess(1.0) >= lo_ess:
        return 1.0
    # ess(tau_curr) = 1 > lo_ess > ess(1): bisect on the crossing
    lo, hi = tau_curr, 1.0
    for _ in range(max_iter):
        if hi - lo <= 1e-14:
            break
        mid = 0.5 * (lo + hi)
        if ess(mid) >= lo_ess:
            lo = mid
        else:
            hi = mid
    else:
        mid = 0.5 * (lo + hi)
        warnings.warn(f"tempering bisection did not converge; using tau={mid}")
        return mid
    return lo if lo > tau_curr else hi


def systematic_resample(weights, u: float) -> np.ndarray:
    """Indices chosen by systematic resampling with offset ``u`` in [0, 1)."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    cdf = np.cumsum(w / np.sum(w))
    cdf[-1] = 1.0
    points = (u + np.arange(n)) / n
    return np.searchsorted(cdf, points, side="right")


@dataclass
class Level:
    tau: float
    particles: np.ndarray
    ln_like: np.ndarray
    log_weights: np.ndarray
    proposal_cov: np.ndarray
    ess: float
    rejection_rate: float = float("nan")


@dataclass
class EvidenceAccumulator:
    terms: list = field(default_factory=list)

    def add(self, log_weights) -> float:
        term = log_mean_exp(log_weights)
        self.terms.append(term)
        return term

    @property
    def ln_evidence(self) -> float:
        return float(sum(self.terms))


@dataclass
class MultilevelResult:
    particles: np.ndarray
    ln_like: np.ndarray
    ln_evidence: float
    levels: list

    @property
    def taus(self) -> list[float]:
        return [lv.tau for lv in self.levels]


def _weighted_cov(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    w = w / np.sum(w)
    mu = w @ x
    dx = x - mu
    c = (dx * w[:, None]).T @ dx
    denom = 1.0 - np.sum(w * w)
    if denom > 0:
        c = c / denom
    return 0.5 * (c + c.T)


def _mutate(args):
    (x, lp, ll, tau, chol, n_steps, seed_seq, ln_prior, ln_like) = args
    rng = np.random.default_rng(seed_seq)
    rejects = 0
    d = x.size
    for _ in range(n_steps):
        y = x + chol @ rng.standard_normal(d)
        lpy = float(ln_prior(y))
        if lpy == -math.inf or math.isnan(lpy):
            rejects += 1
            rng.random()
            continue
        lly = float(ln_like(y))
        if math.isnan(lly):
            lly = -math.inf
        gap = (lpy + tau * lly) - (lp + tau * ll) if lly > -math.inf else -math.inf
        if math.log(rng.random()) < gap:
            x, lp, ll = y, lpy, lly
        else:
            rejects += 1
    return x, lp, ll, rejects


def _log_fn(f):
    return f.ln_value if isinstance(f, ScalarFunction) else f


def run_multilevel(prior: RandomVariable, ln_like, opts: MlOptions | None = None, rng=None, *,
                   n_mutation_steps: int = 5, n_workers: int = 1) -> MultilevelResult:
    """Sample ``prior * like`` by adaptive tempering and estimate ``ln Z``.

    Parameters
    ----------
    prior : RandomVariable
        Proper prior; used both for initial draws and as the base density.
    ln_like : ScalarFunction or callable
        Log-likelihood.
    opts : MlOptions, optional
        ``raw_chain_size`` is the number of particles.
    rng : int or numpy.random.Generator, optional
    n_mutation_steps : int
        Metropolis steps per particle and level (capped at ``raw_chain_size``).
    n_workers : int
        Threads used for the mutation step.
    """
    opts = opts if opts is not None else MlOptions()
    rng = np.random.default_rng(rng)
    root = int(rng.integers(2 ** 63))
    ln_prior = prior.pdf.ln_value
    ln_l = _log_fn(ln_like)
    n = opts.raw_chain_size
    n_steps = max(1, min(int(n_mutation_steps), n))

    init_rng = np.random.default_rng(np.random.SeedSequence([root, 0]))
    x = np.array([prior.draw(init_rng) for _ in range(n)], dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[1]
    lp = np.array([ln_prior(p) for p in x])
    ll = np.array([ln_l(p) for p in x], dtype=float)
    ll[np.isnan(ll)] = -np.inf

    evidence = EvidenceAccumulator()
    levels: list[Level] = []
    tau = 0.0
    scale = 2.38 ** 2 / d
    prev_cov = None
    level = 0
    while tau < 1.0:
        level += 1
        tau_next = next_temperature(ll, tau, opts)
        if not tau_next > tau:
            raise RuntimeError(f"temperature did not increase at level {level}")
        with np.errstate(invalid="ignore"):
            log_w = np.where(ll > -np.inf, (tau_next - tau) * ll, -np.inf)
        if not np.any(log_w > -np.inf):
            raise DegenerateLevelError(level)
        evidence.add(log_w)
        w = np.exp(log_w - np.max(log_w))
        ess = ess_ratio(w)
        if tau_next < 1.0:
            assert opts.min_effective_size_ratio - 1e-6 <= ess <= opts.max_effective_size_ratio, ess

        cov = _weighted_cov(x, w)
        if opts.scale_cov_matrix and prev_cov is not None:
            c = opts.cov_rejection_rate
            cov = (1.0 - c) * cov + c * prev_cov
        cov = cov + 1e-12 * max(1.0, float(np.max(np.diag(cov)))) * np.eye(d)
        prev_cov = cov

        lvl_rng = np.random.default_rng(np.random.SeedSequence([root, level]))
        idx = systematic_resample(w, float(lvl_rng.random()))
        x, lp, ll = x[idx], lp[idx], ll[idx]

        try:
            chol = np.linalg.cholesky(scale * cov)
        except np.linalg.LinAlgError:
            chol = np.sqrt(scale * np.maximum(np.diag(cov), 1e-300)) * np.eye(d)
        jobs = [
            (x[i], lp[i], ll[i], tau_next, chol, n_steps,
             np.random.SeedSequence([root, level, i]), ln_prior, ln_l)
            for i in range(n)
        ]
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                results = list(pool.map(_mutate, jobs))
        else:
            results = [_mutate(j) for j in jobs]
        x = np.array([r[0] for r in results])
        lp = np.array([r[1] for r in results])
        ll = np.array([r[2] for r in results])
        rejection = sum(r[3] for r in results) / (n * n_steps)

        levels.append(Level(tau_next, x.copy(), ll.copy(), log_w, cov, ess, rejection))
        logger.info("level %d: tau=%.6g ess=%.3f rejection=%.3f", level, tau_next, ess, rejection)
        if opts.scale_cov_matrix:
            if rejection > opts.max_rejection_rate:
                scale *= 0.5
            elif rejection < opts.min_rejection_rate:
                scale *= 2.0
        tau = tau_next

    taus = [lv.tau for lv in levels]
    assert all(b > a for a, b in zip(taus, taus[1:])) and taus[-1] == 1.0
    return MultilevelResult(x, ll, evidence.ln_evidence, levels)
