"""Delayed-rejection adaptive Metropolis (DRAM).

A Gaussian random-walk Metropolis-Hastings sampler with two optional
refinements:

* delayed rejection: after a rejected proposal, up to
  ``dr_max_num_extra_stages`` further proposals are tried from the same
  state with covariance ``C / scale_k**2``, each accepted with the
  stage-wise acceptance probability that keeps the chain reversible
  (Tierney & Mira, 1999);
* adaptive Metropolis: every ``am_adapt_interval`` states the proposal
  covariance is replaced by ``eta * 2.38**2 / d * Cov + eta * eps * I`` where
  ``Cov`` is the sample covariance of the whole chain history
  (Haario et al., 2001, 2006).

The target is only ever evaluated through its log-density.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .config import ConfigError, MhOptions
from .core import BoxSubset, CovarianceMatrix, ScalarFunction

logger = logging.getLogger(__name__)

__all__ = [
    "ChainState",
    "Chain",
    "AdaptiveState",
    "mh_accept_prob",
    "dr_second_stage_accept_prob",
    "dr_accept_prob",
    "am_update",
    "run_dram",
]

AM_SCALE = 2.38 ** 2
_BLOCK = 2048


@dataclass(frozen=True)
class ChainState:
    position: np.ndarray
    ln_target: float
    out_of_bounds: bool = False


@dataclass
class Chain:
    """Sampled states plus run metadata.

    ``out_of_bounds[i]`` marks positions written because the proposal of
    that step left the domain (the current state is repeated).
    """

    positions: np.ndarray
    ln_target: np.ndarray
    out_of_bounds: np.ndarray = None
    accept_counts: np.ndarray = None
    proposal_counts: np.ndarray = None
    seed: int | Sequence[int] | None = None
    options: MhOptions | None = None
    model_failures: int = 0
    run_time: float = 0.0
    final_proposal_cov: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        self.ln_target = np.asarray(self.ln_target, dtype=float).reshape(-1)
        n = self.positions.shape[0]
        if self.ln_target.shape != (n,):
            raise ValueError("positions and ln_target lengths differ")
        if self.out_of_bounds is None:
            self.out_of_bounds = np.zeros(n, dtype=bool)
        if self.accept_counts is None:
            self.accept_counts = np.zeros(1, dtype=np.int64)
        if self.proposal_counts is None:
            self.proposal_counts = np.zeros_like(self.accept_counts)

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i) -> ChainState:
        return ChainState(self.positions[i].copy(), float(self.ln_target[i]),
                          bool(self.out_of_bounds[i]))

    @property
    def states(self) -> list[ChainState]:
        return [self[i] for i in range(len(self))]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def acceptance_rate(self) -> float:
        """Fraction of transitions accepted at any stage."""
        steps = int(self.proposal_counts[0]) if len(self.proposal_counts) else 0
        return float(np.sum(self.accept_counts)) / steps if steps else float("nan")

    def stage_acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.accept_counts / self.proposal_counts

    def select(self, index) -> "Chain":
        """Sub-chain at ``index`` (slice or index array); counters are kept."""
        return Chain(self.positions[index], self.ln_target[index], self.out_of_bounds[index],
                     self.accept_counts.copy(), self.proposal_counts.copy(), self.seed,
                     self.options, self.model_failures, self.run_time, self.final_proposal_cov)

    @classmethod
    def concatenate(cls, chains: Sequence["Chain"]) -> "Chain":
        if not chains:
            raise ValueError("nothing to concatenate")
        width = max(len(c.accept_counts) for c in chains)

        def padded(a):
            return np.pad(a, (0, width - len(a)))

        return cls(
            np.concatenate([c.positions for c in chains]),
            np.concatenate([c.ln_target for c in chains]),
            np.concatenate([c.out_of_bounds for c in chains]),
            sum(padded(c.accept_counts) for c in chains),
            sum(padded(c.proposal_counts) for c in chains),
            [c.seed for c in chains],
            chains[0].options,
            sum(c.model_failures for c in chains),
            sum(c.run_time for c in chains),
        )


def mh_accept_prob(ln_curr, ln_prop):
    """``min(1, exp(ln_prop - ln_curr))`` for a symmetric proposal.

    NaN proposals are treated as ``-inf``. Works elementwise on arrays.
    """
    if np.ndim(ln_curr) == 0 and np.ndim(ln_prop) == 0:
        ln_prop = float(ln_prop)
        if math.isnan(ln_prop) or ln_prop == -math.inf:
            return 0.0
        if ln_prop >= ln_curr:
            return 1.0
        return math.exp(ln_prop - ln_curr)
    ln_curr = np.asarray(ln_curr, dtype=float)
    ln_prop = np.where(np.isnan(ln_prop), -np.inf, np.asarray(ln_prop, dtype=float))
    with np.errstate(invalid="ignore", over="ignore"):
        gap = np.minimum(ln_prop - ln_curr, 0.0)
    return np.where(ln_prop == -np.inf, 0.0, np.exp(gap))


def _log1mexp(a: float) -> float:
    """``log(1 - exp(a))`` for ``a <= 0``."""
    if a == 0.0:
        return -math.inf
    if a == -math.inf:
        return 0.0
    return math.log(-math.expm1(a)) if a > -0.693 else math.log1p(-math.exp(a))


def _ln_alpha1(ln_a: float, ln_b: float) -> float:
    if ln_b == -math.inf or math.isnan(ln_b):
        return -math.inf
    return min(0.0, ln_b - ln_a)


def dr_second_stage_accept_prob(ln_x, ln_y1, ln_y2, ln_q1_y2_y1, ln_q1_x_y1) -> float:
    """Second-stage delayed-rejection acceptance probability.

    ``min(1, pi(y2) q1(y2,y1) (1 - a1(y2,y1)) / (pi(x) q1(x,y1) (1 - a1(x,y1))))``
    with ``a1`` the first-stage Metropolis probability, all in log space.
    The first stage must have been rejectable, i.e. ``a1(x, y1) < 1``.
    """
    if ln_y2 == -math.inf or math.isnan(ln_y2):
        return 0.0
    den_rej = _log1mexp(_ln_alpha1(ln_x, ln_y1))
    assert den_rej > -math.inf, "first stage cannot have been rejected"
    num = ln_y2 + ln_q1_y2_y1 + _log1mexp(_ln_alpha1(ln_y2, ln_y1))
    den = ln_x + ln_q1_x_y1 + den_rej
    gap = num - den
    return 1.0 if gap >= 0 else math.exp(gap)


def _dr_ln_alpha(ln_pi, path, ln_q, forward=None) -> float:
    """Log acceptance probability of the last point of ``path``.

    ``path[0]`` is the current state and ``path[j]`` the stage-``j``
    candidate; ``ln_q(j, a, b)`` is the log-density (up to a stage-wise
    constant) of proposing ``b`` from ``a`` at stage ``j`` (1-based).
    ``forward[j-1]``, when given, is the already computed log acceptance
    probability of ``path[:j+1]``.
    """
    n = len(path) - 1
    if ln_pi[-1] == -math.inf:
        return -math.inf
    if n == 1:
        return _ln_alpha1(ln_pi[0], ln_pi[1])
    num, den = ln_pi[-1], ln_pi[0]
    rev_pi, rev_path = ln_pi[::-1], path[::-1]
    for j in range(1, n):
        num += ln_q(j, path[-1], path[-1 - j])
        den += ln_q(j, path[0], path[j])
        num += _log1mexp(_dr_ln_alpha(rev_pi[: j + 1], rev_path[: j + 1], ln_q))
        if num == -math.inf:
            return -math.inf
        fwd = forward[j - 1] if forward is not None else _dr_ln_alpha(
            ln_pi[: j + 1], path[: j + 1], ln_q)
        den += _log1mexp(fwd)
    return min(0.0, num - den)


def dr_accept_prob(ln_pi: Sequence[float], path: Sequence[np.ndarray], cov,
                   scales: Sequence[float]) -> float:
    """Acceptance probability of stage ``len(path) - 1`` for Gaussian
    proposals centred at the current state with covariance
    ``cov / scales[j-1]**2`` at stage ``j`` (``scales[0]`` is normally 1)."""
    chol = np.linalg.cholesky(np.atleast_2d(np.asarray(cov, dtype=float)))

    def ln_q(j, a, b):
        z = solve_triangular(chol, np.atleast_1d(b - a), lower=True)
        return -0.5 * scales[j - 1] ** 2 * float(z @ z)

    path = [np.atleast_1d(np.asarray(p, dtype=float)) for p in path]
    return math.exp(_dr_ln_alpha(list(map(float, ln_pi)), path, ln_q))


@dataclass(frozen=True)
class AdaptiveState:
    """Running moments of the chain history and the current proposal covariance."""

    count: int
    mean: np.ndarray
    scatter: np.ndarray
    proposal_cov: np.ndarray

    @classmethod
    def initial(cls, prop_cov) -> "AdaptiveState":
        c = np.atleast_2d(np.asarray(prop_cov, dtype=float))
        d = c.shape[0]
        return cls(0, np.zeros(d), np.zeros((d, d)), c)

    def sample_cov(self) -> np.ndarray | None:
        if self.count < 2:
            return None
        return self.scatter / (self.count - 1)


def _regularized(cov: np.ndarray, eta: float, eps: float) -> np.ndarray:
    d = cov.shape[0]
    c = eta * (AM_SCALE / d) * cov + eta * eps * np.eye(d)
    return 0.5 * (c + c.T)


def am_update(state: AdaptiveState, x_new, opts: MhOptions, refresh: bool = True) -> AdaptiveState:
    """Add ``x_new`` to the running moments (Welford) and, when ``refresh``
    is set and adaptation is enabled, recompute the proposal covariance."""
    x = np.atleast_1d(np.asarray(x_new, dtype=float))
    n = state.count + 1
    delta = x - state.mean
    mean = state.mean + delta / n
    scatter = state.scatter + np.outer(delta, x - mean)
    prop = state.proposal_cov
    if refresh and opts.am_adapt_interval > 0 and n >= 2:
        prop = _regularized(scatter / (n - 1), opts.am_eta, opts.am_epsilon)
    return AdaptiveState(n, mean, scatter, prop)


def _safe_cholesky(cov: np.ndarray, eps: float) -> np.ndarray:
    d = cov.shape[0]
    jitter = 0.0
    for _ in range(8):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter = eps if jitter == 0.0 else 10.0 * jitter
    logger.warning("adapted covariance could not be factored; falling back to eps*I")
    return math.sqrt(eps) * np.eye(d)


def _as_target(target) -> Callable[[np.ndarray], float]:
    if isinstance(target, ScalarFunction):
        return target.ln_value
    if callable(target):
        return target
    raise TypeError("target must be a ScalarFunction or a log-density callable")


def run_dram(target, init, prop_cov, opts: MhOptions | None = None, rng=None, *,
             domain: BoxSubset | None = None,
             on_output: Callable[[int, int, np.ndarray, np.ndarray], None] | None = None) -> Chain:
    """Sample ``target`` with DRAM.

    Parameters
    ----------
    target : ScalarFunction or callable
        Log-density; only ``ln_value`` is ever called.
    init : array_like
        Initial state; must have a finite log-density.
    prop_cov : CovarianceMatrix or array_like
        Initial proposal covariance.
    opts : MhOptions, optional
    rng : int or numpy.random.Generator, optional
        An integer seed is recorded on the returned chain.
    domain : BoxSubset, optional
        Candidates outside the box get ``-inf`` without evaluating the target.
        Defaults to ``target.domain`` when present.
    on_output : callable, optional
        Called as ``on_output(start, stop, positions, ln_target)`` every
        ``raw_chain_data_output_period`` states and once at the end.

    Returns
    -------
    Chain
        Exactly ``opts.raw_chain_size`` states, the first being ``init``.
    """
    opts = opts if opts is not None else MhOptions()
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    ln_f = _as_target(target)
    if domain is None:
        domain = getattr(target, "domain", None)
    lo = hi = None
    if domain is not None:
        lo, hi = domain.mins, domain.maxs

    x = np.atleast_1d(np.array(init, dtype=float))
    d = x.size
    cov0 = np.asarray(prop_cov.entries if isinstance(prop_cov, CovarianceMatrix)
                      else CovarianceMatrix(prop_cov).entries)
    if cov0.shape != (d, d):
        raise ConfigError(f"proposal covariance shape {cov0.shape} does not match dim {d}")

    failures = 0

    def evaluate(y):
        nonlocal failures
        if lo is not None and (np.any(y < lo) or np.any(y > hi)):
            return -math.inf, True
        v = float(ln_f(y))
        if math.isnan(v) or v == math.inf:
            failures += 1
            return -math.inf, False
        return v, False

    lx, oob0 = evaluate(x)
    if oob0 or not math.isfinite(lx):
        raise ConfigError(f"initial position {x.tolist()} is outside the target support")

    scales = (1.0,) + opts.stage_scales()
    n_stages = len(scales)
    n = opts.raw_chain_size
    adapting = opts.am_adapt_interval > 0
    state = AdaptiveState.initial(cov0)
    chol = np.linalg.cholesky(cov0)

    positions = np.empty((n, d))
    ln_target = np.empty(n)
    oob_flags = np.zeros(n, dtype=bool)
    accepts = np.zeros(n_stages, dtype=np.int64)
    proposals = np.zeros(n_stages, dtype=np.int64)

    half_sq = [-0.5 * s * s for s in scales]
    dist_row = None

    def ln_q(j, a, b):
        # a, b index {current state, candidates}; distances are in whitened space
        return half_sq[j - 1] * dist_row[a][b]

    def record(i, pos, lp, flag) -> bool:
        """Store state ``i``; returns True when the proposal covariance changed."""
        nonlocal state, chol
        positions[i] = pos
        ln_target[i] = lp
        oob_flags[i] = flag
        if not adapting:
            return False
        count = i + 1
        refresh = (count > opts.am_init_non_adapt_interval
                   and (count - opts.am_init_non_adapt_interval) % opts.am_adapt_interval == 0)
        state = am_update(state, pos, opts, refresh=refresh)
        if refresh and count >= 2:
            chol = _safe_cholesky(state.proposal_cov, opts.am_epsilon)
            return True
        return False

    out_period = opts.raw_chain_data_output_period
    last_out = 0
    display = opts.raw_chain_display_period
    t0 = time.perf_counter()
    record(0, x, lx, False)

    inv_scales = 1.0 / np.asarray(scales)[None, :, None]
    steps = offsets = lus_block = dists = None
    r = _BLOCK
    i = 1
    retries = 0
    while i < n:
        if r == _BLOCK:
            # random numbers are consumed in fixed-size blocks, one row per attempt
            steps = rng.standard_normal((_BLOCK, n_stages, d)) * inv_scales
            lus_block = np.log(rng.random((_BLOCK, n_stages)))
            offsets = steps @ chol.T
            if n_stages > 1:
                pts = np.concatenate([np.zeros((_BLOCK, 1, d)), steps], axis=1)
                dists = np.sum((pts[:, :, None, :] - pts[:, None, :, :]) ** 2, axis=-1)
            r = 0
        off, lus = offsets[r], lus_block[r]
        if n_stages > 1:
            dist_row = dists[r].tolist()
        r += 1

        use_dr = not (adapting and not opts.dr_during_am_non_adaptive_int
                      and i < opts.am_init_non_adapt_interval)
        stages = n_stages if use_dr else 1
        path, ln_pi, fwd = [0], [lx], []
        new_x, new_l, moved, first_oob = x, lx, False, False
        for k in range(stages):
            y = x + off[k]
            ly, oob = evaluate(y)
            if k == 0:
                first_oob = oob
                if oob and not opts.put_out_of_bounds_in_chain and retries < 10_000:
                    break
            proposals[k] += 1
            path.append(k + 1)
            ln_pi.append(ly)
            if opts.display_candidates:
                logger.debug("step %d stage %d candidate %s ln=%g", i, k, y.tolist(), ly)
            ln_a = _ln_alpha1(lx, ly) if k == 0 else _dr_ln_alpha(ln_pi, path, ln_q, fwd)
            fwd.append(ln_a)
            if lus[k] < ln_a:
                new_x, new_l, moved = y, ly, True
                accepts[k] += 1
                break
        if first_oob and not opts.put_out_of_bounds_in_chain and not moved and len(ln_pi) == 1:
            retries += 1
            continue
        retries = 0
        x, lx = new_x, new_l
        if record(i, x, lx, first_oob and not moved):
            offsets[r:] = steps[r:] @ chol.T
        i += 1
        if display and i % display == 0:
            logger.info("chain position %d/%d, acceptance rate %.4f", i, n,
                        accepts.sum() / max(proposals[0], 1))
        if on_output is not None and out_period and i - last_out >= out_period:
            on_output(last_out, i, positions[last_out:i], ln_target[last_out:i])
            last_out = i

    if on_output is not None and last_out < n:
        on_output(last_out, n, positions[last_out:n], ln_target[last_out:n])
    if failures:
        logger.warning("%d candidate evaluations returned NaN/+inf and were rejected", failures)
    return Chain(positions, ln_target, oob_flags, accepts, proposals, seed, opts,
                 failures, time.perf_counter() - t0, state.proposal_cov.copy())
