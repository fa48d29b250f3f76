"""Statistical inverse and forward problems and the subenvironment run model.

An :class:`Environment` splits ``num_workers`` execution units into
``num_sub_environments`` groups. Solving an inverse problem runs one DRAM
chain per subenvironment, each seeded from ``(env.seed, sub index)`` through
:func:`derive_seed`, and concatenates the chains in subenvironment order.
Because every chain owns its own generator, the combined chain is identical
whether the chains run concurrently or one after another.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import ConfigError, EnvOptions, MhOptions, MlOptions, SipOptions, no_output
from .core import BoxSubset, ContractError, JointPdf, RandomVariable, Realizer, ScalarFunction
from .dram import Chain, run_dram
from .mlsampler import MultilevelResult, run_multilevel
from .postproc import PsrfReport, chain_format_for, psrf_report, write_chain

logger = logging.getLogger(__name__)

__all__ = [
    "EnvironmentConstructionError",
    "ForwardProblemError",
    "Environment",
    "SequenceRealizer",
    "StatisticalInverseProblem",
    "StatisticalForwardProblem",
    "derive_seed",
    "filter_chain",
    "projectile_range",
    "solve_sip",
    "solve_sfp",
]

_MASK64 = (1 << 64) - 1


class EnvironmentConstructionError(ConfigError):
    pass


class ForwardProblemError(RuntimeError):
    """The QoI map failed on the sample at ``index``."""

    def __init__(self, index: int, cause: BaseException | str):
        self.index = index
        super().__init__(f"QoI evaluation failed on sample {index}: {cause}")


def derive_seed(seed: int, sub: int) -> int:
    """Seed for subenvironment ``sub``: one splitmix64 output of the state
    ``seed + (sub + 1) * 0x9E3779B97F4A7C15`` (mod 2**64)."""
    z = (int(seed) + (int(sub) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class Environment:
    """Execution layout: ``num_workers`` units split into equal subenvironments.

    ``verbosity`` 0 is silent, 1 logs progress, 2 and above log details.
    """

    num_workers: int = 1
    num_sub_environments: int = 1
    seed: int = 0
    verbosity: int = 0
    options: EnvOptions | None = None

    def __post_init__(self):
        if int(self.num_workers) != self.num_workers or self.num_workers < 1:
            raise EnvironmentConstructionError("num_workers must be a positive integer")
        if int(self.num_sub_environments) != self.num_sub_environments or self.num_sub_environments < 1:
            raise EnvironmentConstructionError("num_sub_environments must be a positive integer")
        if self.num_workers % self.num_sub_environments:
            raise EnvironmentConstructionError(
                f"number of workers ({self.num_workers}) must be a multiple of the number of "
                f"subenvironments ({self.num_sub_environments})"
            )

    @classmethod
    def from_options(cls, opts: EnvOptions, num_workers: int | None = None) -> "Environment":
        """``num_workers`` defaults to the number of subenvironments."""
        n = opts.num_sub_environments if num_workers is None else num_workers
        return cls(n, opts.num_sub_environments, opts.seed, opts.display_verbosity, opts)

    @property
    def workers_per_sub_environment(self) -> int:
        return self.num_workers // self.num_sub_environments

    @property
    def log_level(self) -> int:
        return {0: logging.WARNING, 1: logging.INFO}.get(self.verbosity, logging.DEBUG)

    def sub_seed(self, sub: int) -> int:
        return derive_seed(self.seed, sub)


class SequenceRealizer(Realizer):
    """Replays stored samples cyclically, in order; ``rng`` is ignored."""

    def __init__(self, samples):
        arr = np.asarray(samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] == 0:
            raise ContractError("a sequence realizer needs at least one sample")
        self.samples = arr
        self.cursor = 0

    def __len__(self):
        return self.samples.shape[0]

    def realization(self, rng=None) -> np.ndarray:
        x = self.samples[self.cursor].copy()
        self.cursor = (self.cursor + 1) % self.samples.shape[0]
        return x

    def reset(self) -> None:
        self.cursor = 0


class _PosteriorPdf(JointPdf):
    """Unnormalized log-posterior as a density on the prior domain."""

    def __init__(self, ip: "StatisticalInverseProblem"):
        super().__init__(ip.prior.domain)
        self._ip = ip

    def _ln_density(self, x) -> float:
        return self._ip.ln_posterior(x)


def filter_chain(chain, discarded_portion: float = 0.0, lag: int = 1):
    """Drop the first ``floor(p N)`` states, then keep one state per full
    block of ``lag``: indices ``b, b + lag, ...`` with
    ``floor((N - b) / lag)`` states in total.

    Works on :class:`Chain` objects and on plain arrays.
    """
    if not 0.0 <= discarded_portion < 1.0:
        raise ValueError("discarded portion must lie in [0, 1)")
    if int(lag) != lag or lag < 1:
        raise ValueError("lag must be a positive integer")
    n = len(chain)
    b = math.floor(discarded_portion * n)
    count = (n - b) // lag
    if count == 0:
        raise ValueError("filtering removed all states")
    idx = b + lag * np.arange(count)
    if isinstance(chain, Chain):
        return chain.select(idx)
    return np.asarray(chain)[idx]


def _output_path(name: str, ftype: str, out_dir, sub: int | None = None) -> Path:
    fmt = chain_format_for(name, ftype)
    path = Path(out_dir or ".") / name
    if not path.suffix:
        path = path.with_suffix(".m" if fmt == "m" else ".csv")
    if sub is not None:
        path = path.with_name(f"{path.stem}_sub{sub}{path.suffix}")
    return path


class StatisticalInverseProblem:
    """Prior times likelihood, solved for a posterior sample.

    Parameters
    ----------
    prior : RandomVariable
    likelihood : ScalarFunction or callable
        Log-likelihood of a parameter vector.
    sip_opts : SipOptions, optional
    prefix : str
        Used to name chain variables in m-format output.
    """

    def __init__(self, prior: RandomVariable, likelihood, sip_opts: SipOptions | None = None,
                 prefix: str = "ip_"):
        lik_domain = getattr(likelihood, "domain", None)
        if isinstance(lik_domain, BoxSubset):
            if lik_domain.dim != prior.domain.dim:
                raise ContractError("prior and likelihood domains have different dimensions")
            if lik_domain.is_bounded and not (
                np.array_equal(lik_domain.mins, prior.domain.mins)
                and np.array_equal(lik_domain.maxs, prior.domain.maxs)
            ):
                raise ContractError("prior and likelihood domains differ")
        self.prior = prior
        self.likelihood = likelihood
        self._ln_like: Callable = (
            likelihood.ln_value if isinstance(likelihood, ScalarFunction) else likelihood
        )
        self.sip_opts = sip_opts if sip_opts is not None else SipOptions()
        self.prefix = prefix
        self.posterior: RandomVariable | None = None
        self.chain: Chain | None = None
        self.sub_chains: list[Chain] = []
        self.filtered_chain: Chain | None = None
        self.psrf: PsrfReport | None = None
        self.ml_result: MultilevelResult | None = None
        self.written: list[Path] = []

    @property
    def dim(self) -> int:
        return self.prior.domain.dim

    def ln_posterior(self, theta) -> float:
        """``ln prior + ln likelihood``; ``-inf`` outside the prior support,
        where the likelihood is never called."""
        lp = float(self.prior.pdf.ln_value(theta))
        if lp == -math.inf or math.isnan(lp):
            return -math.inf
        return lp + float(self._ln_like(theta))

    def _load_posterior(self, samples) -> None:
        self.posterior = RandomVariable(_PosteriorPdf(self), SequenceRealizer(samples),
                                        self.prior.domain, self.prefix + "post_")

    def solve_with_bayes_metropolis_hastings(self, env: Environment, init, prop_cov,
                                             mh_opts: MhOptions | None = None,
                                             out_dir=None) -> Chain | None:
        """Run one DRAM chain per subenvironment and combine them in order.

        Returns ``None`` (and does nothing) when ``compute_solution`` is 0.
        """
        if not self.sip_opts.compute_solution:
            logger.info("computeSolution = 0: inverse problem not solved")
            return None
        mh_opts = mh_opts if mh_opts is not None else MhOptions()
        domain = self.prior.domain
        seeds = [env.sub_seed(s) for s in range(env.num_sub_environments)]

        def one_chain(s: int) -> Chain:
            t0 = time.perf_counter()
            c = run_dram(self.ln_posterior, init, prop_cov, mh_opts, seeds[s], domain=domain)
            logger.info("subenvironment %d: %d states, acceptance %.3f, %.2f s",
                        s, len(c), c.acceptance_rate, time.perf_counter() - t0)
            return c

        n_threads = min(env.num_workers, env.num_sub_environments)
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                chains = list(pool.map(one_chain, range(env.num_sub_environments)))
        else:
            chains = [one_chain(s) for s in range(env.num_sub_environments)]

        self.sub_chains = chains
        self.chain = Chain.concatenate(chains)
        self._load_posterior(self.chain.positions)

        if mh_opts.filtered_chain_generate:
            self.filtered_chain = filter_chain(self.chain, mh_opts.filtered_chain_discarded_portion,
                                               mh_opts.filtered_chain_lag)
        if mh_opts.brooks_gelman_monitor and len(chains) >= 2:
            self.psrf = psrf_report(chains, mh_opts.brooks_gelman_lag)
            logger.info("R-hat per component: %s", np.array2string(self.psrf.rhat))
        self._write_outputs(mh_opts, out_dir)
        return self.chain

    def _write_outputs(self, o: MhOptions, out_dir) -> None:
        self.written = []

        def emit(name, ftype, allow_all, combined, per_sub, label):
            if no_output(name):
                return
            path = _output_path(name, ftype, out_dir)
            path.parent.mkdir(parents=True, exist_ok=True)
            var = f"{self.prefix}mh_{label}"
            self.written.append(write_chain(combined, path, chain_format_for(path, ftype), var))
            if allow_all:
                for s, c in enumerate(per_sub):
                    p = _output_path(name, ftype, out_dir, s)
                    self.written.append(write_chain(c, p, chain_format_for(p, ftype), var))

        emit(o.raw_chain_data_output_file_name, o.raw_chain_data_output_file_type,
             o.raw_chain_data_output_allow_all, self.chain, self.sub_chains, "rawChain")
        if self.filtered_chain is not None:
            subs = [filter_chain(c, o.filtered_chain_discarded_portion, o.filtered_chain_lag)
                    for c in self.sub_chains] if o.filtered_chain_data_output_allow_all else []
            emit(o.filtered_chain_data_output_file_name, o.filtered_chain_data_output_file_type,
                 o.filtered_chain_data_output_allow_all, self.filtered_chain, subs,
                 "filteredChain")

    def solve_with_multilevel(self, env: Environment, ml_opts: MlOptions | None = None, *,
                              n_mutation_steps: int = 5, out_dir=None) -> MultilevelResult | None:
        """Adaptive-tempering solve; also estimates the log-evidence.

        When ``raw_chain_data_output_file_name`` is set, the final particles
        go to that file and the particles of level ``l`` to ``<name>_level<l>``.
        """
        if not self.sip_opts.compute_solution:
            return None
        ml_opts = ml_opts if ml_opts is not None else MlOptions()
        res = run_multilevel(self.prior, self._ln_like, ml_opts, env.sub_seed(0),
                             n_mutation_steps=n_mutation_steps, n_workers=env.num_workers)
        self.ml_result = res
        self._load_posterior(res.particles)
        self.written = []
        name = ml_opts.raw_chain_data_output_file_name
        if not no_output(name):
            ftype = ml_opts.raw_chain_data_output_file_type
            path = _output_path(name, ftype, out_dir)
            path.parent.mkdir(parents=True, exist_ok=True)
            fmt = chain_format_for(path, ftype)

            def as_chain(x):
                return Chain(x, np.array([self.ln_posterior(p) for p in x]))

            for lvl, level in enumerate(res.levels, start=1):
                p = path.with_name(f"{path.stem}_level{lvl}{path.suffix}")
                self.written.append(write_chain(as_chain(level.particles), p, fmt,
                                                f"{self.prefix}ml_level{lvl}"))
            self.written.append(write_chain(as_chain(res.particles), path, fmt,
                                            f"{self.prefix}ml_rawChain"))
        return res


def solve_sip(ip: StatisticalInverseProblem, env: Environment, init, prop_cov,
              mh_opts: MhOptions | None = None, out_dir=None) -> Chain | None:
    return ip.solve_with_bayes_metropolis_hastings(env, init, prop_cov, mh_opts, out_dir)


def projectile_range(g: float, h0: float, alpha: float, v0: float) -> float:
    """Horizontal distance travelled by a projectile launched at speed ``v0``
    and angle ``alpha`` from height ``h0`` under gravity ``g``."""
    if not g > 0:
        raise ValueError(f"gravity must be positive, got {g}")
    if v0 < 0:
        raise ValueError("launch speed must be non-negative")
    vs = v0 * math.sin(alpha)
    return (v0 * math.cos(alpha) / g) * (vs + math.sqrt(vs * vs + 2.0 * g * h0))


class StatisticalForwardProblem:
    """Push parameter samples through a QoI map.

    Parameters
    ----------
    input : RandomVariable or array_like
        Sample source; a random variable is drawn ``n`` times at solve time.
    qoi : callable
        Maps a parameter vector to a scalar or vector QoI.
    """

    def __init__(self, input, qoi: Callable):
        self.input = input
        self.qoi = qoi
        self.qoi_samples: np.ndarray | None = None

    def solve(self, samples=None, n: int | None = None, rng=None) -> np.ndarray:
        if samples is None:
            if isinstance(self.input, RandomVariable):
                if n is None:
                    real = self.input.realizer
                    n = len(real) if isinstance(real, SequenceRealizer) else None
                if n is None:
                    raise ContractError("number of samples required for a non-sequence input")
                gen = np.random.default_rng(rng)
                samples = [self.input.draw(gen) for _ in range(n)]
            else:
                samples = self.input
        self.qoi_samples = solve_sfp(self, samples)
        return self.qoi_samples


def solve_sfp(fp: StatisticalForwardProblem, samples: Sequence) -> np.ndarray:
    """Apply ``fp.qoi`` to every sample; output has one row per sample."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise ContractError("forward problem needs at least one sample")
    out = []
    for i, x in enumerate(arr):
        try:
            q = np.atleast_1d(np.asarray(fp.qoi(x), dtype=float))
        except Exception as exc:
            raise ForwardProblemError(i, exc) from exc
        if not np.all(np.isfinite(q)):
            raise ForwardProblemError(i, "non-finite QoI")
        out.append(q)
    return np.array(out)
