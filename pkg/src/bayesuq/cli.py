"""Command-line driver.

``bayesuq run INPUT``
    Solve a registered problem with the options in an input file.
``bayesuq post CHAIN...``
    Moments, histogram, KDE, autocorrelation and R-hat for chain files,
    written as CSV data plus a gnuplot script per figure.
``bayesuq --dump-defaults``
    Print every option with its default in input-file form.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import config
from .core import BoxSubset, RandomVariable
from .inverse import (Environment, StatisticalForwardProblem, StatisticalInverseProblem,
                      filter_chain, projectile_range)
from .likelihood import BallDropModel, GaussianLikelihood, read_dataset
from .postproc import (HistogramSpec, KdeSpec, autocorrelation, chain_moments, histogram, kde,
                       psrf_report, read_chain, write_gnuplot_script)

logger = logging.getLogger("bayesuq")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class Problem:
    ip: StatisticalInverseProblem
    init: np.ndarray
    prop_cov: np.ndarray
    qoi: Callable | None = None


def ball_drop_problem(data=None, sigma: float = 0.05) -> Problem:
    """Infer gravity from drop times; QoI is the range of a projectile
    launched at 5 m/s and 45 degrees from the ground."""
    heights, times = read_dataset(data)
    prior = RandomVariable.uniform(BoxSubset([8.0], [11.0]), prefix="param_")
    lik = GaussianLikelihood(BallDropModel(heights), times, sigma ** 2)
    ip = StatisticalInverseProblem(prior, lik)
    return Problem(ip, np.array([9.0]), np.array([[0.1]]),
                   lambda g: projectile_range(g[0], 0.0, math.pi / 4, 5.0))


PROBLEMS = {"ball_drop": ball_drop_problem}


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bayesuq", description="Bayesian inference and uncertainty propagation.")
    p.add_argument("--dump-defaults", action="store_true",
                   help="print every option default in input-file form and exit")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="solve a problem from an input file")
    r.add_argument("input", help="input file of 'key = value' lines")
    r.add_argument("--problem", choices=sorted(PROBLEMS), default="ball_drop")
    r.add_argument("--method", choices=("dram", "ml"), default="dram")
    r.add_argument("--workers", type=int, default=None,
                   help="parallel workers (default: number of subenvironments)")
    r.add_argument("--data", help="dataset CSV (default: the shipped synthetic data)")
    r.add_argument("--out-dir", default=".", help="directory for relative output names")
    r.add_argument("--qoi-out", help="also propagate the posterior and write QoI samples here")

    q = sub.add_parser("post", help="post-process chain files")
    q.add_argument("chains", nargs="+", help="chain files (csv or m)")
    q.add_argument("--moments", action="store_true")
    q.add_argument("--histogram", type=int, metavar="BINS")
    q.add_argument("--range", metavar="LO,HI", help="histogram range")
    q.add_argument("--kde", metavar="GRID[,BW]")
    q.add_argument("--acf", type=int, metavar="MAXLAG")
    q.add_argument("--psrf", action="store_true", help="R-hat across all given chains")
    q.add_argument("--component", type=int, default=0)
    q.add_argument("--filter", metavar="PORTION,LAG", help="burn-in fraction and lag")
    q.add_argument("--out-dir", help="output directory (default: next to each chain)")
    return p


def _pair(text: str, flag: str, kinds):
    parts = text.split(",")
    if not 1 <= len(parts) <= len(kinds):
        raise UsageError(f"{flag}: expected {len(kinds)} comma-separated values, got {text!r}")
    try:
        return [k(v) for k, v in zip(kinds, parts)]
    except ValueError:
        raise UsageError(f"{flag}: malformed value {text!r}") from None


def _setup_logging(level: int) -> None:
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _cmd_run(a) -> int:
    opts = config.read_input_file(a.input)
    unknown = [k for k, _ in opts.items() if not k.startswith(("env_", "ip_"))]
    if unknown:
        raise config.ConfigError(f"options outside the env_/ip_ sections: {unknown}")
    env_opts = config.resolve(opts, "env_")
    sip_opts = config.resolve(opts, "ip_")
    env = Environment.from_options(env_opts, a.workers)
    logging.getLogger("bayesuq").setLevel(min(env.log_level, logging.getLogger().level))
    prob = PROBLEMS[a.problem](a.data)
    prob.ip.sip_opts = sip_opts
    out_dir = Path(a.out_dir)

    if a.method == "dram":
        mh = config.resolve(opts, "ip_mh_")
        chain = prob.ip.solve_with_bayes_metropolis_hastings(env, prob.init, prob.prop_cov, mh,
                                                             out_dir)
        if chain is None:
            print("computeSolution = 0: nothing to do")
            return 0
        for p in prob.ip.written:
            print(f"wrote {p}")
        print(f"states: {len(chain)}  acceptance: {chain.acceptance_rate:.4f}")
        if prob.ip.psrf is not None:
            print("R-hat:", " ".join(f"{v:.6g}" for v in prob.ip.psrf.rhat))
    else:
        ml = config.resolve(opts, "ip_ml_")
        res = prob.ip.solve_with_multilevel(env, ml, out_dir=out_dir)
        if res is None:
            print("computeSolution = 0: nothing to do")
            return 0
        for p in prob.ip.written:
            print(f"wrote {p}")
        print(f"levels: {len(res.levels)}  ln evidence: {res.ln_evidence:.17g}")

    med = np.median(prob.ip.posterior.realizer.samples, axis=0)
    print("posterior median:", " ".join(f"{v:.6g}" for v in med))
    if a.qoi_out:
        if prob.qoi is None:
            raise config.ConfigError(f"problem {a.problem} defines no QoI")
        fp = StatisticalForwardProblem(prob.ip.posterior, prob.qoi)
        q = fp.solve(prob.ip.posterior.realizer.samples)
        Path(a.qoi_out).parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(a.qoi_out, q, fmt="%.17g", delimiter=",", header="qoi", comments="")
        print(f"wrote {a.qoi_out} ({len(q)} QoI samples, mean {q.mean():.6g})")
    return 0


def _outputs_for(chain_path: Path, out_dir) -> Callable[[str], Path]:
    base = Path(out_dir) if out_dir else chain_path.parent
    base.mkdir(parents=True, exist_ok=True)
    return lambda tag: base / f"{chain_path.stem}.{tag}"


def _cmd_post(a) -> int:
    if not (a.moments or a.histogram or a.kde or a.acf is not None or a.psrf):
        raise UsageError("post: choose at least one of --moments, --histogram, --kde, --acf, --psrf")
    if a.range and not a.histogram:
        raise UsageError("post: --range only applies to --histogram")
    if a.psrf and len(a.chains) < 2:
        raise UsageError("post: --psrf needs at least two chain files")
    if a.histogram is not None and a.histogram < 1:
        raise UsageError("post: --histogram needs a positive bin count")
    hist_range = tuple(_pair(a.range, "--range", (float, float))) if a.range else None
    if hist_range is not None and len(hist_range) != 2:
        raise UsageError("--range: expected LO,HI")
    kde_spec = None
    if a.kde:
        vals = _pair(a.kde, "--kde", (int, float))
        kde_spec = KdeSpec(vals[0], vals[1] if len(vals) > 1 else "silverman")
    filt = _pair(a.filter, "--filter", (float, int)) if a.filter else None

    paths = [Path(p) for p in a.chains]
    with ThreadPoolExecutor(max_workers=min(8, len(paths))) as pool:
        chains = list(pool.map(read_chain, paths))
    if filt is not None:
        chains = [filter_chain(c, filt[0], filt[1] if len(filt) > 1 else 1) for c in chains]
    k = a.component
    inputs = {p.resolve() for p in paths}

    def target(out: Path) -> Path:
        if out.resolve() in inputs:
            raise RuntimeError(f"refusing to overwrite input file {out}")
        return out

    for path, chain in zip(paths, chains):
        if not 0 <= k < chain.dim:
            raise UsageError(f"--component {k} out of range for {path} (dim {chain.dim})")
        out = _outputs_for(path, a.out_dir)
        if a.moments:
            mean, var = chain_moments(chain, k)
            print(f"{path}: n={len(chain)} mean={mean:.17g} var={var:.17g}")
        if a.histogram:
            edges, counts = histogram(chain, HistogramSpec(a.histogram, hist_range), k)
            f = target(out("hist.csv"))
            rows = np.column_stack([edges[:-1], edges[1:], counts])
            np.savetxt(f, rows, fmt=["%.17g", "%.17g", "%d"], delimiter=",",
                       header="lo,hi,count", comments="")
            write_gnuplot_script(target(out("hist.gp")), f, "hist")
            print(f"wrote {f}")
        if kde_spec is not None:
            grid, dens = kde(chain, kde_spec, k)
            f = target(out("kde.csv"))
            np.savetxt(f, np.column_stack([grid, dens]), fmt="%.17g", delimiter=",",
                       header="x,density", comments="")
            write_gnuplot_script(target(out("kde.gp")), f, "kde")
            print(f"wrote {f}")
        if a.acf is not None:
            rho = autocorrelation(chain, a.acf, k)
            f = target(out("acf.csv"))
            np.savetxt(f, np.column_stack([np.arange(rho.size), rho]), fmt=["%d", "%.17g"],
                       delimiter=",", header="lag,rho", comments="")
            write_gnuplot_script(target(out("acf.gp")), f, "acf")
            print(f"wrote {f}")
    if a.psrf:
        n = min(len(c) for c in chains)
        rep = psrf_report([c.select(slice(0, n)) for c in chains])
        print("R-hat:", " ".join(f"{v:.17g}" for v in rep.rhat))
    return 0


def cli_main(args=None) -> int:
    args = list(sys.argv[1:] if args is None else args)
    parser = _parser()
    try:
        if not args:
            parser.print_usage(sys.stderr)
            return 1
        a = parser.parse_args(args)
        if a.dump_defaults:
            if a.command:
                raise UsageError("--dump-defaults cannot be combined with a subcommand")
            sys.stdout.write(config.dump_defaults())
            return 0
        if a.command is None:
            parser.print_usage(sys.stderr)
            return 1
        _setup_logging({0: logging.WARNING, 1: logging.INFO}.get(a.verbose, logging.DEBUG))
        if a.command == "run":
            return _cmd_run(a)
        return _cmd_post(a)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"bayesuq: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
