"""Chain statistics, convergence diagnostics and chain file I/O.

Two chain file formats are supported:

``csv``
    Header ``idx,theta_0,...,theta_{d-1},ln_target`` followed by one row per
    state at 17 significant digits, so reading a written chain gives back
    the same floats bit for bit.
``m``
    A single array assignment ``name = [ ... ];`` with one state per row
    (position components then ``ln_target``), readable by Octave/Matlab and
    by :func:`read_chain`. Values use Python's shortest round-trip repr.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dram import Chain

logger = logging.getLogger(__name__)

__all__ = [
    "ChainFormatError",
    "HistogramSpec",
    "KdeSpec",
    "PsrfReport",
    "chain_moments",
    "histogram",
    "kde",
    "silverman_bandwidth",
    "autocorrelation",
    "integrated_autocorr_time",
    "gelman_rubin",
    "psrf_report",
    "write_chain",
    "read_chain",
    "chain_format_for",
    "write_gnuplot_script",
]


class ChainFormatError(ValueError):
    """A chain file could not be parsed; ``row`` is 1-based (0 = header)."""

    def __init__(self, path, row: int, message: str):
        self.path = str(path)
        self.row = row
        super().__init__(f"{path}: row {row}: {message}")


def _component(chain, component: int = 0) -> np.ndarray:
    x = chain.positions if isinstance(chain, Chain) else np.asarray(chain, dtype=float)
    if x.ndim == 1:
        if component != 0:
            raise IndexError(f"component {component} out of range for a 1-d chain")
        return x
    return x[:, component]


def chain_moments(chain, component: int = 0) -> tuple[float, float]:
    """Sample mean and unbiased sample variance of one component."""
    x = _component(chain, component)
    if x.size == 0:
        raise ValueError("chain is empty")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
    return mean, var


@dataclass(frozen=True)
class HistogramSpec:
    bins: int
    range: tuple[float, float] | None = None

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 1:
            raise ValueError(f"bins must be a positive integer, got {self.bins}")
        if self.range is not None:
            lo, hi = (float(v) for v in self.range)
            if not lo < hi:
                raise ValueError(f"histogram range needs lo < hi, got {self.range}")
            object.__setattr__(self, "range", (lo, hi))


def histogram(chain, spec: HistogramSpec, component: int = 0):
    """Equal-width histogram with right-closed bins.

    Bin ``j`` is ``(e_j, e_{j+1}]`` except the first, which is closed on both
    sides. Values outside an explicit range are counted in the nearest end
    bin, so counts always sum to the chain length.

    Returns
    -------
    edges : ndarray, shape (bins + 1,)
    counts : ndarray of int, shape (bins,)
    """
    x = _component(chain, component)
    if spec.range is not None:
        lo, hi = spec.range
    else:
        if x.size == 0:
            raise ValueError("cannot infer a histogram range from an empty chain")
        lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise ValueError("histogram range has zero width; give an explicit range")
    edges = np.linspace(lo, hi, spec.bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="left") - 1, 0, spec.bins - 1)
    counts = np.bincount(idx, minlength=spec.bins)
    return edges, counts


@dataclass(frozen=True)
class KdeSpec:
    grid: int = 200
    bandwidth: float | str = "silverman"
    range: tuple[float, float] | None = None

    def __post_init__(self):
        if int(self.grid) != self.grid or self.grid < 2:
            raise ValueError("KDE grid needs at least 2 points")
        bw = self.bandwidth
        if isinstance(bw, str):
            if bw != "silverman":
                raise ValueError(f"unknown bandwidth rule {bw!r}")
        elif not float(bw) > 0:
            raise ValueError("KDE bandwidth must be positive")


def silverman_bandwidth(x) -> float:
    """``0.9 min(sd, IQR/1.34) N**(-1/5)``; falls back to ``sd`` when the IQR
    is zero but the data are not constant."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("Silverman bandwidth needs at least 2 points")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise ValueError("data have zero variance; pass an explicit bandwidth")
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde(chain, spec: KdeSpec | None = None, component: int = 0):
    """Gaussian kernel density estimate on a uniform grid.

    The grid defaults to ``[min - 3h, max + 3h]``.

    Returns
    -------
    grid, density : ndarray
    """
    spec = spec if spec is not None else KdeSpec()
    x = _component(chain, component)
    if x.size == 0:
        raise ValueError("chain is empty")
    h = silverman_bandwidth(x) if spec.bandwidth == "silverman" else float(spec.bandwidth)
    if spec.range is not None:
        lo, hi = spec.range
    else:
        lo, hi = float(np.min(x)) - 3 * h, float(np.max(x)) + 3 * h
    grid = np.linspace(lo, hi, spec.grid)
    dens = np.zeros_like(grid)
    # chunk over the data to bound memory at ~grid * 4096 floats
    for start in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * math.sqrt(2.0 * math.pi)
    return grid, dens


def autocorrelation(chain, max_lag: int, component: int = 0) -> np.ndarray:
    """Biased (``N``-normalized) autocorrelation for lags ``0..max_lag``."""
    x = _component(chain, component)
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n}), got {max_lag}")
    d = x - np.mean(x)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / n
    if not acov[0] > 0:
        raise ValueError("autocorrelation undefined for a constant chain")
    return acov / acov[0]


def integrated_autocorr_time(chain, component: int = 0, c: float = 5.0) -> float:
    """``1 + 2 sum rho(k)`` with Sokal's self-consistent window ``M >= c tau``."""
    x = _component(chain, component)
    rho = autocorrelation(x, x.size - 1)
    tau = 1.0
    for m in range(1, rho.size):
        tau = 1.0 + 2.0 * float(np.sum(rho[1:m + 1]))
        if m >= c * tau:
            break
    return tau


def _stack(chains: Sequence, component: int) -> np.ndarray:
    if len(chains) < 2:
        raise ValueError("Gelman-Rubin needs at least 2 chains")
    cols = [_component(c, component) for c in chains]
    n = cols[0].size
    if any(col.size != n for col in cols):
        raise ValueError("Gelman-Rubin chains must have equal lengths")
    if n < 10:
        raise ValueError("Gelman-Rubin chains need at least 10 states")
    return np.vstack(cols)


def gelman_rubin(chains: Sequence, component: int = 0) -> float:
    """Potential scale reduction ``sqrt(V / W)``.

    ``W`` is the mean within-chain variance, ``B/n`` the variance of chain
    means and ``V = (n-1)/n W + B/n``.
    """
    x = _stack(chains, component)
    n = x.shape[1]
    w = float(np.mean(np.var(x, axis=1, ddof=1)))
    if not w > 0:
        raise ValueError("within-chain variance is zero")
    b_over_n = float(np.var(np.mean(x, axis=1), ddof=1))
    v = (n - 1) / n * w + b_over_n
    return math.sqrt(v / w)


@dataclass
class PsrfReport:
    """Per-component R-hat, plus its history every ``lag`` states."""

    rhat: np.ndarray
    lag: int
    history: list = field(default_factory=list)

    def converged(self, threshold: float = 1.1) -> bool:
        return bool(np.all(self.rhat < threshold))


def psrf_report(chains: Sequence, lag: int = 100) -> PsrfReport:
    """R-hat for every component over the full chains and over each prefix
    whose length is a multiple of ``lag`` (at least 10 states)."""
    if lag < 1:
        raise ValueError("lag must be >= 1")
    first = chains[0]
    dim = first.dim if isinstance(first, Chain) else (np.asarray(first).shape[1]
                                                      if np.ndim(first) == 2 else 1)
    full = np.array([gelman_rubin(chains, k) for k in range(dim)])
    n = len(_component(first, 0))
    history = []
    for m in range(max(lag, 10), n + 1, lag):
        prefix = [_component(c, k)[:m] for c in chains for k in range(dim)]
        vals = [gelman_rubin(prefix[k::dim], 0) for k in range(dim)]
        history.append((m, np.array(vals)))
    return PsrfReport(full, lag, history)


_FORMATS = {"csv": "csv", "txt": "csv", "m": "m"}


def chain_format_for(path, fmt: str | None = None) -> str:
    """Resolve the writer format: explicit ``fmt`` or the file extension."""
    if fmt is None:
        fmt = Path(path).suffix.lstrip(".").lower() or "csv"
    try:
        return _FORMATS[fmt]
    except KeyError:
        raise ValueError(f"unknown chain file type {fmt!r}; use one of {sorted(_FORMATS)}") from None


def write_chain(chain: Chain, path, fmt: str | None = None, name: str = "chain") -> Path:
    """Write ``chain`` as csv or m-format (see module docstring)."""
    path = Path(path)
    fmt = chain_format_for(path, fmt)
    pos = chain.positions
    if fmt == "csv":
        header = ["idx"] + [f"theta_{k}" for k in range(chain.dim)] + ["ln_target"]
        lines = [",".join(header)]
        for i in range(len(chain)):
            vals = [f"{v:.17g}" for v in pos[i]] + [f"{chain.ln_target[i]:.17g}"]
            lines.append(",".join([str(i)] + vals))
    else:
        if not re.fullmatch(r"[A-Za-z_]\w*", name):
            raise ValueError(f"invalid m-format variable name {name!r}")
        lines = [f"{name} = ["]
        for i in range(len(chain)):
            vals = [repr(float(v)) for v in pos[i]] + [repr(float(chain.ln_target[i]))]
            lines.append(" ".join(vals))
        lines.append("];")
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_float(tok: str, path, row: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ChainFormatError(path, row, f"not a number: {tok!r}") from None


def read_chain(path) -> Chain:
    """Read a chain written by :func:`write_chain` (format from content)."""
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if not lines:
        raise ChainFormatError(path, 0, "empty file")
    head = lines[0].strip()
    if head.startswith("idx"):
        cols = head.split(",")
        if len(cols) < 3 or cols[-1] != "ln_target" or any(
            c != f"theta_{k}" for k, c in enumerate(cols[1:-1])
        ):
            raise ChainFormatError(path, 0, f"unexpected header {head!r}")
        d = len(cols) - 2
        rows = []
        for r, line in enumerate(lines[1:], start=1):
            if not line.strip():
                continue
            toks = line.split(",")
            if len(toks) != d + 2:
                raise ChainFormatError(path, r, f"expected {d + 2} fields, got {len(toks)}")
            if toks[0].strip() != str(len(rows)):
                raise ChainFormatError(path, r, f"index {toks[0]!r} out of sequence")
            rows.append([_parse_float(t, path, r) for t in toks[1:]])
        data = np.array(rows, dtype=float).reshape(len(rows), d + 1)
    else:
        if not re.fullmatch(r"[A-Za-z_]\w*\s*=\s*\[", head):
            raise ChainFormatError(path, 0, f"expected 'name = [' or a csv header, got {head!r}")
        rows, width, closed = [], None, False
        for r, line in enumerate(lines[1:], start=1):
            s = line.strip()
            if not s:
                continue
            if s == "];":
                closed = True
                break
            vals = [_parse_float(t, path, r) for t in s.rstrip(";").split()]
            if width is None:
                width = len(vals)
            if len(vals) != width or width < 2:
                raise ChainFormatError(path, r, "ragged or too-short row")
            rows.append(vals)
        if not closed:
            raise ChainFormatError(path, len(lines), "missing closing '];'")
        data = np.array(rows, dtype=float).reshape(len(rows), width or 2)
    return Chain(data[:, :-1], data[:, -1])


def write_gnuplot_script(path, data_file, kind: str, xlabel: str = "theta") -> Path:
    """Companion gnuplot script plotting ``data_file`` (``kind`` is one of
    ``hist``, ``kde``, ``acf``, ``trace``)."""
    path = Path(path)
    data = Path(data_file).name
    plots = {
        "hist": f"plot '{data}' using (($1+$2)/2):3 with boxes title 'histogram'",
        "kde": f"plot '{data}' using 1:2 with lines title 'kde'",
        "acf": f"plot '{data}' using 1:2 with impulses title 'autocorrelation'",
        "trace": f"plot '{data}' using 1:2 with lines title 'trace'",
    }
    if kind not in plots:
        raise ValueError(f"unknown plot kind {kind!r}")
    xl = {"acf": "lag", "trace": "iteration"}.get(kind, xlabel)
    lines = [
        "set datafile separator ','",
        "set terminal pngcairo",
        f"set output '{Path(data).stem}.png'",
        f"set xlabel '{xl}'",
    ]
    if kind == "hist":
        lines.append("set style fill solid 0.5")
    # data files carry a header row
    lines.append(plots[kind].replace(f"'{data}'", f"'{data}' every ::1"))
    script = "\n".join(lines) + "\n"
    path.write_text(script)
    return path
