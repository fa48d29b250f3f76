"""Gaussian likelihoods and the ball-drop forward model."""

from __future__ import annotations

import abc
import csv
import math
from pathlib import Path

import numpy as np

from .core import BoxSubset, ContractError, CovarianceMatrix, ScalarFunction

__all__ = [
    "ModelEvaluationError",
    "ForwardModel",
    "BallDropModel",
    "GaussianLikelihood",
    "balldrop_eval",
    "gaussian_ln_likelihood",
    "synthetic_ball_drop_data",
    "read_dataset",
    "write_dataset",
    "default_dataset_path",
]


class ModelEvaluationError(RuntimeError):
    """The forward model produced non-finite output at ``theta``."""

    def __init__(self, theta, message="forward model returned non-finite output"):
        self.theta = np.array(theta, dtype=float, copy=True)
        super().__init__(f"{message} at theta={self.theta.tolist()}")


class ForwardModel(abc.ABC):
    """Parameter-to-observable map. Implementations must be pure functions
    of ``theta`` so that several chains may call them concurrently."""

    @abc.abstractmethod
    def evaluate_model(self, theta) -> np.ndarray:
        ...


def balldrop_eval(g, heights) -> np.ndarray:
    """Fall times ``sqrt(2 h / g)`` for an object dropped from rest."""
    g = float(g)
    if not g > 0:
        raise ValueError(f"gravity must be positive, got {g}")
    h = np.asarray(heights, dtype=float)
    if np.any(h < 0):
        raise ValueError("drop heights must be non-negative")
    return np.sqrt(2.0 * h / g)


class BallDropModel(ForwardModel):
    def __init__(self, heights):
        h = np.atleast_1d(np.asarray(heights, dtype=float))
        if h.size == 0 or np.any(h <= 0):
            raise ContractError("ball-drop heights must be positive")
        h.setflags(write=False)
        self.heights = h

    def evaluate_model(self, theta) -> np.ndarray:
        return balldrop_eval(np.atleast_1d(theta)[0], self.heights)


def _noise_kind(noise):
    if isinstance(noise, CovarianceMatrix):
        return "full"
    arr = np.asarray(noise, dtype=float)
    if arr.ndim == 0:
        return "scalar"
    if arr.ndim == 1:
        return "diagonal"
    return "full"


def gaussian_ln_likelihood(model_out, y, noise) -> float:
    """Unnormalized Gaussian log-likelihood ``-0.5 r^T C^{-1} r`` with
    ``r = model_out - y``.

    ``noise`` is a scalar variance, a vector of per-observation variances or
    a full covariance (``CovarianceMatrix`` or 2-d array).
    """
    r = np.atleast_1d(np.asarray(model_out, dtype=float)) - np.atleast_1d(
        np.asarray(y, dtype=float)
    )
    kind = _noise_kind(noise)
    if kind == "scalar":
        return -0.5 * float(r @ r) / float(noise)
    if kind == "diagonal":
        var = np.asarray(noise, dtype=float)
        if var.shape != r.shape:
            raise ContractError("diagonal noise length differs from the data length")
        return -0.5 * float(np.sum(r * r / var))
    cov = noise if isinstance(noise, CovarianceMatrix) else CovarianceMatrix(noise)
    if cov.dim != r.size:
        raise ContractError("noise covariance size differs from the data length")
    return -0.5 * cov.mahalanobis_sq(r)


class GaussianLikelihood(ScalarFunction):
    """``ln p(y | theta) = -0.5 (G(theta) - y)^T C^{-1} (G(theta) - y)``.

    The normalizing constant is omitted; samplers only need differences.

    Parameters
    ----------
    model : ForwardModel
    observations : array_like
        Data vector ``y`` of length ``n_d``.
    noise : float, array_like or CovarianceMatrix
        Scalar variance, per-observation variances, or full covariance.
    domain : BoxSubset, optional
        Parameter domain; defaults to the unbounded 1-d box.
    """

    def __init__(self, model: ForwardModel, observations, noise, domain: BoxSubset | None = None):
        y = np.atleast_1d(np.asarray(observations, dtype=float))
        if y.size < 1:
            raise ContractError("at least one observation is required")
        kind = _noise_kind(noise)
        if kind == "scalar":
            if not float(noise) > 0:
                raise ContractError("noise variance must be positive")
            noise = float(noise)
        elif kind == "diagonal":
            noise = np.asarray(noise, dtype=float).copy()
            if noise.shape != y.shape or np.any(noise <= 0):
                raise ContractError("diagonal variances must be positive, one per observation")
            noise.setflags(write=False)
        elif not isinstance(noise, CovarianceMatrix):
            noise = CovarianceMatrix(noise)
        if kind == "full" and noise.dim != y.size:
            raise ContractError("noise covariance size differs from the data length")
        y.setflags(write=False)
        self.model = model
        self.observations = y
        self.noise = noise
        self.domain = domain if domain is not None else BoxSubset.unbounded(1)

    def ln_value(self, theta) -> float:
        out = np.asarray(self.model.evaluate_model(theta), dtype=float)
        if out.shape != self.observations.shape:
            raise ContractError(
                f"model output has shape {out.shape}, expected {self.observations.shape}"
            )
        if not np.all(np.isfinite(out)):
            raise ModelEvaluationError(theta)
        return gaussian_ln_likelihood(out, self.observations, self.noise)


def synthetic_ball_drop_data(n_obs: int = 14, g: float = 9.8, sigma: float = 0.05,
                             seed: int = 2012):
    """Synthetic drop-time data: heights ``3 + 2 i`` metres, times
    ``sqrt(2 h / g)`` plus ``N(0, sigma^2)`` noise.

    Returns
    -------
    heights, times : ndarray
    """
    rng = np.random.default_rng(seed)
    heights = 3.0 + 2.0 * np.arange(n_obs)
    times = balldrop_eval(g, heights) + sigma * rng.standard_normal(n_obs)
    return heights, times


def default_dataset_path() -> Path:
    return Path(__file__).resolve().parent / "data" / "ball_drop.csv"


def write_dataset(path, heights, times) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["height_m", "time_s"])
        for h, t in zip(heights, times):
            w.writerow([repr(float(h)), repr(float(t))])


def read_dataset(path=None):
    """Read a ``height_m,time_s`` CSV; defaults to the shipped synthetic set."""
    path = Path(path) if path is not None else default_dataset_path()
    heights, times = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["height_m", "time_s"]:
            raise ValueError(f"{path}: expected header 'height_m,time_s', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                h, t = (float(v) for v in row)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from None
            if not (math.isfinite(h) and math.isfinite(t)):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            heights.append(h)
            times.append(t)
    return np.array(heights), np.array(times)
