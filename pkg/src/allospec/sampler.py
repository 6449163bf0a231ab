"""Reproducible draws of ``(theta, X)`` from an allometric-extension mixture."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .fileio import atomic_write
from .model import AllometricModel
from .rng import RngStream

__all__ = ["LabeledSample", "RngStream", "sample", "sample_cov", "whiten", "write_csv"]


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """``m`` draws from the mixture.

    ``labels`` are kept for evaluation only; the clustering code path reads
    ``points`` alone.
    """

    labels: np.ndarray
    points: np.ndarray
    model: AllometricModel | None = None
    rng: RngStream | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2:
            raise ValueError("points must be an m x n matrix")
        if labels.shape != (points.shape[0],):
            raise ValueError("labels and points disagree on the sample size")
        if not np.all((labels == 1) | (labels == -1)):
            raise ValueError("labels must be +1 or -1")
        labels.setflags(write=False)
        points.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "points", points)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]


def sample(m: int, model: AllometricModel, rng: RngStream) -> LabeledSample:
    """Draw ``X_i = theta_i mu + sqrt(Sigma_theta) z_i`` with ``P(theta=1) = pi1``.

    Draw order within the stream: ``m`` label uniforms, then ``m * n``
    standard normals in row-major order.
    """
    if m < 1:
        raise ValueError(f"sample size must be >= 1, got {m}")
    draws = rng.open()
    labels = np.where(draws.uniform(m) < model.pi1, 1, -1).astype(np.int8)
    z = draws.normal((m, model.n))
    pos = labels == 1
    points = np.empty_like(z)
    points[pos] = z[pos] @ model.sqrt1 + model.mu
    points[~pos] = z[~pos] @ model.sqrt2 - model.mu
    return LabeledSample(labels, points, model, rng)


def sample_cov(s: LabeledSample | np.ndarray) -> np.ndarray:
    """Uncentered second-moment matrix ``(1/m) sum X_i X_i^T``."""
    x = s.points if isinstance(s, LabeledSample) else np.asarray(s, dtype=np.float64)
    cov = (x.T @ x) / x.shape[0]
    return 0.5 * (cov + cov.T)


def whiten(s: LabeledSample, model: AllometricModel, which: int) -> np.ndarray:
    """Rows ``Sigma_which^{-1/2} (X_i - sign * mu)`` for every point.

    ``sign`` is +1 for component 1 and -1 for component 2. Only the rows whose
    label matches ``which`` are standard normal.
    """
    if which == 1:
        return (s.points - model.mu) @ model.inv_sqrt1
    if which == 2:
        return (s.points + model.mu) @ model.inv_sqrt2
    raise ValueError(f"which must be 1 or 2, got {which!r}")


def write_csv(s: LabeledSample, path=None) -> str:
    """CSV dump with header ``theta,x1,...,xn``; returns the text, writes it if
    ``path`` is given."""
    buf = io.StringIO()
    buf.write(",".join(["theta"] + [f"x{j + 1}" for j in range(s.n)]) + "\n")
    for theta, row in zip(s.labels, s.points):
        buf.write(f"{int(theta)}," + ",".join(format(float(v), ".17g") for v in row) + "\n")
    text = buf.getvalue()
    if path is not None:
        atomic_write(path, text)
    return text
