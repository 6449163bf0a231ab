"""Two-cluster spectral clustering: sign of the projection on the top eigenvector
of the uncentered sample second-moment matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import AllometricModel
from .numerics import std_normal_cdf, top_eigvec
from .sampler import LabeledSample, sample_cov

__all__ = [
    "ClusterResult",
    "cluster_points",
    "misclassification_count",
    "misclustering_rate",
    "oracle_misclassification_prob",
    "spectral_cluster",
]


@dataclass(frozen=True)
class PointClustering:
    """What the algorithm itself produces, with no access to labels."""

    gamma1_hat: np.ndarray
    lambda1_hat: float
    scores: np.ndarray
    signs: np.ndarray
    ill_conditioned: bool


@dataclass(frozen=True)
class ClusterResult:
    gamma1_hat: np.ndarray
    lambda1_hat: float
    scores: np.ndarray
    signs: np.ndarray
    misclassification_count: int | None
    misclustering_rate: float
    exact_recovery: bool
    ill_conditioned: bool = False

    @property
    def m(self) -> int:
        return self.scores.size


def cluster_points(points: np.ndarray) -> PointClustering:
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2:
        raise ValueError("spectral clustering needs at least two points")
    top = top_eigvec(sample_cov(points))
    scores = points @ top.vector
    # A score of exactly zero has probability zero; send it to +1.
    signs = np.where(scores < 0, -1, 1).astype(np.int8)
    return PointClustering(top.vector, top.value, scores, signs, top.ill_conditioned)


def misclustering_rate(labels: np.ndarray, signs: np.ndarray) -> float:
    """Disagreement fraction, minimized over the two global label assignments."""
    labels = np.asarray(labels)
    k = int(np.count_nonzero(labels * np.asarray(signs) < 0))
    m = labels.size
    return min(k, m - k) / m


def misclassification_count(s: LabeledSample, r: ClusterResult | PointClustering, align) -> int:
    """Number of points with ``theta_i <g, X_i> < 0`` where ``g`` is the
    estimated eigenvector flipped to have a nonnegative inner product with
    ``align`` (in simulation, the true mean direction)."""
    align = np.asarray(align, dtype=np.float64)
    if not np.linalg.norm(align) > 0:
        raise ValueError("align must be a nonzero vector")
    dot = float(r.gamma1_hat @ align)
    if dot == 0.0:
        raise ValueError("sign convention undefined: estimated eigenvector is orthogonal to align")
    scores = r.scores if dot > 0 else -r.scores
    return int(np.count_nonzero(s.labels * scores < 0))


def spectral_cluster(s: LabeledSample, align=None) -> ClusterResult:
    """Cluster ``s.points`` and score the result against ``s.labels``.

    ``align`` defaults to the generating model's ``mu`` when the sample carries
    one; without either, ``misclassification_count`` is ``None``.
    """
    fit = cluster_points(s.points)
    rate = misclustering_rate(s.labels, fit.signs)
    if align is None and s.model is not None:
        align = s.model.mu
    count = misclassification_count(s, fit, align) if align is not None else None
    return ClusterResult(
        gamma1_hat=fit.gamma1_hat,
        lambda1_hat=fit.lambda1_hat,
        scores=fit.scores,
        signs=fit.signs,
        misclassification_count=count,
        misclustering_rate=rate,
        exact_recovery=rate == 0.0,
        ill_conditioned=fit.ill_conditioned,
    )


def oracle_misclassification_prob(model: AllometricModel) -> float:
    """Misclassification probability of the classifier that knows the true
    leading eigenvector, the large-sample limit of the spectral rule."""
    if not model.balanced:
        raise ValueError("oracle misclassification probability requires pi1 = 1/2")
    l1, l2 = model.lambda1
    r = model.mu_norm
    return 0.5 * std_normal_cdf(-r / math.sqrt(l1)) + 0.5 * std_normal_cdf(-r / math.sqrt(l2))
