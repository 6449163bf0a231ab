import math

import numpy as np
import pytest

from allospec.clustering import (
    cluster_points,
    misclassification_count,
    misclustering_rate,
    oracle_misclassification_prob,
    spectral_cluster,
)
from allospec.model import ModelSpec, build_model
from allospec.rng import RngStream
from allospec.sampler import LabeledSample, sample
from oracles import phi


def _two_points(labels=(1, -1)):
    return LabeledSample(np.array(labels, dtype=np.int8), np.array([[3.0, 0.0], [-3.0, 0.0]]))


def test_two_point_example():
    r = spectral_cluster(_two_points(), align=[1.0, 0.0])
    assert abs(r.gamma1_hat @ np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert r.misclustering_rate == 0.0 and r.exact_recovery
    assert r.misclassification_count == 0


def test_label_flip_symmetry():
    s = sample(500, build_model(ModelSpec(n=3, mu_norm=1.0, eigvals1=[3, 1, 1], eigvals2=[4, 1, 1])),
               RngStream(1))
    fit = cluster_points(s.points)
    assert misclustering_rate(s.labels, fit.signs) == misclustering_rate(-s.labels, fit.signs)
    assert misclustering_rate(s.labels, fit.signs) == misclustering_rate(s.labels, -fit.signs)


def test_count_antisymmetric_in_align():
    model = build_model(ModelSpec(n=4, mu_norm=1.5, eigvals1=[3, 1, 1, 1], eigvals2=[5, 2, 1, 1]))
    s = sample(400, model, RngStream(2))
    fit = cluster_points(s.points)
    k = misclassification_count(s, fit, model.mu)
    assert misclassification_count(s, fit, -model.mu) == s.m - k


def test_count_matches_brute_force():
    rng = np.random.default_rng(3)
    model = build_model(ModelSpec(n=5, mu_norm=1.0, eigvals1=[3, 2, 1, 1, 1], eigvals2=[4, 1, 1, 1, 1]))
    for rep in range(20):
        s = sample(int(rng.integers(10, 200)), model, RngStream(4, rep))
        r = spectral_cluster(s)
        g = r.gamma1_hat if r.gamma1_hat @ model.mu > 0 else -r.gamma1_hat
        brute = sum(1 for theta, x in zip(s.labels, s.points) if theta * float(g @ x) < 0)
        assert r.misclassification_count == brute


def test_orthogonal_align_is_an_error():
    s = _two_points()
    fit = cluster_points(s.points)
    with pytest.raises(ValueError, match="sign convention undefined"):
        misclassification_count(s, fit, [0.0, 1.0])
    with pytest.raises(ValueError):
        misclassification_count(s, fit, [0.0, 0.0])


def test_needs_two_points():
    with pytest.raises(ValueError):
        cluster_points(np.zeros((1, 3)))


def test_oracle_probability_values():
    m = build_model(ModelSpec(n=2, mu_norm=3.0, eigvals1=[4.0, 1.0], eigvals2=[9.0, 1.0]))
    assert oracle_misclassification_prob(m) == pytest.approx(0.5 * phi(-1.5) + 0.5 * phi(-1.0), rel=1e-12)
    # 7-digit reference value
    assert oracle_misclassification_prob(m) == pytest.approx(0.1127313, abs=1e-7)
    far = build_model(ModelSpec(n=2, mu_norm=1e3, eigvals1=[4.0, 1.0], eigvals2=[9.0, 1.0]))
    assert oracle_misclassification_prob(far) == 0.0
    sym = build_model(ModelSpec(n=3, mu_norm=2.0, eigvals1=[4.0, 1.0, 1.0], eigvals2=[4.0, 2.0, 1.0]))
    assert oracle_misclassification_prob(sym) == pytest.approx(phi(-1.0), rel=1e-12)


def test_oracle_requires_balanced():
    m = build_model(ModelSpec(n=2, mu_norm=1.0, eigvals1=[4.0, 1.0], eigvals2=[9.0, 1.0], pi1=0.3))
    with pytest.raises(ValueError):
        oracle_misclassification_prob(m)


def test_misclassification_converges_to_oracle():
    spec = ModelSpec(n=10, mu_norm=3.0, eigvals1=[4.0] + [1.0] * 9, eigvals2=[9.0] + [1.0] * 9)
    model = build_model(spec)
    m, reps = 5000, 2000
    rates = np.empty(reps)
    for r in range(reps):
        s = sample(m, model, RngStream(20, r))
        rates[r] = spectral_cluster(s).misclassification_count / m
    se = rates.std(ddof=1) / math.sqrt(reps)
    assert abs(rates.mean() - 0.1127313) <= 3.0 * se
