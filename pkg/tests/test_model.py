import json
import math

import numpy as np
import pytest

from allospec.model import (
    AllometricModel,
    ModelSpec,
    build_model,
    mixture_covariance,
    model_from_json,
    model_to_json,
    prop1_quantities,
    snr,
    validate_model,
)
from allospec.numerics import eig_sym
from allospec.rng import RngStream
from allospec.sampler import sample
from factories import random_spec

DIAG = ModelSpec(n=2, mu_norm=1.0, eigvals1=[4.0, 1.0], eigvals2=[9.0, 1.0])


def test_axis_aligned_construction():
    m = build_model(DIAG)
    np.testing.assert_array_equal(m.sigma1, np.diag([4.0, 1.0]))
    np.testing.assert_array_equal(m.sigma2, np.diag([9.0, 1.0]))
    np.testing.assert_array_equal(m.mu, [1.0, 0.0])
    assert m.pi1 == 0.5 and m.balanced


def test_independent_tail_basis():
    spec = ModelSpec(n=3, mu_norm=2.0, eigvals1=[5.0, 2.0, 1.0], eigvals2=[6.0, 3.0, 0.5],
                     tail_basis="independent(11)")
    m = build_model(spec)
    assert validate_model(m).passed
    v1 = m.eig1.eigenvectors
    v2 = m.eig2.eigenvectors
    assert abs(v1[:, 0] @ v2[:, 0]) == pytest.approx(1.0, abs=1e-12)
    for k in (1, 2):
        assert abs(v1[:, k] @ v2[:, k]) < 1.0 - 1e-3


def test_gap_violation_rejected():
    with pytest.raises(ValueError, match="leading gap required"):
        ModelSpec(n=3, mu_norm=1.0, eigvals1=[1.0, 1.0, 0.5], eigvals2=[2.0, 1.0, 0.5])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 1, "eigvals1": [1.0], "eigvals2": [1.0]},
        {"mu_norm": 0.0},
        {"mu_norm": math.nan},
        {"pi1": 1.0},
        {"eigvals1": [2.0, 1.0, 1.5]},
        {"eigvals1": [2.0, 1.0, -1.0]},
        {"eigvals1": [2.0, 1.0]},
        {"mu_direction": "random"},
        {"tail_basis": "independent(x)"},
    ],
)
def test_spec_validation(kwargs):
    base = dict(n=3, mu_norm=1.0, eigvals1=[3.0, 1.0, 1.0], eigvals2=[4.0, 2.0, 1.0])
    base.update(kwargs)
    with pytest.raises(ValueError):
        ModelSpec(**base)


def test_spec_dict_round_trip_and_unknown_keys():
    d = DIAG.to_dict()
    assert ModelSpec.from_dict(d) == DIAG
    with pytest.raises(ValueError, match="unknown"):
        ModelSpec.from_dict({**d, "sigma": 1})
    with pytest.raises(ValueError, match="missing"):
        ModelSpec.from_dict({"n": 2})


def test_validate_built_model_slack():
    rep = validate_model(build_model(random_spec(np.random.default_rng(1), 12)))
    assert rep.passed
    slack = {c.name: c.slack for c in rep.checks}
    assert slack["align_sigma"] <= 1e-12 and slack["align_mu"] <= 1e-12


def test_validate_rotated_sigma2_fails_alignment():
    s1 = np.diag([4.0, 1.0])
    c, s = math.cos(0.3), math.sin(0.3)
    r = np.array([[c, -s], [s, c]])
    m = AllometricModel(np.array([1.0, 0.0]), s1, r @ s1 @ r.T)
    rep = validate_model(m)
    assert not rep.passed
    failed = {c.name for c in rep.failures()}
    assert "align_sigma" in failed


def test_validate_degenerate_lead_fails_gap():
    m = AllometricModel(np.array([1.0, 0.0, 0.0]), np.diag([2.0, 2.0, 1.0]), np.diag([3.0, 1.0, 1.0]))
    rep = validate_model(m)
    assert any(c.name == "gap1" and "leading gap required" in c.message for c in rep.failures())


def test_model_rejects_bad_shapes():
    with pytest.raises(ValueError):
        AllometricModel(np.array([1.0, 0.0]), np.eye(3), np.eye(2))
    with pytest.raises(ValueError):
        AllometricModel(np.array([np.inf, 0.0]), np.eye(2), np.eye(2))


def test_mixture_covariance_diag_example():
    np.testing.assert_allclose(mixture_covariance(build_model(DIAG)), np.diag([7.5, 1.0]), rtol=1e-15)


def test_mixture_covariance_unbalanced_against_simulation():
    spec = random_spec(np.random.default_rng(2), 3, pi1=0.3)
    m = build_model(spec)
    x = sample(1_000_000, m, RngStream(5)).points
    xc = x - x.mean(axis=0)
    emp = xc.T @ xc / x.shape[0]
    se = np.array([[np.std(xc[:, i] * xc[:, j]) for j in range(3)] for i in range(3)]) / math.sqrt(x.shape[0])
    assert np.all(np.abs(emp - mixture_covariance(m)) <= 3.0 * se)


def test_prop1_diag_example():
    q = prop1_quantities(build_model(DIAG))
    assert q.lambda1_mix == 7.5
    np.testing.assert_array_equal(q.gamma1_mix, [1.0, 0.0])
    assert q.lambda2_mix_bound == 1.0


def test_prop1_unbalanced_hand_value():
    spec = ModelSpec(n=2, mu_norm=1.0, eigvals1=[4.0, 1.0], eigvals2=[9.0, 1.0], pi1=0.25)
    assert prop1_quantities(build_model(spec)).lambda1_mix == pytest.approx(8.5, rel=1e-15)


def test_prop1_against_decomposition_on_random_models():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(2, 16))
        m = build_model(random_spec(rng, n, pi1=float(rng.uniform(0.1, 0.9))))
        q = prop1_quantities(m)
        vals, vecs = eig_sym(m.covariance)
        assert vals[0] == pytest.approx(q.lambda1_mix, rel=1e-10)
        assert abs(vecs[:, 0] @ q.gamma1_mix) >= 1.0 - 1e-10


def test_snr_examples_and_scale_invariance():
    assert snr(build_model(DIAG)) == pytest.approx(1.0 / 9.0, rel=1e-15)
    m = build_model(ModelSpec(n=2, mu_norm=3.0, eigvals1=[4.0, 1.0], eigvals2=[9.0, 1.0]))
    assert snr(m) == pytest.approx(1.0, rel=1e-15)
    m = build_model(random_spec(np.random.default_rng(4), 7))
    for c in (0.01, 3.0, 1e4):
        assert snr(m.scaled(c)) == pytest.approx(snr(m), rel=1e-12)


def test_gamma1_points_along_mu():
    m = build_model(random_spec(np.random.default_rng(5), 9))
    assert m.gamma1 @ m.mu > 0
    assert m.gamma1 @ m.mu == pytest.approx(m.mu_norm, rel=1e-12)


def test_json_round_trip_bitwise():
    m = build_model(random_spec(np.random.default_rng(6), 5, pi1=0.4))
    text = model_to_json(m)
    back = model_from_json(text)
    np.testing.assert_array_equal(back.mu, m.mu)
    np.testing.assert_array_equal(back.sigma1, m.sigma1)
    np.testing.assert_array_equal(back.sigma2, m.sigma2)
    assert back.pi1 == m.pi1
    assert back.hash() == m.hash()
    assert model_to_json(back) == text


def test_json_rejects_unknown_and_malformed():
    d = json.loads(model_to_json(build_model(DIAG)))
    with pytest.raises(ValueError, match="unknown"):
        model_from_json(json.dumps({**d, "extra": 1}))
    with pytest.raises(ValueError):
        model_from_json(json.dumps({**d, "sigma1": [1.0, 2.0]}))


def test_model_arrays_read_only():
    m = build_model(DIAG)
    with pytest.raises(ValueError):
        m.mu[0] = 2.0
