"""Allometric-extension mixtures of two normal distributions.

The two components are ``N(mu, sigma1)`` and ``N(-mu, sigma2)`` with weights
``pi1`` and ``1 - pi1``. The model requires that the leading eigenvectors of
``sigma1`` and ``sigma2`` coincide and are parallel to ``mu``; models are
therefore built from spectra plus a direction (:func:`build_model`), which makes
the relation exact, and externally supplied matrices are checked with
:func:`validate_model`.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .numerics import EigenDecomp, eig_sym, spd_inv_sqrt, spd_sqrt, symmetrize
from .rng import RngStream

__all__ = [
    "AllometricModel",
    "Check",
    "ModelSpec",
    "Prop1Quantities",
    "ValidationReport",
    "build_model",
    "mixture_covariance",
    "model_from_json",
    "model_to_json",
    "prop1_quantities",
    "snr",
    "validate_model",
]

TOL_BUILT = 1e-10
TOL_FILE = 1e-6
GAP_MESSAGE = "leading gap required"

_MU_STREAM = 0x6D75
_TAIL_STREAM = 0x7461696C


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AllometricModel:
    mu: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    pi1: float = 0.5

    def __post_init__(self):
        mu = _readonly(self.mu)
        if mu.ndim != 1 or mu.size < 1:
            raise ValueError("mu must be a nonempty vector")
        n = mu.size
        for name in ("sigma1", "sigma2"):
            s = np.asarray(getattr(self, name), dtype=np.float64)
            if s.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got shape {s.shape}")
            object.__setattr__(self, name, _readonly(symmetrize(s)))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "pi1", float(self.pi1))
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu has non-finite entries")

    @property
    def n(self) -> int:
        return self.mu.size

    @property
    def pi2(self) -> float:
        return 1.0 - self.pi1

    @cached_property
    def mu_norm(self) -> float:
        return float(np.linalg.norm(self.mu))

    @cached_property
    def eig1(self) -> EigenDecomp:
        return eig_sym(self.sigma1)

    @cached_property
    def eig2(self) -> EigenDecomp:
        return eig_sym(self.sigma2)

    @property
    def lambda1(self) -> tuple[float, float]:
        """Leading eigenvalues of ``sigma1`` and ``sigma2``."""
        return float(self.eig1.eigenvalues[0]), float(self.eig2.eigenvalues[0])

    @property
    def max_lambda1(self) -> float:
        return max(self.lambda1)

    @cached_property
    def gamma1(self) -> np.ndarray:
        """Leading eigenvector of ``sigma1``, signed to point along ``mu``."""
        v = self.eig1.eigenvectors[:, 0].copy()
        if v @ self.mu < 0:
            v = -v
        v.setflags(write=False)
        return v

    @cached_property
    def sqrt1(self) -> np.ndarray:
        return _readonly(spd_sqrt(self.sigma1))

    @cached_property
    def sqrt2(self) -> np.ndarray:
        return _readonly(spd_sqrt(self.sigma2))

    @cached_property
    def inv_sqrt1(self) -> np.ndarray:
        return _readonly(spd_inv_sqrt(self.sigma1))

    @cached_property
    def inv_sqrt2(self) -> np.ndarray:
        return _readonly(spd_inv_sqrt(self.sigma2))

    @cached_property
    def covariance(self) -> np.ndarray:
        return _readonly(mixture_covariance(self))

    @property
    def balanced(self) -> bool:
        return self.pi1 == 0.5

    def scaled(self, c: float) -> "AllometricModel":
        """The model of ``c * X``: ``mu -> c mu``, ``sigma_i -> c^2 sigma_i``."""
        return AllometricModel(c * self.mu, c * c * self.sigma1, c * c * self.sigma2, self.pi1)

    def hash(self) -> str:
        return hashlib.sha256(model_to_json(self).encode()).hexdigest()[:16]


_RANDOM_RE = re.compile(r"^(random|independent)\((\d+)\)$")


def _parse_seeded(value: str, plain: str, seeded: str, fieldname: str) -> int | None:
    if value == plain:
        return None
    m = _RANDOM_RE.match(value)
    if m and m.group(1) == seeded:
        return int(m.group(2))
    raise ValueError(f"{fieldname}: expected '{plain}' or '{seeded}(<seed>)', got {value!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Spectral parameterization of an allometric-extension model.

    ``mu_direction`` is ``"axis"`` (mu along e1) or ``"random(<seed>)"``;
    ``tail_basis`` is ``"shared"`` or ``"independent(<seed>)"``, the latter
    drawing the trailing eigenvectors of ``sigma2`` as a random rotation of
    those of ``sigma1`` inside the orthogonal complement of mu.
    """

    n: int
    mu_norm: float
    eigvals1: tuple
    eigvals2: tuple
    mu_direction: str = "axis"
    tail_basis: str = "shared"
    pi1: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "eigvals1", tuple(float(x) for x in self.eigvals1))
        object.__setattr__(self, "eigvals2", tuple(float(x) for x in self.eigvals2))
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise ValueError(f"n: must be an integer >= 2, got {self.n!r}")
        if not (math.isfinite(self.mu_norm) and self.mu_norm > 0):
            raise ValueError(f"mu_norm: must be positive, got {self.mu_norm!r}")
        if not 0.0 < self.pi1 < 1.0:
            raise ValueError(f"pi1: must lie in (0, 1), got {self.pi1!r}")
        for name in ("eigvals1", "eigvals2"):
            vals = getattr(self, name)
            if len(vals) != self.n:
                raise ValueError(f"{name}: expected {self.n} values, got {len(vals)}")
            if not all(math.isfinite(v) and v > 0 for v in vals):
                raise ValueError(f"{name}: eigenvalues must be positive and finite")
            if any(b > a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name}: eigenvalues must be in descending order")
            if not vals[0] > vals[1]:
                raise ValueError(f"{name}: {GAP_MESSAGE} (got {vals[0]!r} and {vals[1]!r})")
        _parse_seeded(self.mu_direction, "axis", "random", "mu_direction")
        _parse_seeded(self.tail_basis, "shared", "independent", "tail_basis")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {"n", "mu_norm", "eigvals1", "eigvals2", "mu_direction", "tail_basis", "pi1"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model spec field(s): {', '.join(sorted(unknown))}")
        missing = {"n", "mu_norm", "eigvals1", "eigvals2"} - set(d)
        if missing:
            raise ValueError(f"missing model spec field(s): {', '.join(sorted(missing))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mu_norm": self.mu_norm,
            "eigvals1": list(self.eigvals1),
            "eigvals2": list(self.eigvals2),
            "mu_direction": self.mu_direction,
            "tail_basis": self.tail_basis,
            "pi1": self.pi1,
        }


def _basis_with_first(u: np.ndarray) -> np.ndarray:
    """Orthonormal basis (as columns) whose first column is the unit vector u."""
    n = u.size
    e1 = np.zeros(n)
    e1[0] = 1.0
    v = u - e1
    vv = float(v @ v)
    if vv == 0.0:
        return np.eye(n)
    return np.eye(n) - (2.0 / vv) * np.outer(v, v)


def _random_orthogonal(k: int, seed: int) -> np.ndarray:
    g = RngStream(seed, _TAIL_STREAM).open().normal((k, k))
    q, r = np.linalg.qr(g)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def build_model(spec: ModelSpec) -> AllometricModel:
    """Construct a model whose allometric relation holds by construction."""
    n = spec.n
    mu_seed = _parse_seeded(spec.mu_direction, "axis", "random", "mu_direction")
    if mu_seed is None:
        u = np.zeros(n)
        u[0] = 1.0
    else:
        u = RngStream(mu_seed, _MU_STREAM).open().normal(n)
        u /= np.linalg.norm(u)
    q1 = _basis_with_first(u)
    tail_seed = _parse_seeded(spec.tail_basis, "shared", "independent", "tail_basis")
    if tail_seed is None:
        q2 = q1
    else:
        rot = np.eye(n)
        rot[1:, 1:] = _random_orthogonal(n - 1, tail_seed)
        q2 = q1 @ rot
    s1 = (q1 * np.asarray(spec.eigvals1)) @ q1.T
    s2 = (q2 * np.asarray(spec.eigvals2)) @ q2.T
    # Symmetrize by averaging rather than trusting one triangle of a rounded product.
    s1 = 0.5 * (s1 + s1.T)
    s2 = 0.5 * (s2 + s2.T)
    return AllometricModel(spec.mu_norm * u, s1, s2, spec.pi1)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    slack: float
    message: str = ""


@dataclass(frozen=True)
class ValidationReport:
    tol: float
    checks: tuple[Check, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "checks": [
                {"name": c.name, "passed": c.passed, "slack": c.slack, "message": c.message}
                for c in self.checks
            ],
        }


def validate_model(m: AllometricModel, tol: float = TOL_BUILT) -> ValidationReport:
    """Check every model invariant and report the measured slack of each.

    Alignment slack is ``1 - |cos|``; the sign of each leading eigenvector is
    irrelevant. Gap slack is the relative leading gap ``(l1 - l2) / l1``.
    """
    checks = []
    checks.append(Check("pi1", 0.0 < m.pi1 < 1.0, min(m.pi1, 1.0 - m.pi1), "pi1 must lie in (0, 1)"))
    checks.append(Check("mu_nonzero", m.mu_norm > 0.0, m.mu_norm, "mu must be nonzero"))
    for i, dec in ((1, m.eig1), (2, m.eig2)):
        vals = dec.eigenvalues
        lead = float(vals[0])
        spd_slack = float(vals[-1]) / lead if lead > 0 else -math.inf
        checks.append(
            Check(f"spd{i}", spd_slack > 1e-12, spd_slack, f"sigma{i} must be positive definite")
        )
        gap = (lead - float(vals[1])) / lead if m.n > 1 and lead > 0 else 0.0
        checks.append(Check(f"gap{i}", gap > tol, gap, f"sigma{i}: {GAP_MESSAGE}"))
    g1 = m.eig1.eigenvectors[:, 0]
    g2 = m.eig2.eigenvectors[:, 0]
    cos12 = abs(float(g1 @ g2))
    checks.append(
        Check("align_sigma", cos12 >= 1.0 - tol, 1.0 - cos12,
              "leading eigenvectors of sigma1 and sigma2 must coincide")
    )
    if m.mu_norm > 0:
        cos_mu = abs(float(g1 @ m.mu)) / m.mu_norm
        checks.append(
            Check("align_mu", cos_mu >= 1.0 - tol, 1.0 - cos_mu,
                  "leading eigenvector must be parallel to mu")
        )
    return ValidationReport(tol, tuple(checks))


def mixture_covariance(m: AllometricModel) -> np.ndarray:
    """Covariance of the mixture: ``pi1 S1 + pi2 S2 + 4 pi1 pi2 mu mu^T``.

    With equal weights this is also the second-moment matrix ``E[X X^T]``.
    """
    w = 4.0 * m.pi1 * m.pi2
    cov = m.pi1 * m.sigma1 + m.pi2 * m.sigma2 + w * np.outer(m.mu, m.mu)
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class Prop1Quantities:
    lambda1_mix: float
    gamma1_mix: np.ndarray
    lambda2_mix_bound: float


def prop1_quantities(m: AllometricModel) -> Prop1Quantities:
    """Closed-form leading eigenpair of the mixture covariance and the bound on
    its second eigenvalue."""
    l11, l12 = m.lambda1
    diff_sq = 4.0 * m.mu_norm ** 2
    lam1 = m.pi1 * l11 + m.pi2 * l12 + m.pi1 * m.pi2 * diff_sq
    l21 = float(m.eig1.eigenvalues[1])
    l22 = float(m.eig2.eigenvalues[1])
    return Prop1Quantities(lam1, m.gamma1.copy(), m.pi1 * l21 + m.pi2 * l22)


def snr(m: AllometricModel) -> float:
    return m.mu_norm ** 2 / m.max_lambda1


def _fmt(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    return format(x, ".17g")


def _lower_triangle(a: np.ndarray) -> list[float]:
    n = a.shape[0]
    return [float(a[i, j]) for i in range(n) for j in range(i + 1)]


def model_to_json(m: AllometricModel) -> str:
    """Serialize with every number written to 17 significant digits."""
    def arr(values):
        return "[" + ", ".join(_fmt(v) for v in values) + "]"

    return (
        "{\n"
        f'  "n": {m.n},\n'
        f'  "mu": {arr(m.mu)},\n'
        f'  "sigma1": {arr(_lower_triangle(m.sigma1))},\n'
        f'  "sigma2": {arr(_lower_triangle(m.sigma2))},\n'
        f'  "pi1": {_fmt(m.pi1)}\n'
        "}\n"
    )


def _from_lower(values: Sequence[float], n: int, name: str) -> np.ndarray:
    if len(values) != n * (n + 1) // 2:
        raise ValueError(f"{name}: expected {n * (n + 1) // 2} lower-triangle entries, got {len(values)}")
    a = np.zeros((n, n))
    rows, cols = np.tril_indices(n)
    a[rows, cols] = values
    a[cols, rows] = values
    return a


def model_from_dict(d: dict) -> AllometricModel:
    known = {"n", "mu", "sigma1", "sigma2", "pi1"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown model field(s): {', '.join(sorted(unknown))}")
    for key in ("n", "mu", "sigma1", "sigma2"):
        if key not in d:
            raise ValueError(f"missing model field: {key}")
    n = d["n"]
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"n: must be a positive integer, got {n!r}")
    if len(d["mu"]) != n:
        raise ValueError(f"mu: expected {n} entries, got {len(d['mu'])}")
    return AllometricModel(
        np.asarray(d["mu"], dtype=np.float64),
        _from_lower(d["sigma1"], n, "sigma1"),
        _from_lower(d["sigma2"], n, "sigma2"),
        d.get("pi1", 0.5),
    )


def model_from_json(text: str) -> AllometricModel:
    return model_from_dict(json.loads(text))
