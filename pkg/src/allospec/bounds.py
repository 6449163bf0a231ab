"""Closed-form evaluators for the non-asymptotic clustering bounds.

All model-level bounds are stated for the balanced mixture and reject
``pi1 != 1/2``. The absolute constants ``C`` (operator-norm concentration) and
``c`` (norm concentration of a standard normal vector) have no known numerical
value; :class:`Constants` carries them as configuration, and
:func:`allospec.experiments.calibrate` can estimate them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

from .model import AllometricModel, snr
from .numerics import std_normal_cdf

__all__ = [
    "BoundReport",
    "Clamped",
    "ConditionResult",
    "Constants",
    "K_G_NORMAL",
    "K_SUBGAUSSIAN",
    "bound_report",
    "col_lower",
    "condition_tha",
    "condition_thas",
    "cor32_lower",
    "cor34_regime",
    "mills_bound",
    "prop33_bound",
    "prop33_confidence",
    "subgaussian_K",
    "thm31_bound",
]

K_SUBGAUSSIAN = math.sqrt(32.0 / (4.0 - math.e))
K_G_NORMAL = math.sqrt(8.0 / 3.0)


def subgaussian_K() -> float:
    """Sub-gaussian constant valid for every one-dimensional projection of the
    balanced mixture: ``sqrt(32 / (4 - e))``."""
    return K_SUBGAUSSIAN


@dataclass(frozen=True)
class Constants:
    C: float = 1.0
    c: float = 0.01
    K: float = K_SUBGAUSSIAN
    K_g: float = K_G_NORMAL

    def __post_init__(self):
        for name in ("C", "c", "K_g"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"constants.{name}: must be a positive number, got {v!r}")
        if not (math.isfinite(self.K) and self.K >= 1.0):
            raise ValueError(f"constants.K: must be >= 1, got {self.K!r}")

    @property
    def c1(self) -> float:
        return 1.0 + self.K_g ** 2 / math.sqrt(self.c)

    def to_dict(self) -> dict:
        return {**asdict(self), "c1": self.c1}

    @classmethod
    def from_dict(cls, d: dict) -> "Constants":
        d = {k: v for k, v in d.items() if k != "c1"}
        unknown = set(d) - {"C", "c", "K", "K_g"}
        if unknown:
            raise ValueError(f"unknown constants field(s): {', '.join(sorted(unknown))}")
        return cls(**{k: float(v) for k, v in d.items()})


class Clamped(NamedTuple):
    """A probability bound clamped to [0, 1], with the raw value kept."""

    value: float
    raw: float


def _clamp(raw: float) -> Clamped:
    return Clamped(min(1.0, max(0.0, raw)), raw)


class ConditionResult(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def _require_balanced(model: AllometricModel) -> None:
    if not model.balanced:
        raise ValueError("bounds are stated for the balanced mixture; pi1 must be 1/2")


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def _check_n(n) -> None:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n!r}")


def prop33_bound(m, n, u, model: AllometricModel, k: Constants = Constants()) -> float:
    """High-probability bound on ``||S_m - Sigma||_op`` (holds with probability
    at least :func:`prop33_confidence`)."""
    _require_balanced(model)
    if u < 0:
        raise ValueError(f"u must be >= 0, got {u!r}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m!r}")
    _check_n(n)
    r = (n + u) / m
    l1, l2 = model.lambda1
    return k.C * k.K ** 2 * (math.sqrt(r) + r) * (0.5 * (l1 + l2) + model.mu_norm ** 2)


def prop33_confidence(u: float) -> float:
    return 1.0 - 2.0 * math.exp(-u)


def condition_tha(m, n, alpha, model: AllometricModel, k: Constants = Constants()) -> ConditionResult:
    """Sample-size condition under which the per-point misclassification bound
    applies."""
    _require_balanced(model)
    _check_alpha(alpha)
    _check_n(n)
    r = 2.0 * n / m
    l1, l2 = model.lambda1
    mu = model.mu_norm
    lhs = math.sqrt(2.0) * k.C * k.K ** 2 * (math.sqrt(r) + r) * ((l1 + l2) / mu ** 2 + 2.0)
    rhs = alpha * mu / (k.c1 * math.sqrt(n * max(l1, l2)) + mu)
    return ConditionResult(lhs, rhs, lhs <= rhs)


def condition_thas(m, n, alpha, eta, k: Constants = Constants()) -> ConditionResult:
    """The same condition written through the signal-to-noise ratio only; it
    implies :func:`condition_tha`."""
    _check_alpha(alpha)
    _check_n(n)
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta!r}")
    r = 2.0 * n / m
    lhs = 2.0 ** 1.5 * k.C * k.K ** 2 * (math.sqrt(r) + r) * (1.0 / eta + 1.0)
    rhs = alpha / (k.c1 * math.sqrt(n / eta) + 1.0)
    return ConditionResult(lhs, rhs, lhs <= rhs)


def thm31_bound(alpha, model: AllometricModel, n=None) -> float:
    """``Phi(-(1 - alpha) ||mu|| / sqrt(max lambda1)) + 6 e^{-n}``.

    Only meaningful when :func:`condition_tha` holds; callers record that.
    """
    _require_balanced(model)
    _check_alpha(alpha)
    n = model.n if n is None else n
    _check_n(n)
    z = -(1.0 - alpha) * model.mu_norm / math.sqrt(model.max_lambda1)
    return std_normal_cdf(z) + 6.0 * math.exp(-n)


def mills_bound(alpha, eta, n) -> float:
    """Gaussian-tail (Mills ratio) relaxation of :func:`thm31_bound`."""
    _check_alpha(alpha)
    _check_n(n)
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta!r}")
    a = (1.0 - alpha) ** 2 * eta
    return math.exp(-0.5 * a) / math.sqrt(2.0 * math.pi * a) + 6.0 * math.exp(-n)


def cor32_lower(epsilon, alpha, model: AllometricModel, n=None) -> Clamped:
    """Lower bound on ``P(#misclassified <= epsilon m)``."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon!r}")
    return _clamp(1.0 - thm31_bound(alpha, model, n) / epsilon)


def col_lower(m, alpha, eta, n) -> Clamped:
    """Union-bound lower estimate of the exact-recovery probability."""
    tail = mills_bound(alpha, eta, n) - 6.0 * math.exp(-n)
    return _clamp(1.0 - m * tail - 6.0 * m * math.exp(-n))


def cor34_regime(m, n, eta, nm_max=0.1, logm_n_max=0.1, n_eta_max=1.0) -> dict:
    """Ratios that must vanish (or stay bounded) for consistent recovery."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    nm = n / m
    logm_n = math.log(m) / n
    n_eta = n / eta
    return {
        "nm_ratio": nm,
        "logm_n_ratio": logm_n,
        "n_over_eta": n_eta,
        "thresholds": {"nm_max": nm_max, "logm_n_max": logm_n_max, "n_eta_max": n_eta_max},
        "in_regime": nm <= nm_max and logm_n <= logm_n_max and n_eta <= n_eta_max,
    }


@dataclass(frozen=True)
class BoundReport:
    m: int
    n: int
    alpha: float
    epsilon: float
    u: float
    constants: Constants
    model_hash: str
    eta: float
    condition_tha_lhs: float
    condition_tha_rhs: float
    condition_holds: bool
    thm_bound: Clamped
    mills_bound: Clamped
    cor32_lower: Clamped
    prop33_bound: float
    prop33_confidence: float
    regime: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def prob(c: Clamped) -> dict:
            return {"value": c.value, "raw": c.raw}

        return {
            "inputs": {
                "m": self.m,
                "n": self.n,
                "alpha": self.alpha,
                "epsilon": self.epsilon,
                "u": self.u,
                "model_hash": self.model_hash,
                "constants": self.constants.to_dict(),
            },
            "eta": self.eta,
            "condition_tha": {
                "lhs": self.condition_tha_lhs,
                "rhs": self.condition_tha_rhs,
                "holds": self.condition_holds,
            },
            "thm_bound": prob(self.thm_bound),
            "mills_bound": prob(self.mills_bound),
            "cor32_lower": prob(self.cor32_lower),
            "prop33": {"bound": self.prop33_bound, "confidence": self.prop33_confidence},
            "regime": self.regime,
        }


def bound_report(m, n, model: AllometricModel, alpha=0.5, epsilon=0.05, u=None,
                 k: Constants = Constants()) -> BoundReport:
    """Evaluate every bound at ``(m, n)`` for ``model``; ``u`` defaults to ``n``
    (the choice made inside the misclassification argument)."""
    u = float(n) if u is None else float(u)
    eta = snr(model)
    cond = condition_tha(m, n, alpha, model, k)
    return BoundReport(
        m=m, n=n, alpha=alpha, epsilon=epsilon, u=u, constants=k,
        model_hash=model.hash(),
        eta=eta,
        condition_tha_lhs=cond.lhs,
        condition_tha_rhs=cond.rhs,
        condition_holds=cond.holds,
        thm_bound=_clamp(thm31_bound(alpha, model, n)),
        mills_bound=_clamp(mills_bound(alpha, eta, n)),
        cor32_lower=cor32_lower(epsilon, alpha, model, n),
        prop33_bound=prop33_bound(m, n, u, model, k),
        prop33_confidence=prop33_confidence(u),
        regime=cor34_regime(m, n, eta),
    )
