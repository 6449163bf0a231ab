"""Seeded Monte Carlo harness comparing simulated clustering behaviour with the
closed-form bounds.

Every replication draws from its own stream
``RngStream(seed).derive(kind, grid_point, rep)``, so results depend only on the
configuration and seed. Replications are split into contiguous blocks, one per
worker, and merged back by index; the worker count never changes the output.
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bounds import (
    Constants,
    col_lower,
    condition_tha,
    cor32_lower,
    mills_bound,
    prop33_bound,
    prop33_confidence,
    thm31_bound,
)
from .clustering import cluster_points, misclassification_count, misclustering_rate
from .clustering import oracle_misclassification_prob
from .fileio import atomic_write, fmt_float
from .model import AllometricModel, ModelSpec, build_model, snr
from .numerics import eig_sym, op_norm, top_eigvec
from .rng import RngStream
from .sampler import sample, sample_cov

__all__ = [
    "CalibrationResult",
    "ConfigError",
    "ExperimentConfig",
    "ModelProfile",
    "calibrate",
    "davis_kahan_rep",
    "load_config",
    "order_statistic",
    "run_davis_kahan_check",
    "run_misclassification",
    "run_opnorm",
    "run_recovery",
    "run_subgaussian_check",
    "write_results",
]

MIN_CALIBRATION_REPS = 500
C_HAT_CAP = 1e6

_KIND = {"misclass": 1, "recovery": 2, "opnorm": 3, "subgaussian": 4, "davis_kahan": 5, "tail": 6}


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None,
                 source: str | None = None):
        self.field = field
        self.line = line
        where = source or "config"
        if line is not None:
            where = f"{where}:{line}"
        prefix = f"{where}: field '{field}'" if field else where
        super().__init__(f"{prefix}: {message}")


def _spectrum(value, n: int, name: str) -> list[float]:
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ValueError(f"{name}: explicit spectrum has {len(value)} values but n = {n}")
        return [float(v) for v in value]
    if isinstance(value, dict):
        if set(value) != {"lead", "tail"}:
            raise ValueError(f"{name}: spectrum profile needs exactly 'lead' and 'tail'")
        lead = float(value["lead"])
        tail = value["tail"]
        if isinstance(tail, (list, tuple)):
            if len(tail) != 2:
                raise ValueError(f"{name}.tail: expected a value or [high, low]")
            rest = np.linspace(float(tail[0]), float(tail[1]), n - 1).tolist()
        else:
            rest = [float(tail)] * (n - 1)
        return [lead] + rest
    raise ValueError(f"{name}: expected a list of eigenvalues or {{'lead', 'tail'}}")


@dataclass(frozen=True)
class ModelProfile:
    """Dimension-free model description, instantiated per grid point.

    A spectrum is either an explicit list (only usable with a single ``n``) or
    ``{"lead": l1, "tail": t}`` with ``t`` a constant or a ``[high, low]``
    linear ramp for eigenvalues 2..n. When a grid point carries ``eta``, the
    mean norm is set to ``sqrt(eta * max lead)``.
    """

    eigvals1: Any = field(default_factory=lambda: {"lead": 4.0, "tail": 1.0})
    eigvals2: Any = field(default_factory=lambda: {"lead": 9.0, "tail": 1.0})
    mu_norm: float = 3.0
    mu_direction: str = "axis"
    tail_basis: str = "shared"
    pi1: float = 0.5

    def spec_for(self, n: int, eta: float | None = None) -> ModelSpec:
        e1 = _spectrum(self.eigvals1, n, "eigvals1")
        e2 = _spectrum(self.eigvals2, n, "eigvals2")
        mu_norm = self.mu_norm if eta is None else math.sqrt(eta * max(e1[0], e2[0]))
        return ModelSpec(n=n, mu_norm=mu_norm, eigvals1=e1, eigvals2=e2,
                         mu_direction=self.mu_direction, tail_basis=self.tail_basis, pi1=self.pi1)

    def model_for(self, n: int, eta: float | None = None) -> AllometricModel:
        return build_model(self.spec_for(n, eta))


@dataclass(frozen=True)
class ExperimentConfig:
    model_spec: ModelProfile = field(default_factory=ModelProfile)
    m_grid: tuple = (1000,)
    n_grid: tuple = (10,)
    eta_grid: tuple | None = None
    m_rule: dict | None = None
    eta_rule: dict | None = None
    reps: int = 100
    alpha: float = 0.5
    epsilon: float = 0.05
    constants: Constants = field(default_factory=Constants)
    seed: int = 0
    workers: int = 1
    output_path: str | None = None
    u_grid: tuple = (2.0,)
    directions: int = 20
    draws: int = 1_000_000
    t_grid: tuple = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
    safety: float = 1.5
    track_opnorm: bool = True

    def points(self) -> list[tuple[int, int, float | None]]:
        """Grid points ``(m, n, eta)`` in n-major, then eta, then m order."""
        out = []
        for n in self.n_grid:
            if self.eta_rule is not None:
                etas = [float(self.eta_rule["per_n"]) * n]
            elif self.eta_grid is not None:
                etas = list(self.eta_grid)
            else:
                etas = [None]
            if self.m_rule is not None:
                ms = [int(math.ceil(n ** float(self.m_rule["exponent"]))) * int(self.m_rule.get("factor", 1))]
            else:
                ms = list(self.m_grid)
            for eta in etas:
                for m in ms:
                    out.append((int(m), int(n), eta))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["constants"] = self.constants.to_dict()
        d["model_spec"] = asdict(self.model_spec)
        return d


# ---------------------------------------------------------------------------
# config loading

def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int_list(v, minimum=1) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_int(x) and x >= minimum for x in v)


def _num_list(v, positive=True) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_num(x) and (x > 0 or not positive) for x in v)


_SCHEMA: dict[str, tuple[Callable[[Any], bool], str]] = {
    "m_grid": (_int_list, "a nonempty list of integers >= 1"),
    "n_grid": (lambda v: _int_list(v, 2), "a nonempty list of integers >= 2"),
    "eta_grid": (lambda v: v is None or _num_list(v), "null or a nonempty list of positive numbers"),
    "m_rule": (lambda v: v is None or (isinstance(v, dict) and set(v) <= {"exponent", "factor"}
                                       and _is_num(v.get("exponent")) and _is_int(v.get("factor", 1))
                                       and v.get("factor", 1) >= 1),
               "null or {\"exponent\": number, \"factor\": integer}"),
    "eta_rule": (lambda v: v is None or (isinstance(v, dict) and set(v) == {"per_n"} and _is_num(v["per_n"])
                                         and v["per_n"] > 0),
                 "null or {\"per_n\": positive number}"),
    "reps": (lambda v: _is_int(v) and v >= 1, "an integer >= 1"),
    "alpha": (lambda v: _is_num(v) and 0 < v < 1, "a number in (0, 1)"),
    "epsilon": (lambda v: _is_num(v) and 0 < v <= 1, "a number in (0, 1]"),
    "seed": (lambda v: _is_int(v) and 0 <= v < 2 ** 64, "an unsigned 64-bit integer"),
    "workers": (lambda v: _is_int(v) and v >= 1, "an integer >= 1"),
    "output_path": (lambda v: v is None or isinstance(v, str), "null or a path string"),
    "u_grid": (lambda v: isinstance(v, list) and len(v) > 0 and all(_is_num(x) and x >= 0 for x in v),
               "a nonempty list of numbers >= 0"),
    "directions": (lambda v: _is_int(v) and v >= 1, "an integer >= 1"),
    "draws": (lambda v: _is_int(v) and v >= 2, "an integer >= 2"),
    "t_grid": (_num_list, "a nonempty list of positive numbers"),
    "safety": (lambda v: _is_num(v) and v >= 1, "a number >= 1"),
    "track_opnorm": (lambda v: isinstance(v, bool), "true or false"),
}

_MODEL_SCHEMA: dict[str, tuple[Callable[[Any], bool], str]] = {
    "n": (lambda v: _is_int(v) and v >= 2, "an integer >= 2"),
    "eigvals1": (lambda v: isinstance(v, (list, dict)), "a list or {\"lead\", \"tail\"}"),
    "eigvals2": (lambda v: isinstance(v, (list, dict)), "a list or {\"lead\", \"tail\"}"),
    "mu_norm": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "mu_direction": (lambda v: isinstance(v, str), "'axis' or 'random(<seed>)'"),
    "tail_basis": (lambda v: isinstance(v, str), "'shared' or 'independent(<seed>)'"),
    "pi1": (lambda v: _is_num(v) and 0 < v < 1, "a number in (0, 1)"),
}

_CONSTANTS_SCHEMA = {
    "C": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "c": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "K": (lambda v: _is_num(v) and v >= 1, "a number >= 1"),
    "K_g": (lambda v: _is_num(v) and v > 0, "a positive number"),
    "c1": (lambda v: True, "ignored (derived)"),
}


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    leaf = key.split(".")[-1]
    m = re.search(r'"' + re.escape(leaf) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(d: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key=value`` (dotted keys, JSON values) overrides to a config dict."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form KEY=VALUE", source="--set")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        target = d
        for p in parts[:-1]:
            if p not in target or target[p] is None:
                target[p] = {}
            if not isinstance(target[p], dict):
                raise ConfigError(f"cannot set a sub-field of a non-object", field=key, source="--set")
            target = target[p]
        target[parts[-1]] = _parse_value(raw)
    return d


def config_from_dict(d: dict, text: str | None = None, source: str | None = None) -> ExperimentConfig:
    def fail(key, message):
        raise ConfigError(message, field=key, line=_line_of(text, key), source=source)

    if not isinstance(d, dict):
        raise ConfigError("top level must be a JSON object", source=source)
    kwargs: dict[str, Any] = {}
    for key, value in d.items():
        if key == "model_spec":
            if not isinstance(value, dict):
                fail("model_spec", "expected an object")
            value = dict(value)
            for mk, mv in value.items():
                if mk not in _MODEL_SCHEMA:
                    fail(f"model_spec.{mk}", "unknown key")
                check, expected = _MODEL_SCHEMA[mk]
                if not check(mv):
                    fail(f"model_spec.{mk}", f"expected {expected}, got {mv!r}")
            fixed_n = value.pop("n", None)
            if fixed_n is not None:
                if "n_grid" not in d:
                    kwargs["n_grid"] = (fixed_n,)
                elif list(d["n_grid"]) != [fixed_n]:
                    fail("n_grid", f"model_spec fixes n = {fixed_n}; n_grid must be [{fixed_n}] or omitted")
            kwargs["model_spec"] = ModelProfile(**value)
        elif key == "constants":
            if not isinstance(value, dict):
                fail("constants", "expected an object")
            for ck, cv in value.items():
                if ck not in _CONSTANTS_SCHEMA:
                    fail(f"constants.{ck}", "unknown key")
                check, expected = _CONSTANTS_SCHEMA[ck]
                if not check(cv):
                    fail(f"constants.{ck}", f"expected {expected}, got {cv!r}")
            kwargs["constants"] = Constants.from_dict(value)
        elif key in _SCHEMA:
            check, expected = _SCHEMA[key]
            if not check(value):
                fail(key, f"expected {expected}, got {value!r}")
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        else:
            fail(key, "unknown key")
    cfg = ExperimentConfig(**kwargs)
    for m, n, eta in cfg.points():
        try:
            cfg.model_spec.spec_for(n, eta)
        except ValueError as exc:
            fail("model_spec", f"invalid model at grid point (m={m}, n={n}, eta={eta}): {exc}")
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read a JSON config file, apply overrides and validate it."""
    with open(path) as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno,
                          source=str(path)) from None
    if overrides:
        d = apply_overrides(d, overrides)
    return config_from_dict(d, text, str(path))


# ---------------------------------------------------------------------------
# parallel replication

_REP_ERRORS = (ArithmeticError, np.linalg.LinAlgError)


def _run_block(fn, common, streams):
    with threadpool_limits(1):
        out = []
        for s in streams:
            try:
                out.append(fn(common, s))
            except _REP_ERRORS:
                out.append(None)
        return out


def _map_reps(fn, common, streams: list[RngStream], workers: int) -> list:
    """Evaluate ``fn(common, stream)`` for every stream; ``None`` marks a failed
    replication. Output order is stream order whatever the worker count."""
    workers = max(1, min(workers, len(streams)))
    if workers == 1:
        return _run_block(fn, common, streams)
    bounds = np.linspace(0, len(streams), workers + 1).astype(int)
    blocks = [streams[bounds[i]:bounds[i + 1]] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(_run_block, fn, common, b) for b in blocks]
        results = []
        for f in futures:
            results.extend(f.result())
    return results


def _streams(cfg: ExperimentConfig, kind: str, point: int, count: int) -> list[RngStream]:
    root = RngStream(cfg.seed, 0)
    return [root.derive(_KIND[kind], point, r) for r in range(count)]


def order_statistic(values, q: float) -> float:
    """Empirical q-quantile as the ceil(q * k)-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0 or not 0 < q <= 1:
        return math.nan
    idx = max(1, math.ceil(q * v.size - 1e-9))
    return float(v[idx - 1])


def _mean_stderr(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(x))
    if x.size < 2:
        return mean, math.inf
    return mean, float(np.std(x, ddof=1) / math.sqrt(x.size))


# ---------------------------------------------------------------------------
# misclassification / recovery

CLUSTER_COLUMNS = [
    "m", "n", "eta", "reps", "failed",
    "emp_misclass", "emp_stderr",
    "emp_misclustering", "emp_misclustering_stderr",
    "emp_recovery", "emp_recovery_stderr",
    "emp_count_le_eps", "emp_count_le_eps_stderr",
    "opnorm_q50", "opnorm_q90",
    "oracle_misclass", "thm_bound", "mills_bound", "cor32_lower", "prop33_bound", "col_lower",
    "condition_lhs", "condition_rhs", "condition_holds",
    "alpha", "epsilon", "C", "c", "K", "K_g", "seed", "model_hash",
]


def _cluster_rep(common, stream):
    model, m, track = common
    s = sample(m, model, stream)
    fit = cluster_points(s.points)
    count = misclassification_count(s, fit, model.mu)
    rate = misclustering_rate(s.labels, fit.signs)
    opn = op_norm(sample_cov(s) - model.covariance) if track else math.nan
    return count, rate, opn


def _cluster_grid(cfg: ExperimentConfig, kind: str) -> list[dict]:
    rows = []
    k = cfg.constants
    for idx, (m, n, eta) in enumerate(cfg.points()):
        model = cfg.model_spec.model_for(n, eta)
        eta_v = snr(model)
        results = _map_reps(_cluster_rep, (model, m, cfg.track_opnorm), _streams(cfg, kind, idx, cfg.reps),
                            cfg.workers)
        ok = [r for r in results if r is not None]
        counts = np.array([r[0] for r in ok], dtype=np.float64)
        rates = np.array([r[1] for r in ok], dtype=np.float64)
        opn = np.array([r[2] for r in ok], dtype=np.float64)
        misclass, misclass_se = _mean_stderr(counts / m)
        clus, clus_se = _mean_stderr(rates)
        rec, rec_se = _mean_stderr(rates == 0.0)
        le_eps, le_eps_se = _mean_stderr(counts <= cfg.epsilon * m)
        balanced = model.balanced
        cond = condition_tha(m, n, cfg.alpha, model, k) if balanced else None
        rows.append({
            "m": m, "n": n, "eta": eta_v, "reps": cfg.reps, "failed": cfg.reps - len(ok),
            "emp_misclass": misclass, "emp_stderr": misclass_se,
            "emp_misclustering": clus, "emp_misclustering_stderr": clus_se,
            "emp_recovery": rec, "emp_recovery_stderr": rec_se,
            "emp_count_le_eps": le_eps, "emp_count_le_eps_stderr": le_eps_se,
            "opnorm_q50": order_statistic(opn, 0.5) if cfg.track_opnorm else math.nan,
            "opnorm_q90": order_statistic(opn, 0.9) if cfg.track_opnorm else math.nan,
            "oracle_misclass": oracle_misclassification_prob(model) if balanced else math.nan,
            "thm_bound": thm31_bound(cfg.alpha, model, n) if balanced else math.nan,
            "mills_bound": mills_bound(cfg.alpha, eta_v, n),
            "cor32_lower": cor32_lower(cfg.epsilon, cfg.alpha, model, n).raw if balanced else math.nan,
            "prop33_bound": prop33_bound(m, n, n, model, k) if balanced else math.nan,
            "col_lower": col_lower(m, cfg.alpha, eta_v, n).raw,
            "condition_lhs": cond.lhs if cond else math.nan,
            "condition_rhs": cond.rhs if cond else math.nan,
            "condition_holds": bool(cond.holds) if cond else False,
            "alpha": cfg.alpha, "epsilon": cfg.epsilon,
            "C": k.C, "c": k.c, "K": k.K, "K_g": k.K_g,
            "seed": cfg.seed, "model_hash": model.hash(),
        })
    return rows


def run_misclassification(cfg: ExperimentConfig) -> list[dict]:
    """Pooled per-point misclassification (oracle-aligned), misclustering and
    exact recovery per grid point, next to the theoretical values."""
    return _cluster_grid(cfg, "misclass")


def run_recovery(cfg: ExperimentConfig) -> list[dict]:
    """Exact-recovery sweep; use ``m_rule``/``eta_rule`` to tie m and eta to n."""
    return _cluster_grid(cfg, "recovery")


# ---------------------------------------------------------------------------
# operator-norm concentration

OPNORM_COLUMNS = [
    "m", "n", "eta", "u", "reps", "failed", "level", "quantile", "bound_c1", "ratio",
    "prop33_bound", "emp_exceed", "flag", "C", "K", "seed", "model_hash",
]


def _opnorm_rep(common, stream):
    model, m = common
    return op_norm(sample_cov(sample(m, model, stream)) - model.covariance)


def run_opnorm(cfg: ExperimentConfig, u_grid: Sequence[float] | None = None) -> list[dict]:
    """Empirical ``1 - 2 e^{-u}`` quantile of ``||S_m - Sigma||_op``.

    ``ratio`` is the quantile divided by the concentration bound with ``C = 1``,
    i.e. the smallest constant the simulation supports at that point.
    """
    u_grid = cfg.u_grid if u_grid is None else tuple(u_grid)
    unit = replace(cfg.constants, C=1.0)
    rows = []
    for idx, (m, n, eta) in enumerate(cfg.points()):
        model = cfg.model_spec.model_for(n, eta)
        results = _map_reps(_opnorm_rep, (model, m), _streams(cfg, "opnorm", idx, cfg.reps), cfg.workers)
        norms = np.array([r for r in results if r is not None], dtype=np.float64)
        for u in u_grid:
            level = prop33_confidence(u)
            bound_c1 = prop33_bound(m, n, u, model, unit)
            bound = prop33_bound(m, n, u, model, cfg.constants)
            if level <= 1e-12:
                quantile, ratio, flag = math.nan, math.nan, "u_below_ln2"
            else:
                quantile = order_statistic(norms, level)
                ratio = quantile / bound_c1
                flag = ""
            rows.append({
                "m": m, "n": n, "eta": snr(model), "u": u, "reps": cfg.reps, "failed": cfg.reps - norms.size,
                "level": level, "quantile": quantile, "bound_c1": bound_c1, "ratio": ratio,
                "prop33_bound": bound, "emp_exceed": float(np.mean(norms > bound)) if norms.size else math.nan,
                "flag": flag, "C": cfg.constants.C, "K": cfg.constants.K,
                "seed": cfg.seed, "model_hash": model.hash(),
            })
    return rows


# ---------------------------------------------------------------------------
# sub-gaussian constant

SUBGAUSSIAN_COLUMNS = [
    "draws", "n", "eta", "direction", "kind", "estimate", "stderr", "passed", "K", "K_hat",
    "seed", "model_hash",
]


def _psi2_moment(y: np.ndarray, second_moment: float, K: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.exp(y * y / (K * K * second_moment))


def smallest_sufficient_K(y: np.ndarray, second_moment: float, iters: int = 60) -> float:
    """Smallest K with ``mean(exp(y^2 / (K^2 E y^2))) <= 2`` on these draws."""
    lo, hi = 1e-3, 1.0
    while not np.mean(_psi2_moment(y, second_moment, hi)) <= 2.0:
        lo, hi = hi, 2.0 * hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.mean(_psi2_moment(y, second_moment, mid)) <= 2.0:
            hi = mid
        else:
            lo = mid
    return hi


def _directions(model: AllometricModel, count: int, stream: RngStream) -> tuple[np.ndarray, list[str]]:
    n = model.n
    cols = [model.mu / model.mu_norm]
    kinds = ["mu"]
    if count >= 2:
        cols.append(model.eig1.eigenvectors[:, 1].copy())
        kinds.append("perp")
    extra = count - len(cols)
    if extra > 0:
        g = stream.open().normal((extra, n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        cols.extend(g)
        kinds.extend(["random"] * extra)
    return np.array(cols).T, kinds


def run_subgaussian_check(cfg: ExperimentConfig, directions: int | None = None) -> list[dict]:
    """Monte Carlo check that ``E exp(<X,x>^2 / (K^2 E<X,x>^2)) <= 2`` along
    ``mu``, a direction orthogonal to ``mu`` and random unit directions."""
    directions = cfg.directions if directions is None else directions
    if directions < 1:
        raise ValueError("directions must be >= 1")
    K = cfg.constants.K
    rows = []
    for idx, (_, n, eta) in enumerate(cfg.points()):
        model = cfg.model_spec.model_for(n, eta)
        if not model.balanced:
            raise ValueError("the sub-gaussian check uses E[XX^T] and requires pi1 = 1/2")
        root = RngStream(cfg.seed, 0)
        dirs, kinds = _directions(model, directions, root.derive(_KIND["subgaussian"], idx, 1))
        with threadpool_limits(1):
            x = sample(cfg.draws, model, root.derive(_KIND["subgaussian"], idx, 0)).points
            proj = x @ dirs
        sigma = model.covariance
        for j in range(dirs.shape[1]):
            d = dirs[:, j]
            second = float(d @ sigma @ d)
            y = proj[:, j]
            est, se = _mean_stderr(_psi2_moment(y, second, K))
            rows.append({
                "draws": cfg.draws, "n": n, "eta": snr(model), "direction": j, "kind": kinds[j],
                "estimate": est, "stderr": se, "passed": bool(est <= 2.0 + 3.0 * se),
                "K": K, "K_hat": smallest_sufficient_K(y, second),
                "seed": cfg.seed, "model_hash": model.hash(),
            })
    return rows


# ---------------------------------------------------------------------------
# Davis-Kahan step

DAVIS_KAHAN_COLUMNS = [
    "m", "n", "eta", "reps", "failed", "holds_count", "holds_fraction", "max_ratio",
    "mean_lhs", "mean_rhs", "gap", "mu_sq", "gap_ok", "seed", "model_hash",
]


@dataclass(frozen=True)
class DavisKahanRep:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def davis_kahan_rep(s_m: np.ndarray, sigma: np.ndarray) -> DavisKahanRep:
    """``||g_hat - g||`` against ``2^{3/2} ||S_m - Sigma||_op / (l1 - l2)``, with
    ``g_hat`` sign-aligned to the true leading eigenvector ``g``."""
    vals, vecs = eig_sym(sigma)
    g = vecs[:, 0]
    g_hat = top_eigvec(s_m, hint=g).vector
    lhs = float(np.linalg.norm(g_hat - g))
    rhs = 2.0 ** 1.5 * op_norm(s_m - sigma) / float(vals[0] - vals[1])
    return DavisKahanRep(lhs, rhs)


def _dk_rep(common, stream):
    model, m = common
    return davis_kahan_rep(sample_cov(sample(m, model, stream)), model.covariance)


def run_davis_kahan_check(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for idx, (m, n, eta) in enumerate(cfg.points()):
        model = cfg.model_spec.model_for(n, eta)
        if not model.balanced:
            raise ValueError("the Davis-Kahan check is stated for pi1 = 1/2")
        vals = eig_sym(model.covariance).eigenvalues
        gap = float(vals[0] - vals[1])
        mu_sq = model.mu_norm ** 2
        results = _map_reps(_dk_rep, (model, m), _streams(cfg, "davis_kahan", idx, cfg.reps), cfg.workers)
        ok = [r for r in results if r is not None]
        holds = sum(r.holds for r in ok)
        ratios = [r.lhs / r.rhs if r.rhs > 0 else math.inf for r in ok]
        rows.append({
            "m": m, "n": n, "eta": snr(model), "reps": cfg.reps, "failed": cfg.reps - len(ok),
            "holds_count": holds, "holds_fraction": holds / len(ok) if ok else math.nan,
            "max_ratio": max(ratios) if ratios else math.nan,
            "mean_lhs": float(np.mean([r.lhs for r in ok])) if ok else math.nan,
            "mean_rhs": float(np.mean([r.rhs for r in ok])) if ok else math.nan,
            "gap": gap, "mu_sq": mu_sq, "gap_ok": bool(gap >= mu_sq - 1e-9),
            "seed": cfg.seed, "model_hash": model.hash(),
        })
    return rows


# ---------------------------------------------------------------------------
# calibration

TAIL_COLUMNS = ["n", "t", "reps", "tail_prob", "stderr", "c_max", "seed"]


@dataclass(frozen=True)
class CalibrationResult:
    constants: Constants
    opnorm_rows: list
    tail_rows: list

    def to_dict(self) -> dict:
        return {"constants": self.constants.to_dict()}


def norm_tail_rows(cfg: ExperimentConfig, t_grid: Sequence[float] | None = None) -> list[dict]:
    """Empirical ``P(| ||g|| - sqrt(n) | >= t)`` for standard normal g and the
    largest ``c`` each point allows in ``2 exp(-c t^2 / K_g^4)``, with a
    three-standard-error allowance in favour of the bound."""
    t_grid = cfg.t_grid if t_grid is None else tuple(t_grid)
    kg4 = cfg.constants.K_g ** 4
    rows = []
    for n in sorted(set(cfg.n_grid)):
        stream = RngStream(cfg.seed, 0).derive(_KIND["tail"], n)
        with threadpool_limits(1):
            g = stream.open().normal((cfg.reps, n))
        dev = np.abs(np.linalg.norm(g, axis=1) - math.sqrt(n))
        for t in t_grid:
            p = float(np.mean(dev >= t))
            se = math.sqrt(p * (1.0 - p) / cfg.reps)
            floor = p - 3.0 * se
            c_max = kg4 * math.log(2.0 / floor) / (t * t) if floor > 0 else math.inf
            rows.append({"n": n, "t": t, "reps": cfg.reps, "tail_prob": p, "stderr": se,
                         "c_max": c_max, "seed": cfg.seed})
    return rows


def calibrate(cfg: ExperimentConfig) -> CalibrationResult:
    """Empirical values for the two unnamed absolute constants.

    ``C`` is ``safety`` times the largest operator-norm quantile ratio over the
    grid; ``c`` is the largest value compatible with every norm-tail point
    (capped at 1e6 when no point constrains it). ``K`` and ``K_g`` are kept.
    """
    if cfg.reps < MIN_CALIBRATION_REPS:
        raise ValueError(
            f"calibration needs reps >= {MIN_CALIBRATION_REPS} (got {cfg.reps}); fewer would be noise"
        )
    op_rows = run_opnorm(cfg)
    ratios = [r["ratio"] for r in op_rows if not r["flag"] and math.isfinite(r["ratio"])]
    if not ratios:
        raise ValueError("no usable operator-norm grid point (every u is below ln 2)")
    c_big = cfg.safety * max(ratios)
    tail = norm_tail_rows(cfg)
    c_small = min([r["c_max"] for r in tail] + [C_HAT_CAP])
    k = replace(cfg.constants, C=c_big, c=c_small)
    return CalibrationResult(k, op_rows, tail)


# ---------------------------------------------------------------------------
# output

def rows_to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(fmt_float(r.get(c)) if not isinstance(r.get(c), str) else r[c]
                              for c in columns))
    return "\n".join(lines) + "\n"


def write_results(rows: list[dict], columns: Sequence[str], path, cfg: ExperimentConfig,
                  kind: str, extra: dict | None = None) -> None:
    """CSV at ``path`` plus a ``path.json`` provenance sidecar, both atomic."""
    atomic_write(path, rows_to_csv(rows, columns))
    sidecar = {
        "version": __version__,
        "kind": kind,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "columns": list(columns),
    }
    if extra:
        sidecar.update(extra)
    atomic_write(f"{path}.json", json.dumps(sidecar, indent=2, sort_keys=True, default=str) + "\n")
