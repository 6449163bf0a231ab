"""Dense symmetric linear algebra and the standard normal CDF.

Everything downstream (model construction, sampling, clustering) goes through
the eigensolver defined here, so its conventions matter:

* eigenvalues are returned in descending order, ties kept in original index
  order;
* each eigenvector is signed so that its largest-magnitude entry is positive
  (the lowest index wins ties);
* the solver is a cyclic Jacobi iteration with a fixed round-robin ordering,
  so identical input produces identical output bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "ConvergenceError",
    "EigenDecomp",
    "NotPositiveDefiniteError",
    "NumericalError",
    "TopEig",
    "eig_sym",
    "op_norm",
    "spd_inv_sqrt",
    "spd_sqrt",
    "std_normal_cdf",
    "symmetrize",
    "top_eigvec",
]

MAX_SWEEPS = 64
OFF_TOL = 1e-13
POWER_THRESHOLD = 256
POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000
GAP_WARN = 1e-12
SPD_RTOL = 1e-12
DENSE_ROUND_MAX = 128


class NumericalError(ArithmeticError):
    """Base class for numerical failures (CLI exit code 2)."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class NotPositiveDefiniteError(NumericalError, ValueError):
    def __init__(self, eigenvalue: float, index: int, largest: float):
        super().__init__(
            f"matrix is not positive definite: eigenvalue #{index + 1} = {eigenvalue!r} "
            f"(largest {largest!r})"
        )
        self.eigenvalue = eigenvalue
        self.index = index


@dataclass(frozen=True)
class EigenDecomp:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors


@dataclass(frozen=True)
class TopEig:
    value: float
    vector: np.ndarray
    ill_conditioned: bool = False


def symmetrize(a) -> np.ndarray:
    """Return the symmetric matrix whose upper triangle is that of ``a``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # Circle-method tournament: every pair (p, q) appears exactly once per sweep
    # and pairs within a round are disjoint, so a round is one vectorized update.
    size = n + (n % 2)
    players = list(range(size))
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for i in range(size // 2):
            p, q = players[i], players[size - 1 - i]
            if p >= n or q >= n:
                continue
            if p > q:
                p, q = q, p
            ps.append(p)
            qs.append(q)
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _scaled_norm(x: np.ndarray) -> float:
    # Frobenius norm without overflow or underflow in the squares
    big = float(np.max(np.abs(x))) if x.size else 0.0
    if big == 0.0:
        return 0.0
    return big * float(np.linalg.norm(x / big))


def _off_norm(a: np.ndarray) -> float:
    return math.sqrt(2.0) * _scaled_norm(np.triu(a, 1))


def _rotate_rows(m: np.ndarray, p, q, c, s) -> None:
    rp = m[p, :]
    rq = m[q, :]
    m[p, :] = c * rp - s * rq
    m[q, :] = s * rp + c * rq


def _rotation(app, aqq, apq):
    """Jacobi rotation ``(t, c, s)`` zeroing each ``apq``; ``t = 0`` where it is
    already zero."""
    active = apq != 0.0
    # for |theta| near the float limit the quotient or sum overflows and t correctly becomes 0
    with np.errstate(over="ignore"):
        theta = (aqq - app) / (2.0 * np.where(active, apq, 1.0))
        t = np.where(active, np.copysign(1.0, theta) / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    return t, c, t * c


def _jacobi_round(a: np.ndarray, vt: np.ndarray, p: np.ndarray, q: np.ndarray):
    """Apply one round of disjoint rotations by explicit row updates.

    ``vt`` holds the eigenvector estimates as rows. Returns ``(a, vt)``.
    """
    apq = a[p, q]
    if not apq.any():
        return a, vt
    app = a[p, p]
    aqq = a[q, q]
    t, c, s = _rotation(app, aqq, apq)
    cc = c[:, None]
    sc = s[:, None]
    # A' = J^T A J; for symmetric A the column pass is a row pass on the transpose.
    _rotate_rows(a, p, q, cc, sc)
    a = np.ascontiguousarray(a.T)
    _rotate_rows(a, p, q, cc, sc)
    a[p, p] = app - t * apq
    a[q, q] = aqq + t * apq
    a[p, q] = 0.0
    a[q, p] = 0.0
    _rotate_rows(vt, p, q, cc, sc)
    return a, vt


@lru_cache(maxsize=64)
def _flat_rounds(n: int) -> tuple[np.ndarray, ...]:
    # Flat offsets of (p,p), (q,q), (p,q), (q,p) for every round.
    return tuple(
        np.concatenate([p * n + p, q * n + q, p * n + q, q * n + p]) for p, q in _round_robin(n)
    )


def _jacobi_round_dense(a: np.ndarray, vt: np.ndarray, flat: np.ndarray, eye: np.ndarray):
    """Same round as :func:`_jacobi_round`, with the round's rotations assembled
    into one orthogonal matrix. Cheaper for small n where call overhead dominates."""
    k = flat.size // 4
    app, aqq, apq = a.take(flat[: 3 * k]).reshape(3, k)
    if not apq.any():
        return a, vt
    t, c, s = _rotation(app, aqq, apq)
    j = eye.copy()
    j.flat[flat] = np.concatenate([c, c, s, -s])
    a = j.T @ a @ j
    zeros = np.zeros(k)
    a.flat[flat] = np.concatenate([app - t * apq, aqq + t * apq, zeros, zeros])
    return a, j.T @ vt


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.where(vecs[idx, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    return vecs * signs


def eig_sym(a, max_sweeps: int = MAX_SWEEPS) -> EigenDecomp:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    Only the upper triangle of ``a`` is read.

    Raises
    ------
    ConvergenceError
        If the off-diagonal mass is still above ``1e-13 * ||A||_F`` after
        ``max_sweeps`` sweeps.
    """
    work = symmetrize(a)
    if not np.all(np.isfinite(work)):
        raise ValueError("matrix has non-finite entries")
    n = work.shape[0]
    if n == 0:
        raise ValueError("matrix must have dimension >= 1")
    vt = np.eye(n)
    tol = OFF_TOL * _scaled_norm(work)
    rounds = _round_robin(n)
    dense = n <= DENSE_ROUND_MAX
    if dense:
        flat_rounds = _flat_rounds(n)
        eye = np.eye(n)
    sweeps = 0
    off = _off_norm(work)
    while off > tol:
        if sweeps >= max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", off)
        if dense:
            for flat in flat_rounds:
                work, vt = _jacobi_round_dense(work, vt, flat, eye)
        else:
            for p, q in rounds:
                work, vt = _jacobi_round(work, vt, p, q)
        sweeps += 1
        off = _off_norm(work)

    vals = np.diag(work).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = _fix_signs(vt.T[:, order])
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return EigenDecomp(vals, vecs, sweeps)


def _relative_gap(l1: float, l2: float) -> float:
    scale = max(abs(l1), abs(l2))
    if scale == 0.0:
        return 0.0
    return (l1 - l2) / scale


def _power_iteration(a: np.ndarray) -> TopEig:
    n = a.shape[0]
    x = np.full(n, 1.0 / math.sqrt(n))
    rq = float(x @ a @ x)
    perturbed = False
    stall = 0
    prev_angle = None
    ratio = 0.0
    converged = False
    for _ in range(POWER_MAX_ITER):
        y = a @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            if perturbed:
                break
            x = x.copy()
            x[0] += 1e-6
            x /= np.linalg.norm(x)
            perturbed = True
            continue
        y /= norm
        # y and -y are the same direction; an indefinite A flips the iterate.
        angle = float(np.linalg.norm(y - np.copysign(1.0, y @ x) * x))
        new_rq = float(y @ a @ y)
        if new_rq <= rq:
            stall += 1
        else:
            stall = 0
        rq = new_rq
        if prev_angle:
            ratio = angle / prev_angle
        prev_angle = angle
        x = y
        if angle <= POWER_TOL:
            converged = True
            break
        if stall >= 50 and not perturbed:
            x = x.copy()
            x[0] += 1e-6
            x /= np.linalg.norm(x)
            perturbed = True
            stall = 0
    idx = int(np.argmax(np.abs(x)))
    if x[idx] < 0:
        x = -x
    ill = (not converged) or ratio > 1.0 - GAP_WARN or _second_reaches(a, rq, x)
    return TopEig(rq, x, ill)


def _second_reaches(a: np.ndarray, lam: float, v: np.ndarray, max_iter: int = 10_000) -> bool:
    """Whether the second eigenvalue is within a relative 1e-12 of ``lam``.

    Power iteration on ``A + s I - (lam + s) v v^T`` (shifted so its spectrum is
    ``lambda_k + s >= 0`` off ``v`` and 0 on ``v``). Rayleigh quotients from
    below never exceed ``lambda_2``, so reaching the threshold proves a tiny gap;
    stopping when they stall decides the converse.
    """
    n = a.shape[0]
    shift = float(np.max(np.sum(np.abs(a), axis=1)))
    target = lam - GAP_WARN * max(abs(lam), 1e-300)
    x = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    x = x - (x @ v) * v
    if not np.linalg.norm(x) > 1e-8:
        x = np.zeros(n)
        x[int(np.argmin(np.abs(v)))] = 1.0
        x = x - (x @ v) * v
    x /= np.linalg.norm(x)
    prev = -math.inf
    for _ in range(max_iter):
        y = a @ x + shift * x - (lam + shift) * (v @ x) * v
        y = y - (y @ v) * v
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return False
        x = y / norm
        rq = float(x @ a @ x)
        if rq >= target:
            return True
        if rq - prev <= 1e-15 * max(abs(rq), 1.0):
            return False
        prev = rq
    return False


def top_eigvec(a, hint=None) -> TopEig:
    """Largest eigenvalue and its unit eigenvector.

    Below ``n = 256`` this is the first pair of :func:`eig_sym`; above, a
    deterministic power iteration started from the normalized all-ones vector.
    ``ill_conditioned`` is set when the leading relative gap is below 1e-12
    (or, on the power path, when the iteration failed to converge).
    If ``hint`` is given the sign is chosen so that ``<vector, hint> >= 0``.
    """
    work = symmetrize(a)
    n = work.shape[0]
    if hint is not None:
        hint = np.asarray(hint, dtype=np.float64)
        if hint.shape != (n,) or not np.linalg.norm(hint) > 0:
            raise ValueError("hint must be a nonzero vector matching the matrix dimension")
    if n < POWER_THRESHOLD:
        dec = eig_sym(work)
        vals, vecs = dec.eigenvalues, dec.eigenvectors
        ill = n > 1 and _relative_gap(vals[0], vals[1]) < GAP_WARN
        res = TopEig(float(vals[0]), vecs[:, 0].copy(), bool(ill))
    else:
        res = _power_iteration(work)
    if hint is not None and float(res.vector @ hint) < 0:
        res = TopEig(res.value, -res.vector, res.ill_conditioned)
    return res


def _checked_eig_spd(a) -> EigenDecomp:
    dec = eig_sym(a)
    vals = dec.eigenvalues
    lead = float(vals[0])
    bad = np.nonzero(~(vals > SPD_RTOL * lead))[0] if lead > 0 else np.arange(len(vals))
    if bad.size:
        i = int(bad[-1])
        raise NotPositiveDefiniteError(float(vals[i]), i, lead)
    return dec


def spd_sqrt(a) -> np.ndarray:
    """Symmetric square root of an SPD matrix."""
    vals, vecs = _checked_eig_spd(a)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return symmetrize(root)


def spd_inv_sqrt(a) -> np.ndarray:
    """Inverse of the symmetric square root of an SPD matrix."""
    vals, vecs = _checked_eig_spd(a)
    root = (vecs / np.sqrt(vals)) @ vecs.T
    return symmetrize(root)


def op_norm(a) -> float:
    """Operator (spectral) norm of a symmetric matrix: max |eigenvalue|."""
    vals = eig_sym(a).eigenvalues
    return float(max(abs(vals[0]), abs(vals[-1])))


_SQRT1_2 = math.sqrt(0.5)


def _phi_scalar(x: float) -> float:
    if math.isnan(x):
        raise ValueError("std_normal_cdf of NaN")
    if x > 38.0:
        return 1.0
    if x < -38.0:
        return 0.0
    return 0.5 * math.erfc(-x * _SQRT1_2)


_phi_ufunc = np.frompyfunc(_phi_scalar, 1, 1)


def std_normal_cdf(x):
    """Standard normal distribution function, evaluated through ``erfc``.

    Accepts a scalar or an array. Going through the complementary error
    function keeps relative accuracy in the lower tail.
    """
    if np.ndim(x) == 0:
        return _phi_scalar(float(x))
    return _phi_ufunc(np.asarray(x, dtype=np.float64)).astype(np.float64)
