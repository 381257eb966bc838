"""Non-negative steepest descent solvers: MRNSD, spMRNSD and spNNGD.

All three minimize ``0.5 * ||A x - b||^2`` over ``x >= 0`` and differ in how
non-negativity (and sparsity) is enforced:

* ``mrnsd`` scales the gradient by ``x`` and bounds the step so the iterate
  stays feasible.
* ``sp_mrnsd`` soft-thresholds the MRNSD update and picks the step by a
  one-dimensional search over the thresholded objective.
* ``sp_nngd`` descends in an unconstrained variable ``z`` with ``x = w(z)``,
  where ``w`` is a piecewise mapping that is exactly zero below a switch point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize
import scipy.special

from .linop import DimensionError, LinearOperator

__all__ = [
    "NumericalError",
    "LineSearchOptions",
    "SolverOptions",
    "MappingParams",
    "IterationRecord",
    "SolverResult",
    "soft_threshold",
    "mapping_w",
    "mapping_w_prime",
    "mapping_w_inverse",
    "mrnsd_step_bound",
    "spmrnsd_step_bound",
    "mrnsd_optimal_alpha",
    "line_search_scalar",
    "mrnsd",
    "sp_mrnsd",
    "sp_nngd",
    "write_trace_csv",
]

DEFAULT_X0 = 0.1
# exp(50) keeps w(z + alpha s) and its squares far from float overflow
MAPPING_EXPONENT_CAP = 50.0
_MAX_DOUBLINGS = 60


class NumericalError(ArithmeticError):
    """A solver or line search hit a non-finite value or a degenerate direction."""

    def __init__(self, message, alpha=None):
        super().__init__(message)
        self.alpha = alpha


@dataclass
class LineSearchOptions:
    tol_rel: float = 1e-8
    max_evals: int = 100

    def __post_init__(self):
        if self.tol_rel < 0:
            raise ValueError("tol_rel must be non-negative")
        if self.max_evals < 1:
            raise ValueError("max_evals must be at least 1")


@dataclass
class SolverOptions:
    """Iteration budget and initialization shared by all solvers.

    ``x0`` is the starting iterate (scalar broadcast or array). spNNGD maps it
    back to ``z`` through the inverse of ``w``; ``z0`` overrides that.
    ``fidelity_rows`` restricts the recorded relative residual to the leading
    rows of a stacked system, so traces report the data misfit rather than
    the regularized one. ``callback(k, x)`` sees every iterate (read-only).
    """

    max_iters: int = 100
    rel_change_tol: float = 0.0
    x0: float | np.ndarray = DEFAULT_X0
    z0: np.ndarray | None = None
    line_search: LineSearchOptions = field(default_factory=LineSearchOptions)
    record_trace: bool = True
    fidelity_rows: int | None = None
    callback: Callable[[int, np.ndarray], None] | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.rel_change_tol < 0:
            raise ValueError("rel_change_tol must be non-negative")


@dataclass(frozen=True)
class MappingParams:
    """Steepness ``a > 0`` and switch point ``c`` of the sparsifying map."""

    a: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"mapping steepness a must be positive, got {self.a}")


@dataclass
class IterationRecord:
    iter: int
    residual_norm: float
    rel_residual: float
    sparsity_proxy: float
    step_size: float
    step_bound: float = math.inf


@dataclass
class SolverResult:
    x: np.ndarray
    iterations_run: int
    trace: list[IterationRecord]
    converged: bool = False
    z: np.ndarray | None = None


def soft_threshold(x, gamma: float) -> np.ndarray:
    """Entry-wise shrinkage ``sign(x) * max(|x| - gamma, 0)``."""
    if gamma < 0:
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - gamma, 0.0)


def mapping_w(z, params: MappingParams) -> np.ndarray:
    """``exp(a(z-c)) - a(z-c) - 1`` above the switch point ``c``, exactly 0 at or below it."""
    u = params.a * (np.asarray(z, dtype=np.float64) - params.c)
    with np.errstate(over="ignore"):
        return np.where(u > 0, np.expm1(np.maximum(u, 0.0)) - np.maximum(u, 0.0), 0.0)


def mapping_w_prime(z, params: MappingParams) -> np.ndarray:
    u = params.a * (np.asarray(z, dtype=np.float64) - params.c)
    with np.errstate(over="ignore"):
        return np.where(u > 0, params.a * np.expm1(np.maximum(u, 0.0)), 0.0)


def mapping_w_inverse(x, params: MappingParams) -> np.ndarray:
    """Preimage of ``x >= 0`` on the exponential branch; zeros map to ``c``.

    Solves ``exp(u) - u - 1 = x`` for ``u > 0`` with the lower real branch
    of the Lambert W function.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("the mapping only attains non-negative values")
    k = 1.0 + x
    with np.errstate(divide="ignore", invalid="ignore"):
        v = scipy.special.lambertw(-np.exp(-k), -1).real
    u = np.where(x > 0, -v - k, 0.0)
    return params.c + u / params.a


def mrnsd_step_bound(x, s) -> float:
    """Largest step keeping ``x + alpha * s >= 0``; ``inf`` if no entry of ``s`` is negative."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    neg = s < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-x[neg] / s[neg]))


def spmrnsd_step_bound(x, s, lam: float) -> float:
    """Largest step keeping ``soft_threshold(x + alpha s, alpha lam) >= 0``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    active = s < -lam
    if not np.any(active):
        return math.inf
    return float(np.min(-x[active] / (s[active] + lam)))


def mrnsd_optimal_alpha(A: LinearOperator, s, g) -> float:
    """Exact minimizer of ``0.5 * ||A(x + alpha s) - b||^2`` given ``g = A^T (A x - b)``."""
    As = A.apply(s)
    denom = float(As @ As)
    if denom == 0.0:
        raise NumericalError("search direction lies in the null space of A")
    return -float(np.dot(s, g)) / denom


def line_search_scalar(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    opts: LineSearchOptions | None = None,
) -> float:
    """Minimize ``f`` on ``[lo, hi]`` by golden section search with parabolic steps (Brent).

    The result is never worse than either endpoint.
    """
    opts = opts or LineSearchOptions()
    if not lo <= hi:
        raise ValueError(f"empty search interval [{lo}, {hi}]")
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("search interval must be finite")

    def checked(alpha):
        val = float(f(alpha))
        if not math.isfinite(val):
            raise NumericalError(f"objective is not finite at alpha={alpha!r}", alpha=alpha)
        return val

    f_lo = checked(lo)
    if hi == lo:
        return lo
    res = scipy.optimize.minimize_scalar(
        checked,
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": opts.tol_rel, "maxiter": opts.max_evals},
    )
    best, f_best = float(res.x), float(res.fun)
    f_hi = checked(hi)
    if f_hi < f_best:
        best, f_best = hi, f_hi
    if f_lo <= f_best:
        best = lo
    return best


def _search_upper(phi, guess: float, bound: float) -> float:
    """Finite right end for a step search: ``4 * guess`` doubled while ``phi`` still decreases."""
    if not math.isfinite(guess) or guess <= 0:
        guess = 1.0
    hi = 4.0 * guess
    if hi >= bound:
        return bound
    prev = phi(hi / 2.0)
    cur = phi(hi)
    n = 0
    while cur < prev and hi < bound and n < _MAX_DOUBLINGS:
        hi *= 2.0
        prev, cur = cur, phi(min(hi, bound))
        n += 1
    return min(hi, bound)


class _Tracker:
    """Shared trace bookkeeping for the three solvers."""

    def __init__(self, b: np.ndarray, opts: SolverOptions):
        self.opts = opts
        m = opts.fidelity_rows if opts.fidelity_rows is not None else b.size
        if not 0 <= m <= b.size:
            raise DimensionError(f"fidelity_rows={m} outside [0, {b.size}]")
        self.m = m
        b_norm = float(np.linalg.norm(b[:m]))
        self.b_norm = b_norm if b_norm > 0 else 1.0
        self.trace: list[IterationRecord] = []
        self.last_rel = None

    def rel(self, r):
        return float(np.linalg.norm(r[: self.m])) / self.b_norm

    def record(self, k, r, x, alpha, bound=math.inf) -> bool:
        """Store one iteration; return True when the early-stop criterion fires."""
        rel = self.rel(r)
        if self.opts.callback is not None:
            view = x.view()
            view.flags.writeable = False
            self.opts.callback(k, view)
        if self.opts.record_trace:
            self.trace.append(
                IterationRecord(
                    iter=k,
                    residual_norm=float(np.linalg.norm(r)),
                    rel_residual=rel,
                    sparsity_proxy=float(np.count_nonzero(x)) / x.size,
                    step_size=float(alpha),
                    step_bound=float(bound),
                )
            )
        stop = (
            self.opts.rel_change_tol > 0
            and self.last_rel is not None
            and abs(self.last_rel - rel) < self.opts.rel_change_tol
        )
        self.last_rel = rel
        return stop


def _check_system(A: LinearOperator, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.size != A.n_rows:
        raise DimensionError(f"right-hand side has shape {b.shape}, operator has {A.n_rows} rows")
    return b


def _initial_x(A: LinearOperator, x0) -> np.ndarray:
    x = np.broadcast_to(np.asarray(x0, dtype=np.float64), (A.n_cols,)).copy()
    if not np.all(x > 0):
        raise ValueError("initial iterate must be strictly positive")
    return x


def mrnsd(
    A: LinearOperator,
    b,
    opts: SolverOptions | None = None,
    step_rule: str = "exact",
) -> SolverResult:
    """Modified residual norm steepest descent.

    Parameters
    ----------
    A, b
        Least-squares system.
    opts
        Iteration budget and start point (must be strictly positive).
    step_rule
        ``"exact"`` uses the closed-form step clipped to the feasibility
        bound. ``"line_search"`` minimizes the residual over the same
        interval with :func:`line_search_scalar`.
    """
    opts = opts or SolverOptions()
    if step_rule not in ("exact", "line_search"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    b = _check_system(A, b)
    x = _initial_x(A, opts.x0)
    r = A.apply(x) - b
    track = _Tracker(b, opts)
    converged = False
    k = 0
    for k in range(1, opts.max_iters + 1):
        g = A.apply_adjoint(r)
        s = -x * g
        if not np.any(s):
            converged = True
            k -= 1
            break
        As = A.apply(s)
        sAAs = float(As @ As)
        if sAAs == 0.0:
            converged = True
            k -= 1
            break
        alpha_opt = -float(s @ g) / sAAs
        bound = mrnsd_step_bound(x, s)
        if step_rule == "exact":
            alpha = min(alpha_opt, bound)
        else:
            def phi(a, r=r, As=As):
                t = r + a * As
                return 0.5 * float(t @ t)

            alpha = line_search_scalar(
                phi, 0.0, _search_upper(phi, alpha_opt, bound), opts.line_search
            )
        x = np.maximum(x + alpha * s, 0.0)
        r = r + alpha * As
        if track.record(k, r, x, alpha, bound):
            break
    return SolverResult(x=x, iterations_run=k, trace=track.trace, converged=converged)


def sp_mrnsd(
    A: LinearOperator,
    b,
    lam: float,
    opts: SolverOptions | None = None,
    l1_in_line_search: bool = False,
) -> SolverResult:
    """Sparsity-promoting MRNSD.

    Each iteration takes the MRNSD direction ``s = -x * g`` and updates
    ``x <- soft_threshold(x + alpha s, alpha lam)``, where ``alpha``
    minimizes ``0.5 * ||A soft_threshold(x + alpha s, alpha lam) - b||^2``
    over ``[0, u]`` and ``u`` is :func:`spmrnsd_step_bound`. With
    ``l1_in_line_search`` the scalar objective also carries
    ``lam * ||soft_threshold(...)||_1``, which makes the lasso minimizer a
    fixed point of the iteration.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    opts = opts or SolverOptions()
    b = _check_system(A, b)
    x = _initial_x(A, opts.x0)
    r = A.apply(x) - b
    track = _Tracker(b, opts)
    converged = False
    k = 0
    for k in range(1, opts.max_iters + 1):
        g = A.apply_adjoint(r)
        s = -x * g
        if not np.any(s):
            converged = True
            k -= 1
            break
        As = A.apply(s)
        sAAs = float(As @ As)
        if sAAs == 0.0:
            converged = True
            k -= 1
            break
        alpha_guess = -float(s @ g) / sAAs

        def trial(a, x=x, s=s):
            return soft_threshold(x + a * s, a * lam)

        linear = lam == 0.0 and not l1_in_line_search

        def phi(a, r=r, As=As):
            # without shrinkage the residual is affine in a; reuse A s
            t = r + a * As if linear else A.apply(trial(a)) - b
            val = 0.5 * float(t @ t)
            if l1_in_line_search:
                val += lam * float(np.abs(trial(a)).sum())
            return val

        bound = spmrnsd_step_bound(x, s, lam)
        alpha = line_search_scalar(
            phi, 0.0, _search_upper(phi, alpha_guess, bound), opts.line_search
        )
        x = np.maximum(trial(alpha), 0.0)
        r = r + alpha * As if linear else A.apply(x) - b
        if track.record(k, r, x, alpha, bound):
            break
    return SolverResult(x=x, iterations_run=k, trace=track.trace, converged=converged)


def sp_nngd(
    A: LinearOperator,
    b,
    params: MappingParams,
    opts: SolverOptions | None = None,
) -> SolverResult:
    """Gradient descent in ``z`` with the sparsifying non-negative map ``x = w(z)``.

    The step along ``s = -w'(z) * g`` is found by line search on
    ``[0, alpha_max]`` where ``alpha_max * ||s||_inf = 50 / a`` guards the
    exponential branch against overflow.
    """
    opts = opts or SolverOptions()
    b = _check_system(A, b)
    if opts.z0 is not None:
        z = np.broadcast_to(np.asarray(opts.z0, dtype=np.float64), (A.n_cols,)).copy()
    else:
        x0 = np.broadcast_to(np.asarray(opts.x0, dtype=np.float64), (A.n_cols,))
        z = mapping_w_inverse(x0, params)
    x = mapping_w(z, params)
    r = A.apply(x) - b
    track = _Tracker(b, opts)
    converged = False
    k = 0
    for k in range(1, opts.max_iters + 1):
        g = A.apply_adjoint(r)
        s = -mapping_w_prime(z, params) * g
        s_inf = float(np.max(np.abs(s))) if s.size else 0.0
        if s_inf == 0.0:
            converged = True
            k -= 1
            break
        Adx = A.apply(mapping_w_prime(z, params) * s)
        lin = float(Adx @ Adx)
        alpha_guess = float(s @ s) / lin if lin > 0 else math.inf

        def psi(a, z=z, s=s):
            t = A.apply(mapping_w(z + a * s, params)) - b
            return 0.5 * float(t @ t)

        alpha_max = MAPPING_EXPONENT_CAP / (params.a * s_inf)
        alpha = line_search_scalar(
            psi, 0.0, _search_upper(psi, alpha_guess, alpha_max), opts.line_search
        )
        z = z + alpha * s
        x = mapping_w(z, params)
        r = A.apply(x) - b
        if track.record(k, r, x, alpha, alpha_max):
            break
    return SolverResult(x=x, iterations_run=k, trace=track.trace, converged=converged, z=z)


def write_trace_csv(trace: list[IterationRecord], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("iter,rel_residual,sparsity_proxy,step_size\n")
        for rec in trace:
            fh.write(f"{rec.iter},{rec.rel_residual!r},{rec.sparsity_proxy!r},{rec.step_size!r}\n")
