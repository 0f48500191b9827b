"""LASSO and Variational Garrote objectives, gradients and the solve driver.

Both estimators fit ``y ~ Theta w``. Arrays may carry a leading batch axis:
``y`` of shape ``(B, M)`` together with coefficients of shape ``(B, N)`` and
per-row hyperparameters describe ``B`` independent problems evaluated in one
vectorized pass.

The garrote replaces each coefficient by ``w_i s_i`` with a binary gate
``s_i``; under a factorized Bernoulli posterior with ``P(s_i = 1) = m_i`` the
expected squared error is

    E_rec = 1/2 ||y - Theta (w * m)||^2 + 1/2 sum_i m_i (1 - m_i) w_i^2 c_i,

with ``c_i`` the squared norm of column ``i``. Eliminating the noise precision
at its optimum (``beta = M / (2 E_rec)``) leaves the objective

    F = M/2 log E_rec - gamma sum_i m_i + sum_i [m_i log m_i + (1-m_i) log(1-m_i)],

minimized over ``w`` and the gate logits.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import expit

from .operators import column_norms_squared
from .optim import STOP_NAN, OptConfig, run_loop

__all__ = [
    "SparseProblem",
    "LassoParams",
    "VgParams",
    "VgState",
    "Solution",
    "DivergenceError",
    "lasso_objective",
    "lasso_gradient",
    "vg_e_rec",
    "vg_free_energy",
    "vg_gradient",
    "brute_force_l0",
    "soft_threshold",
    "solve",
    "reconstruct",
    "E_REC_FLOOR",
    "INIT_SCALE",
]

E_REC_FLOOR = 1e-300
INIT_SCALE = 0.01


class DivergenceError(FloatingPointError):
    """The optimizer produced a non-finite objective."""


class SparseProblem:
    """One (or a stack of) regression instances ``y ~ theta(w)``.

    ``m_obs`` is the number of real observations per row. It defaults to
    ``theta.output_dim`` and must be given explicitly when ``theta`` pads
    unobserved entries with zeros (``MaskOperator``); the operator's own
    ``observed_count`` is used in that case.
    """

    def __init__(self, theta, y, m_obs=None):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != theta.output_dim:
            raise ValueError(
                f"observation length {y.shape[-1]} does not match operator output "
                f"{theta.output_dim}"
            )
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        if m_obs is None:
            m_obs = _observed_count(theta)
        self.theta = theta
        self.y = y
        self.m_obs = np.asarray(m_obs, dtype=np.float64)
        self.n = theta.input_dim
        self._col_norms = None

    @property
    def batch_shape(self) -> tuple:
        return self.y.shape[:-1]

    @property
    def col_norms(self) -> np.ndarray:
        if self._col_norms is None:
            self._col_norms = column_norms_squared(self.theta)
        return self._col_norms

    def take(self, rows) -> "SparseProblem":
        theta = self.theta.take(rows) if hasattr(self.theta, "take") else self.theta
        m_obs = self.m_obs[rows] if self.m_obs.ndim else self.m_obs
        out = SparseProblem(theta, self.y[rows], m_obs)
        if self._col_norms is not None:
            c = self._col_norms
            out._col_norms = c[rows] if c.ndim > 1 else c
        return out

    def __repr__(self):
        return f"SparseProblem(n={self.n}, m_obs={self.m_obs}, batch={self.batch_shape})"


def _observed_count(theta):
    inner = getattr(theta, "outer", theta)
    count = getattr(inner, "observed_count", None)
    if count is not None:
        return count
    return theta.output_dim


@dataclass(frozen=True)
class LassoParams:
    lam: float | np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lam) < 0):
            raise ValueError("lambda must be non-negative")

    name = "lasso"

    @property
    def value(self):
        return self.lam


@dataclass(frozen=True)
class VgParams:
    gamma: float | np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma must be finite")

    name = "vg"

    @property
    def value(self):
        return self.gamma


Method = Union[LassoParams, VgParams]


@dataclass
class VgState:
    w: np.ndarray
    m_logit: np.ndarray

    @property
    def m(self) -> np.ndarray:
        return expit(self.m_logit)

    @classmethod
    def from_params(cls, params) -> "VgState":
        n = params.shape[-1] // 2
        return cls(params[..., :n], params[..., n:])

    def to_params(self) -> np.ndarray:
        return np.concatenate([self.w, self.m_logit], axis=-1)


def _check_coeffs(problem, w):
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != problem.n:
        raise ValueError(f"expected {problem.n} coefficients, got {w.shape[-1]}")
    return w


def _scalarize(x):
    return float(x) if np.ndim(x) == 0 else x


# -- LASSO ---------------------------------------------------------------------


def lasso_objective(problem: SparseProblem, w, params: LassoParams):
    """1/2 ||y - Theta w||^2 + lambda ||w||_1 (per row when batched)."""
    w = _check_coeffs(problem, w)
    r = problem.y - problem.theta.apply(w)
    return _scalarize(0.5 * np.sum(r * r, axis=-1) + np.asarray(params.lam) * np.sum(np.abs(w), axis=-1))


def lasso_gradient(problem: SparseProblem, w, params: LassoParams) -> np.ndarray:
    """Theta^T (Theta w - y) + lambda sign(w), with sign(0) = 0."""
    w = _check_coeffs(problem, w)
    r = problem.theta.apply(w) - problem.y
    lam = np.asarray(params.lam)[..., None] if np.ndim(params.lam) else params.lam
    return problem.theta.adjoint_apply(r) + lam * np.sign(w)


def _lasso_fun(problem: SparseProblem, lam):
    lam = np.asarray(lam, dtype=np.float64)
    lam_col = lam[..., None] if lam.ndim else lam

    def fun(w):
        r = problem.theta.apply(w) - problem.y
        loss = 0.5 * np.sum(r * r, axis=-1) + lam * np.sum(np.abs(w), axis=-1)
        grad = problem.theta.adjoint_apply(r) + lam_col * np.sign(w)
        return loss, grad

    return fun


def soft_threshold(x, thresh):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


# -- Variational Garrote -------------------------------------------------------


def _gates(logit):
    """Return ``(m, log m)`` for ``m = logistic(logit)`` without overflow."""
    e = np.abs(logit)
    np.negative(e, out=e)
    np.exp(e, out=e)
    e += 1.0
    # log(1+e) instead of log1p(e): absolute error stays below 1e-16
    np.log(e, out=e)
    log_m = np.minimum(logit, 0.0)
    log_m -= e
    return np.exp(log_m, out=e), log_m


def _neg_entropy(logit, m=None, log_m=None):
    """sum_i m log m + (1-m) log(1-m) for m = logistic(logit).

    Uses log(1-m) = log(m) - logit, so the sum is sum_i log m_i - (1-m_i) logit_i.
    """
    if m is None:
        m, log_m = _gates(logit)
    return np.sum(log_m - (1.0 - m) * logit, axis=-1)


def vg_e_rec(problem: SparseProblem, state: VgState):
    """Expected reconstruction energy including the gate-variance term."""
    w = _check_coeffs(problem, state.w)
    m = state.m
    r = problem.y - problem.theta.apply(w * m)
    var = np.sum(m * (1 - m) * w * w * problem.col_norms, axis=-1)
    return _scalarize(0.5 * np.sum(r * r, axis=-1) + 0.5 * var)


def vg_free_energy(problem: SparseProblem, state: VgState, params: VgParams):
    """Objective after eliminating the noise precision; E_rec is floored at
    ``E_REC_FLOOR`` before the logarithm."""
    e_rec = np.maximum(vg_e_rec(problem, state), E_REC_FLOOR)
    m = state.m
    value = (
        0.5 * problem.m_obs * np.log(e_rec)
        - np.asarray(params.gamma) * np.sum(m, axis=-1)
        + _neg_entropy(state.m_logit)
    )
    return _scalarize(value)


def _vg_value_and_grad(problem, w, logit, gamma, out=None):
    """Value, both gradient halves and E_rec; ``out`` (shape ``(..., 2n)``)
    receives the gradient in place when given."""
    m, log_m = _gates(logit)
    one_m = 1.0 - m
    mm = m * one_m
    r = problem.y - problem.theta.apply(w * m)
    back = problem.theta.adjoint_apply(r)  # Theta^T r
    wc = w * problem.col_norms
    t = one_m * wc
    e_rec = 0.5 * (np.sum(r * r, axis=-1) + np.sum(t * m * w, axis=-1))
    clamped = e_rec < E_REC_FLOOR
    e_safe = np.where(clamped, E_REC_FLOOR, e_rec)
    scale = np.where(clamped, 0.0, 0.5 * problem.m_obs / e_safe)
    scale_col = scale[..., None] if np.ndim(scale) else scale
    gamma = np.asarray(gamma, dtype=np.float64)
    gamma_col = gamma[..., None] if gamma.ndim else gamma

    # dE/dw = m ((1-m) w c - Theta^T r)
    t -= back
    n = w.shape[-1]
    g_w = np.multiply(m, t, out=None if out is None else out[..., :n])
    g_w *= scale_col
    # dE/dm = w ((1/2 - m) w c - Theta^T r)
    d_m = 0.5 * wc
    np.subtract(t, d_m, out=d_m)
    d_m *= w
    d_m *= scale_col
    # the entropy contributes log(m/(1-m)) = logit to dF/dm
    d_m += logit
    d_m -= gamma_col
    d_m = np.multiply(d_m, mm, out=d_m if out is None else out[..., n:])
    one_m *= logit
    np.subtract(log_m, one_m, out=log_m)
    value = (
        0.5 * problem.m_obs * np.log(e_safe)
        - gamma * np.sum(m, axis=-1)
        + np.sum(log_m, axis=-1)
    )
    return value, g_w, d_m, e_rec


def vg_gradient(problem: SparseProblem, state: VgState, params: VgParams):
    """Gradient of :func:`vg_free_energy` in ``(w, m_logit)``."""
    w = _check_coeffs(problem, state.w)
    _, g_w, g_logit, _ = _vg_value_and_grad(problem, w, np.asarray(state.m_logit, float), params.gamma)
    return g_w, g_logit


def _vg_fun(problem: SparseProblem, gamma):
    n = problem.n

    def fun(params):
        grad = np.empty_like(params)
        value, _, _, _ = _vg_value_and_grad(problem, params[..., :n], params[..., n:], gamma, grad)
        return value, grad

    return fun


# -- exhaustive l0 oracle ------------------------------------------------------


def _restricted_lstsq(mat, y, support, jitter=1e-12):
    if not support:
        return np.zeros(0)
    sub = mat[:, list(support)]
    gram = sub.T @ sub + jitter * np.eye(len(support))
    return np.linalg.solve(gram, sub.T @ y)


def brute_force_l0(problem: SparseProblem, k_max: int, max_n: int = 20):
    """Best-fitting support of size at most ``k_max`` by exhaustive search.

    Returns ``(support, w, residual_norm)``. Supports are visited by size and
    then lexicographically, and only a strictly smaller residual replaces the
    incumbent, so ties go to the smaller and then lexicographically first set.
    """
    n = problem.n
    if n > max_n:
        raise ValueError(
            f"exhaustive search over {n} coefficients is refused (limit {max_n}); "
            "use a smaller problem or raise max_n knowingly"
        )
    if problem.y.ndim != 1:
        raise ValueError("brute_force_l0 handles a single problem, not a batch")
    mat = problem.theta.to_matrix()
    y = problem.y
    best_support, best_w = (), np.zeros(n)
    best_res = float(np.linalg.norm(y))
    tol = 1e-12 * max(1.0, best_res)
    for k in range(1, min(k_max, n) + 1):
        for support in itertools.combinations(range(n), k):
            ws = _restricted_lstsq(mat, y, support)
            res = float(np.linalg.norm(y - mat[:, list(support)] @ ws))
            if res < best_res - tol:
                best_support, best_res = support, res
                best_w = np.zeros(n)
                best_w[list(support)] = ws
    return best_support, best_w, best_res


def refit_support(problem: SparseProblem, support):
    """Least squares restricted to ``support``; returns ``(w, residual_norm)``."""
    mat = problem.theta.to_matrix()
    ws = _restricted_lstsq(mat, problem.y, tuple(support))
    w = np.zeros(problem.n)
    w[list(support)] = ws
    return w, float(np.linalg.norm(problem.y - mat @ w))


# -- driver --------------------------------------------------------------------


@dataclass
class Solution:
    """Result of :func:`solve`. ``coeffs`` is ``w`` for LASSO and ``w * m`` for
    the garrote; batched solves give one row per problem."""

    coeffs: np.ndarray
    method: str
    hyperparam: float | np.ndarray
    objective: float | np.ndarray
    iterations: int | np.ndarray
    stop_reason: str | np.ndarray
    initial_objective: float | np.ndarray = None
    w: np.ndarray | None = None
    m: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def plain(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, np.generic):
                return x.item()
            return x

        payload = {
            "method": self.method,
            "hyperparam": plain(self.hyperparam),
            "coeffs": plain(self.coeffs),
            "stop_reason": plain(self.stop_reason),
            "iterations": plain(self.iterations),
            "objective": plain(self.objective),
        }
        if self.m is not None:
            payload["gates"] = plain(self.m)
        payload["diagnostics"] = {k: plain(v) for k, v in self.diagnostics.items()}
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "Solution":
        d = json.loads(text)

        def arr(x):
            return np.asarray(x) if isinstance(x, list) else x

        return cls(
            coeffs=np.asarray(d["coeffs"], dtype=np.float64),
            method=d["method"],
            hyperparam=arr(d["hyperparam"]),
            objective=arr(d["objective"]),
            iterations=arr(d["iterations"]),
            stop_reason=arr(d["stop_reason"]),
            m=None if "gates" not in d else np.asarray(d["gates"], dtype=np.float64),
            diagnostics=d.get("diagnostics", {}),
        )


def init_params(n: int, seeds, vg: bool) -> np.ndarray:
    """Gaussian start (std ``INIT_SCALE``); one generator per row so a row's
    start depends only on its own seed."""
    seeds = np.atleast_1d(seeds)
    rows = []
    for s in seeds:
        rng = np.random.default_rng(int(s))
        w = rng.normal(0.0, INIT_SCALE, n)
        if vg:
            rows.append(np.concatenate([w, rng.normal(0.0, INIT_SCALE, n)]))
        else:
            rows.append(w)
    return np.stack(rows)


def solve(problem: SparseProblem, method: Method, opt_config: OptConfig = OptConfig(),
          seeds=None, raise_on_nan: bool = True) -> Solution:
    """Fit ``problem`` with LASSO or the garrote from a Gaussian start.

    For a batched problem, ``seeds`` gives one initialization seed per row
    (default ``opt_config.seed + row``) and hyperparameters may be per-row
    arrays. Rows whose objective turns non-finite raise ``DivergenceError``
    unless ``raise_on_nan`` is False, in which case they are reported with
    stop reason ``"nan_abort"``.
    """
    batch = problem.batch_shape
    if len(batch) > 1:
        raise ValueError("only one batch axis is supported")
    B = batch[0] if batch else 1
    if seeds is None:
        seeds = opt_config.seed + np.arange(B)
    seeds = np.atleast_1d(seeds)
    if seeds.size != B:
        raise ValueError(f"need {B} seeds, got {seeds.size}")

    is_vg = isinstance(method, VgParams)
    if not is_vg and not isinstance(method, LassoParams):
        raise TypeError(f"unknown method {method!r}")
    hyper = np.broadcast_to(np.asarray(method.value, dtype=np.float64), (B,)).copy()
    if is_vg:
        problem.col_norms  # computed once, shared by every row subset

    def make(p, h):
        return _vg_fun(p, h) if is_vg else _lasso_fun(p, h)

    params0 = init_params(problem.n, seeds, is_vg)
    chunks = []
    for start in range(0, B, opt_config.batch if batch else 1):
        rows = np.arange(start, min(B, start + (opt_config.batch if batch else 1)))
        sub = problem.take(rows) if batch else problem
        h = hyper[rows] if batch else hyper[0]
        x0 = params0[rows] if batch else params0[0]

        def restrict(live, sub=sub, h=h):
            return make(sub.take(live), h[live])

        res = run_loop(make(sub, h), x0, opt_config, restrict=restrict if batch else None)
        chunks.append(res)

    if batch:
        params = np.concatenate([c.params for c in chunks])
        objective = np.concatenate([c.loss for c in chunks])
        initial = np.concatenate([c.initial_loss for c in chunks])
        iters = np.concatenate([c.iterations for c in chunks])
        reason = np.concatenate([c.stop_reason for c in chunks])
        nan_iter = np.concatenate([c.nan_iteration for c in chunks])
    else:
        c = chunks[0]
        params, objective, initial = c.params, c.loss, c.initial_loss
        iters, reason, nan_iter = c.iterations, c.stop_reason, c.nan_iteration

    failed = np.atleast_1d(reason == STOP_NAN)
    if raise_on_nan and failed.any():
        row = int(np.flatnonzero(failed)[0])
        p = np.atleast_2d(params)[row]
        raise DivergenceError(
            f"{method.name}: non-finite objective at iteration "
            f"{int(np.atleast_1d(nan_iter)[row])} (row {row}, parameter norm "
            f"{np.linalg.norm(p):.3e})"
        )

    n = problem.n
    diagnostics = {"seeds": seeds if batch else int(seeds[0])}
    if is_vg:
        w, m = params[..., :n], expit(params[..., n:])
        coeffs = w * m
        e_rec = vg_e_rec(problem, VgState(w, params[..., n:]))
        diagnostics["perfect_fit"] = np.asarray(e_rec) <= E_REC_FLOOR if batch else bool(e_rec <= E_REC_FLOOR)
    else:
        w, m, coeffs = params, None, params
    return Solution(
        coeffs=coeffs,
        method=method.name,
        hyperparam=hyper if batch else float(hyper[0]),
        objective=objective,
        iterations=iters,
        stop_reason=reason,
        initial_objective=initial,
        w=w,
        m=m,
        diagnostics=diagnostics,
    )


def reconstruct(solution: Solution, basis=None) -> np.ndarray:
    """Map coefficients back to signal space (``basis=None`` is the identity)."""
    coeffs = np.asarray(solution.coeffs if isinstance(solution, Solution) else solution)
    if basis is None:
        return coeffs.copy()
    if coeffs.shape[-1] != basis.input_dim:
        raise ValueError(
            f"coefficient length {coeffs.shape[-1]} does not match basis {basis.input_dim}"
        )
    return basis.apply(coeffs)
