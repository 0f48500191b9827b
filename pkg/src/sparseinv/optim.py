"""AdamW with a reduce-on-plateau schedule and early stopping.

Parameters are arrays of shape ``(P,)`` or ``(B, P)``. With a leading batch
axis every row is an independent optimization problem: it has its own moments,
step count, learning rate and plateau counter, and it stops on its own. A row's
trajectory is therefore the same whether it runs alone or stacked with others.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "OptConfig",
    "OptimizerState",
    "LoopResult",
    "adamw_step",
    "plateau_step",
    "run_loop",
    "STOP_LR_FLOOR",
    "STOP_MAX_ITERS",
    "STOP_NAN",
]

log = logging.getLogger(__name__)

STOP_LR_FLOOR = "lr_floor"
STOP_MAX_ITERS = "max_iters"
STOP_NAN = "nan_abort"


@dataclass(frozen=True)
class OptConfig:
    initial_lr: float = 0.3
    lr_floor: float = 1e-5
    max_iters: int = 50_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    factor: float = 0.5
    patience: int = 100
    rel_threshold: float = 1e-4
    seed: int = 0
    # rows stacked into one vectorized run; does not change results
    batch: int = 1
    trace_path: str | None = None

    def __post_init__(self):
        if not 0 < self.lr_floor < self.initial_lr:
            raise ValueError("need 0 < lr_floor < initial_lr")
        if not 0 < self.factor < 1:
            raise ValueError("plateau factor must lie in (0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    def with_(self, **kw) -> "OptConfig":
        return replace(self, **kw)


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: np.ndarray
    current_lr: np.ndarray
    best_loss: np.ndarray
    plateau_counter: np.ndarray

    @classmethod
    def init(cls, params: np.ndarray, cfg: OptConfig) -> "OptimizerState":
        lead = params.shape[:-1]
        return cls(
            first_moment=np.zeros_like(params, dtype=np.float64),
            second_moment=np.zeros_like(params, dtype=np.float64),
            step_count=np.zeros(lead, dtype=np.int64),
            current_lr=np.full(lead, float(cfg.initial_lr)),
            best_loss=np.full(lead, np.inf),
            plateau_counter=np.zeros(lead, dtype=np.int64),
        )

    def take(self, rows) -> "OptimizerState":
        return OptimizerState(
            self.first_moment[rows],
            self.second_moment[rows],
            self.step_count[rows],
            self.current_lr[rows],
            self.best_loss[rows],
            self.plateau_counter[rows],
        )


def adamw_step(params, grad, state: OptimizerState, cfg: OptConfig):
    """One decoupled-weight-decay Adam update with bias correction.

    Updates ``state`` in place and returns ``(new_params, state)``.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    # a finite sum rules out NaN/inf entries in one pass
    if not np.isfinite(np.sum(grad)):
        bad = ~np.isfinite(grad)
        if bad.any():
            idx = np.unravel_index(np.flatnonzero(bad)[0], grad.shape)
            raise FloatingPointError(f"non-finite gradient at parameter index {idx}")

    state.step_count += 1
    t = state.step_count[..., None]
    lr = state.current_lr[..., None]
    m, v = state.first_moment, state.second_moment
    # one scratch array serves every intermediate and becomes the result
    buf = np.multiply(grad, 1 - cfg.beta1)
    m *= cfg.beta1
    m += buf
    np.multiply(grad, grad, out=buf)
    buf *= 1 - cfg.beta2
    v *= cfg.beta2
    v += buf
    bias1 = 1 - cfg.beta1**t
    bias2 = 1 - cfg.beta2**t
    np.sqrt(v, out=buf)
    buf /= np.sqrt(bias2)
    buf += cfg.eps
    np.divide(m, buf, out=buf)
    buf *= lr / bias1
    if cfg.weight_decay:
        new = params * (1 - lr * cfg.weight_decay)
        new -= buf
        return new, state
    return np.subtract(params, buf, out=buf), state


def plateau_step(loss, state: OptimizerState, cfg: OptConfig) -> OptimizerState:
    """Track the best loss and cut the learning rate after a stall.

    A loss counts as an improvement when it beats the best so far by more than
    ``rel_threshold * |best|``. When more than ``patience`` consecutive steps
    fail to improve, the rate is multiplied by ``factor`` and the count resets.
    """
    loss = np.asarray(loss, dtype=np.float64)
    best = state.best_loss
    improved = loss < best - cfg.rel_threshold * np.abs(np.where(np.isfinite(best), best, 0.0))
    improved |= ~np.isfinite(best)
    state.best_loss = np.where(improved, loss, best)
    counter = np.where(improved, 0, state.plateau_counter + 1)
    cut = counter > cfg.patience
    state.current_lr = np.where(cut, state.current_lr * cfg.factor, state.current_lr)
    state.plateau_counter = np.where(cut, 0, counter)
    return state


@dataclass
class LoopResult:
    params: np.ndarray
    loss: np.ndarray
    iterations: np.ndarray
    stop_reason: np.ndarray
    initial_loss: np.ndarray
    final_lr: np.ndarray
    nan_iteration: np.ndarray = field(default=None)


Objective = Callable[[np.ndarray], tuple]


def run_loop(fun: Objective, params0, cfg: OptConfig, restrict: Callable | None = None) -> LoopResult:
    """Minimize ``fun`` from ``params0``.

    ``fun(params)`` returns ``(loss, grad)``; for batched parameters ``loss``
    has one entry per row. ``restrict(rows)``, if given, returns an objective
    for the subset ``rows`` of the original batch; it lets finished rows drop
    out of the computation.

    Each row stops when its learning rate falls below ``cfg.lr_floor``, after
    ``cfg.max_iters`` steps, or when its loss or gradient turns non-finite. In
    the last case the row keeps its last finite parameters.
    """
    params0 = np.asarray(params0, dtype=np.float64)
    single = params0.ndim == 1
    x = np.array(params0[None, :] if single else params0, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("parameters must be 1-D or 2-D")
    B = x.shape[0]

    def wrap(f):
        if not single:
            return f

        def g(p):
            loss, grad = f(p[0])
            return np.atleast_1d(loss), np.asarray(grad)[None, :]

        return g

    full_fun = wrap(fun)
    cur_fun = full_fun
    live = np.arange(B)
    state = OptimizerState.init(x, cfg)

    out_params = x.copy()
    out_iters = np.zeros(B, dtype=np.int64)
    out_reason = np.empty(B, dtype=object)
    out_lr = np.zeros(B)
    nan_iter = np.full(B, -1, dtype=np.int64)
    initial_loss = None

    trace = None
    if cfg.trace_path:
        trace_fh = open(cfg.trace_path, "w", newline="")
        trace = csv.writer(trace_fh)
        trace.writerow(["iteration", "loss", "lr"])

    try:
        while live.size:
            loss, grad = cur_fun(x)
            loss = np.asarray(loss, dtype=np.float64)
            grad = np.asarray(grad, dtype=np.float64)
            if initial_loss is None:
                initial_loss = loss.copy()
            finite = np.isfinite(loss) & np.isfinite(np.sum(grad, axis=-1))
            if not finite.all():
                # a row sum can overflow with finite entries; check those exactly
                unsure = np.flatnonzero(np.isfinite(loss) & ~finite)
                finite[unsure] = np.all(np.isfinite(grad[unsure]), axis=-1)
            done = ~finite
            any_done = not finite.all()
            reason = np.where(done, STOP_NAN, "")
            if any_done:
                nan_iter[live[done]] = state.step_count[done]
                log.warning(
                    "non-finite objective in %d row(s) at iteration %s",
                    int(done.sum()),
                    state.step_count[done].tolist(),
                )
                grad = np.where(finite[:, None], grad, 0.0)

            if trace is not None:
                ok = loss[finite]
                if ok.size:
                    trace.writerow(
                        [int(state.step_count.max()), repr(float(ok.mean())),
                         repr(float(state.current_lr.max()))]
                    )

            new_x, state = adamw_step(x, grad, state, cfg)
            if any_done:
                # rows that hit a non-finite value keep their last finite params
                new_x = np.where(done[:, None], x, new_x)
                loss = np.where(finite, loss, np.inf)
            x = new_x
            state = plateau_step(loss, state, cfg)

            floor_hit = (state.current_lr < cfg.lr_floor) & ~done
            reason = np.where(floor_hit & (reason == ""), STOP_LR_FLOOR, reason)
            iters_hit = (state.step_count >= cfg.max_iters) & (reason == "")
            reason = np.where(iters_hit, STOP_MAX_ITERS, reason)
            finished = reason != ""
            if finished.any():
                rows = live[finished]
                out_params[rows] = x[finished]
                out_iters[rows] = np.where(done[finished], state.step_count[finished] - 1,
                                           state.step_count[finished])
                out_reason[rows] = reason[finished]
                out_lr[rows] = state.current_lr[finished]
                keep = ~finished
                live = live[keep]
                if live.size == 0:
                    break
                x = x[keep]
                state = state.take(keep)
                if restrict is not None:
                    cur_fun = wrap(restrict(live))
                else:
                    cur_fun = _subset_view(full_fun, out_params, live)
    finally:
        if trace is not None:
            trace_fh.close()

    final_loss, _ = full_fun(out_params)
    final_loss = np.asarray(final_loss, dtype=np.float64)
    if single:
        return LoopResult(out_params[0], final_loss[0], out_iters[0], out_reason[0],
                          initial_loss[0], out_lr[0], nan_iter[0])
    return LoopResult(out_params, final_loss, out_iters, out_reason, initial_loss,
                      out_lr, nan_iter)


def _subset_view(full_fun, frozen, live):
    """Evaluate the full-batch objective with finished rows held fixed."""

    def f(x_live):
        params = frozen.copy()
        params[live] = x_live
        loss, grad = full_fun(params)
        return np.asarray(loss)[live], np.asarray(grad)[live]

    return f
