"""Benchmark tasks, regularization sweeps and error summaries.

Every (grid point, trial) pair is an independent regression problem. The
problems of one sweep are stacked as rows and solved together; because rows
never interact, a metric does not depend on how rows are grouped into chunks
or spread over worker processes.

Trial ``r`` uses seed ``base_seed + r`` for its mask or noise draw and for the
solver start, at every grid point, so curves differ only through the
hyperparameter.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import add_noise, circular_fov, NoiseSpec, sample_mask
from .operators import (
    CtGeometry,
    MaskOperator,
    IdentityOperator,
    compose,
    fbp_reconstruct,
    radon_operator,
)
from .optim import STOP_NAN, OptConfig
from .solvers import LassoParams, SparseProblem, VgParams, solve
from .transforms import DctBasis

__all__ = [
    "SweepPoint",
    "SweepResult",
    "CtResult",
    "ResamplingTask",
    "DenoisingTask",
    "CtTask",
    "ExperimentConfig",
    "rel_error",
    "resampling_trial",
    "denoising_trial",
    "ct_trial",
    "sweep",
    "mge",
    "spearman",
    "default_grid",
    "run_resampling_experiment",
    "run_denoising_experiment",
    "run_ct_experiment",
    "write_sweep_csv",
    "read_sweep_csv",
    "config_hash",
    "preset",
    "mge_table",
    "write_ct_csv",
    "read_ct_csv",
]

log = logging.getLogger(__name__)

METHODS = ("lasso", "vg")


def _params(method: str, values):
    if method == "lasso":
        return LassoParams(np.asarray(values, dtype=np.float64))
    if method == "vg":
        return VgParams(np.asarray(values, dtype=np.float64))
    raise ValueError(f"unknown method {method!r}; expected 'lasso' or 'vg'")


def rel_error(target, estimate):
    """``||target - estimate|| / ||target||`` along the last axis."""
    target = np.asarray(target, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if target.shape[-1] != estimate.shape[-1]:
        raise ValueError(f"length mismatch: {target.shape[-1]} vs {estimate.shape[-1]}")
    norm = np.linalg.norm(target, axis=-1)
    if np.any(norm == 0):
        raise ValueError("relative error is undefined for a zero target")
    out = np.linalg.norm(target - estimate, axis=-1) / norm
    return float(out) if out.ndim == 0 else out


# -- tasks ---------------------------------------------------------------------
#
# A task turns a list of (hyperparameter index, trial seed) rows into one
# stacked SparseProblem and evaluates the fitted coefficients of every row.


@dataclass
class ResamplingTask:
    """Recover a signal from the samples kept by a random mask of ratio R."""

    signal: np.ndarray
    ratio: float

    bottleneck = "R"

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if sample_mask(self.signal.size, self.ratio).missing_indices.size == 0:
            raise ValueError("sampling ratio keeps every sample; nothing is left to generalize to")

    @property
    def level(self) -> float:
        return self.ratio

    def masks(self, seeds):
        return [sample_mask(self.signal.size, self.ratio, int(s)) for s in seeds]

    def build(self, seeds):
        n = self.signal.size
        bools = np.stack([m.as_bool() for m in self.masks(seeds)])
        theta = compose(MaskOperator(bools), DctBasis(n))
        return SparseProblem(theta, self.signal * bools), bools

    def evaluate(self, coeffs, aux):
        bools = aux
        x_hat = DctBasis(self.signal.size).apply(coeffs)
        train = np.empty(len(coeffs))
        gen = np.empty(len(coeffs))
        for i, mask in enumerate(bools):
            train[i] = rel_error(self.signal[mask], x_hat[i, mask])
            gen[i] = rel_error(self.signal[~mask], x_hat[i, ~mask])
        return train, gen


@dataclass
class DenoisingTask:
    """Recover a clean signal from a fully observed noisy copy."""

    signal: np.ndarray
    alpha: float

    bottleneck = "alpha"

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        NoiseSpec(self.alpha)

    @property
    def level(self) -> float:
        return self.alpha

    def build(self, seeds):
        n = self.signal.size
        noisy = np.stack([add_noise(self.signal, NoiseSpec(self.alpha, int(s))) for s in seeds])
        return _denoising_problem(noisy), noisy

    def evaluate(self, coeffs, aux):
        x_hat = DctBasis(self.signal.size).apply(coeffs)
        return rel_error(aux, x_hat), rel_error(np.broadcast_to(self.signal, x_hat.shape), x_hat)


@dataclass
class CtTask:
    """Pixel-space reconstruction of an image from K parallel-beam views.

    The training error is the relative sinogram misfit; the generalization
    error is the mean squared image error inside the circular field of view.
    """

    image: np.ndarray
    num_angles: int
    detector_count: int | None = None

    bottleneck = "K"

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 2 or self.image.shape[0] != self.image.shape[1]:
            raise ValueError("CT images must be square")
        self.fov = circular_fov(self.image.shape[0]) > 0
        self.image = self.image * self.fov

    @property
    def level(self) -> float:
        return float(self.num_angles)

    @property
    def geometry(self) -> CtGeometry:
        return CtGeometry(self.image.shape[0], self.num_angles, self.detector_count)

    def sinogram(self) -> np.ndarray:
        op = radon_operator(self.geometry)
        return op.apply(self.image.ravel()).reshape(self.geometry.sinogram_shape)

    def build(self, seeds):
        op = radon_operator(self.geometry)
        y = op.apply(self.image.ravel())
        return SparseProblem(op, np.tile(y, (len(seeds), 1))), y

    def image_mse(self, recon) -> np.ndarray:
        recon = np.asarray(recon, dtype=np.float64).reshape(-1, *self.image.shape)
        diff = (recon - self.image)[:, self.fov]
        return np.mean(diff * diff, axis=-1)

    def evaluate(self, coeffs, aux):
        y = aux
        fitted = radon_operator(self.geometry).apply(coeffs * self.fov.ravel())
        return rel_error(np.broadcast_to(y, fitted.shape), fitted), self.image_mse(coeffs)

    def fbp(self) -> np.ndarray:
        return fbp_reconstruct(self.sinogram(), self.geometry)


# -- single trials ---------------------------------------------------------------


def _denoising_problem(noisy) -> SparseProblem:
    """Full observation through an orthonormal basis: ||y - Psi w|| equals
    ||Psi^T y - w||, so the fit runs in coefficient space without transforms."""
    n = noisy.shape[-1]
    return SparseProblem(IdentityOperator(n), DctBasis(n).adjoint_apply(noisy))


def _solve_rows(task, method, hyper, seeds, opt_config):
    """Solve one stacked chunk; returns (e_train, e_gen, iterations, stop_reason)."""
    problem, aux = task.build(seeds)
    sol = solve(problem, _params(method, hyper), opt_config, seeds=seeds, raise_on_nan=False)
    train, gen = task.evaluate(sol.coeffs, aux)
    return (np.atleast_1d(train), np.atleast_1d(gen), np.atleast_1d(sol.iterations),
            np.atleast_1d(sol.stop_reason), sol.coeffs)


def resampling_trial(signal, mask, method: str, hyperparam: float, opt_config=OptConfig(),
                     seed: int | None = None):
    """Fit one masked signal; returns ``(e_train, e_gen)``."""
    signal = np.asarray(signal, dtype=np.float64)
    if mask.missing_indices.size == 0:
        raise ValueError("mask observes every sample; the generalization set is empty")
    n = signal.size
    keep = mask.as_bool()
    theta = compose(MaskOperator(keep), DctBasis(n))
    sol = solve(SparseProblem(theta, signal * keep), _params(method, hyperparam), opt_config,
                seeds=[opt_config.seed if seed is None else seed])
    x_hat = np.atleast_2d(DctBasis(n).apply(sol.coeffs))[0]
    return rel_error(signal[keep], x_hat[keep]), rel_error(signal[~keep], x_hat[~keep])


def denoising_trial(clean, noise: NoiseSpec, method: str, hyperparam: float,
                    opt_config=OptConfig(), seed: int | None = None):
    """Fit a noisy copy of ``clean``; returns ``(e_train, e_gen)``."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = add_noise(clean, noise)
    n = clean.size
    sol = solve(_denoising_problem(noisy), _params(method, hyperparam), opt_config,
                seeds=[opt_config.seed if seed is None else seed])
    x_hat = np.atleast_2d(DctBasis(n).apply(sol.coeffs))[0]
    return rel_error(noisy, x_hat), rel_error(clean, x_hat)


def ct_trial(image, geom: CtGeometry, method: str, hyperparam: float | None = None,
             opt_config=OptConfig(), seed: int | None = None) -> float:
    """In-FOV image MSE of an FBP, LASSO or garrote reconstruction."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (geom.image_size, geom.image_size):
        raise ValueError(f"image shape {image.shape} does not match geometry {geom.image_size}")
    task = CtTask(image, geom.num_angles, geom.detector_count)
    if method == "fbp":
        return float(task.image_mse(task.fbp())[0])
    if hyperparam is None:
        raise ValueError(f"{method} needs a hyperparameter")
    _, gen, _, _, _ = _solve_rows(task, method, [hyperparam],
                                  [opt_config.seed if seed is None else seed], opt_config)
    return float(gen[0])


# -- sweeps ----------------------------------------------------------------------


@dataclass
class SweepPoint:
    hyperparam: float
    e_train: float
    e_gen: float
    e_train_std: float = 0.0
    e_gen_std: float = 0.0
    valid: bool = True
    iterations: float = 0.0
    stop_reasons: dict = field(default_factory=dict)
    e_gen_trials: np.ndarray | None = field(default=None, repr=False)
    note: str = ""


@dataclass
class SweepResult:
    method: str
    bottleneck: str
    level: float
    points: list
    trials: int
    seeds: list = field(default_factory=list)

    @property
    def hyperparams(self) -> np.ndarray:
        return np.array([p.hyperparam for p in self.points])

    @property
    def e_train(self) -> np.ndarray:
        return np.array([p.e_train for p in self.points])

    @property
    def e_gen(self) -> np.ndarray:
        return np.array([p.e_gen for p in self.points])

    @property
    def valid(self) -> np.ndarray:
        return np.array([p.valid for p in self.points], dtype=bool)


@dataclass
class CtResult:
    method: str
    k: int
    mse_mean: float
    mse_std: float
    best_hyperparam: float | None = None
    mse_trials: list = field(default_factory=list)


def _strength_order(method: str, grid) -> np.ndarray:
    """Grid indices sorted from weakest to strongest regularization."""
    grid = np.asarray(grid, dtype=np.float64)
    # larger lambda / more negative gamma regularize harder
    return np.argsort(grid, kind="stable") if method == "lasso" else np.argsort(-grid, kind="stable")


def _chunk_worker(args):
    task, method, hyper, seeds, cfg = args
    train, gen, iters, reason, _ = _solve_rows(task, method, hyper, seeds, cfg)
    return train, gen, iters, reason


def sweep(task, method: str, grid, trials: int = 1, base_seed: int = 0,
          opt_config: OptConfig = OptConfig(), workers: int = 1) -> SweepResult:
    """Average train and generalization errors over ``trials`` realizations at
    every grid value.

    Points are stored in order of increasing regularization strength. A point
    any of whose trials fails numerically is kept but marked invalid.
    """
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValueError("hyperparameter grid is empty")
    if trials < 1:
        raise ValueError("need at least one trial")
    _params(method, grid)  # validates the method and grid values
    order = _strength_order(method, grid)
    grid = grid[order]
    seeds = base_seed + np.arange(trials)

    # rows are ordered (grid point, trial)
    hyper = np.repeat(grid, trials)
    row_seeds = np.tile(seeds, grid.size)
    size = opt_config.batch
    jobs = [
        (task, method, hyper[i:i + size], row_seeds[i:i + size], opt_config)
        for i in range(0, hyper.size, size)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_worker, jobs))
    else:
        parts = [_chunk_worker(j) for j in jobs]
    train, gen, iters, reason = (np.concatenate(x) for x in zip(*parts))
    shape = (grid.size, trials)
    train, gen, iters, reason = (a.reshape(shape) for a in (train, gen, iters, reason))

    points = []
    for j, h in enumerate(grid):
        failed = (reason[j] == STOP_NAN) | ~np.isfinite(train[j]) | ~np.isfinite(gen[j])
        counts = {str(k): int(v) for k, v in zip(*np.unique(reason[j].astype(str), return_counts=True))}
        if failed.any():
            log.warning("%s at %s=%g: %d trial(s) failed; point marked invalid",
                        method, task.bottleneck, h, int(failed.sum()))
            points.append(SweepPoint(float(h), np.nan, np.nan, np.nan, np.nan, False,
                                     float(iters[j].mean()), counts, gen[j].copy(),
                                     note=f"{int(failed.sum())} failed trial(s)"))
            continue
        points.append(SweepPoint(
            hyperparam=float(h),
            e_train=float(np.mean(train[j])),
            e_gen=float(np.mean(gen[j])),
            e_train_std=float(np.std(train[j])),
            e_gen_std=float(np.std(gen[j])),
            iterations=float(iters[j].mean()),
            stop_reasons=counts,
            e_gen_trials=gen[j].copy(),
        ))
    return SweepResult(method, task.bottleneck, task.level, points, trials, seeds.tolist())


def mge(result: SweepResult):
    """Minimum mean generalization error over valid points and its
    hyperparameter; ties go to the stronger regularization."""
    valid = [p for p in result.points if p.valid]
    if not valid:
        raise ValueError("no valid sweep point")
    order = _strength_order(result.method, [p.hyperparam for p in valid])
    best = None
    for i in order:
        if best is None or valid[i].e_gen <= best.e_gen:
            best = valid[i]
    return best.e_gen, best.hyperparam


def spearman(a, b) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(a, b).statistic)


def default_grid(method: str, task: str, size: int = 20) -> np.ndarray:
    """Grids over the published ranges: log-spaced lambda, linear gamma."""
    if task in ("resample", "denoise"):
        if method == "lasso":
            return np.logspace(np.log10(5e-4), np.log10(5.0), size)
        return np.linspace(-15.0, -1.0, size)
    if task == "ct":
        if method == "lasso":
            return np.logspace(1.0, 3.0, size)
        return np.linspace(-10.0, 0.0, size)
    raise ValueError(f"unknown task {task!r}")


# -- experiment configuration ------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's numbers."""

    experiment: str = "resample"
    dataset: str = "synthetic"
    scale: str = "desk"
    trials: int = 10
    grid_size: int = 20
    lasso_grid: tuple | None = None
    vg_grid: tuple | None = None
    levels: tuple = tuple(np.round(np.arange(1, 11) * 0.05, 2).tolist())
    signal_length: int = 2000
    sample_rate: float = 16000.0
    start_time: float = 2.5
    image_size: int = 128
    detector_count: int | None = None
    methods: tuple = METHODS
    base_seed: int = 0
    opt: OptConfig = OptConfig(batch=20)
    workers: int = 1

    def grid(self, method: str) -> np.ndarray:
        given = self.lasso_grid if method == "lasso" else self.vg_grid
        if given is not None:
            return np.asarray(given, dtype=np.float64)
        return default_grid(method, self.experiment, self.grid_size)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["opt"] = {k: v for k, v in asdict(self.opt).items() if k != "trace_path"}
        d["resolved_grids"] = {m: self.grid(m).tolist() for m in self.methods}
        return d


# Desk CT grids: the image is 4x smaller than at paper scale and the
# published ranges sit outside the useful region of this discretization.
# The iteration cap keeps the desk run under an hour on one core.
DESK_CT_LASSO_GRID = (0.0316, 0.1, 0.316, 1.0, 3.16)
DESK_CT_VG_GRID = (3.0, 4.0)
DESK_CT_MAX_ITERS = 20000

# Weak-prior garrote fits on fully observed noise keep lowering ln E_rec
# toward an exact interpolation and run to the cap; at desk scale they are
# stopped earlier. The selected (best) points converge in a few thousand steps.
DESK_DENOISE_MAX_ITERS = 20000

SIGNAL_EXPERIMENTS = ("resample", "denoise")


def preset(experiment: str, scale: str = "desk", dataset: str | None = None) -> ExperimentConfig:
    """Defaults for one experiment at ``desk`` or ``paper`` scale."""
    if scale not in ("desk", "paper"):
        raise ValueError(f"unknown scale {scale!r}; expected 'desk' or 'paper'")
    paper = scale == "paper"
    if experiment in SIGNAL_EXPERIMENTS:
        dataset = dataset or "synthetic"
        length = 2000 if dataset == "synthetic" else 2500
        if experiment == "resample":
            levels = tuple(np.round(np.arange(1, 11) * 0.05, 2).tolist())
            trials = 100 if paper else 10
        else:
            levels = tuple(np.logspace(-2, 0, 10).tolist())
            trials = 50 if paper else 10
        opt = OptConfig(batch=100 if paper else 20)
        if experiment == "denoise" and not paper:
            opt = opt.with_(max_iters=DESK_DENOISE_MAX_ITERS)
        return ExperimentConfig(experiment=experiment, dataset=dataset, scale=scale,
                                trials=trials, levels=levels, signal_length=length, opt=opt)
    if experiment == "ct":
        dataset = dataset or "shepp-logan"
        if paper:
            return ExperimentConfig(experiment="ct", dataset=dataset, scale=scale, trials=10,
                                    levels=tuple(range(10, 121, 10)), image_size=512,
                                    opt=OptConfig(batch=10))
        return ExperimentConfig(experiment="ct", dataset=dataset, scale=scale, trials=5,
                                levels=(20, 40, 80), image_size=128,
                                lasso_grid=DESK_CT_LASSO_GRID, vg_grid=DESK_CT_VG_GRID,
                                opt=OptConfig(batch=30, max_iters=DESK_CT_MAX_ITERS))
    raise ValueError(f"unknown experiment {experiment!r}")


def config_hash(cfg: ExperimentConfig) -> str:
    text = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _run_sweeps(tasks, cfg: ExperimentConfig):
    results = []
    for task in tasks:
        for method in cfg.methods:
            t0 = time.perf_counter()
            res = sweep(task, method, cfg.grid(method), cfg.trials, cfg.base_seed, cfg.opt,
                        cfg.workers)
            log.info("%s %s=%g done in %.1fs", method, task.bottleneck, task.level,
                     time.perf_counter() - t0)
            results.append(res)
    return results


def mge_table(results) -> list[dict]:
    rows = []
    for res in results:
        try:
            value, h = mge(res)
        except ValueError:
            value, h = float("nan"), float("nan")
        rows.append({"method": res.method, "bottleneck": res.bottleneck, "level": res.level,
                     "mge": value, "hyperparam": h})
    return rows


def run_resampling_experiment(signal, cfg: ExperimentConfig) -> list[SweepResult]:
    """Sweeps for every sampling ratio in ``cfg.levels`` and every method."""
    tasks = [ResamplingTask(signal, r) for r in cfg.levels]
    return _run_sweeps(tasks, cfg)


def run_denoising_experiment(signal, cfg: ExperimentConfig) -> list[SweepResult]:
    """Sweeps for every noise amplitude in ``cfg.levels`` and every method."""
    tasks = [DenoisingTask(signal, a) for a in cfg.levels]
    return _run_sweeps(tasks, cfg)


def run_ct_experiment(image, cfg: ExperimentConfig):
    """Per angle count: FBP and the best grid point of each sparse method.

    Hyperparameters are selected and reported on the same trials. Returns
    ``(ct_results, sweeps)``.
    """
    ct_results, sweeps = [], []
    for k in cfg.levels:
        k = int(k)
        task = CtTask(image, k, cfg.detector_count)
        fbp_mse = float(task.image_mse(task.fbp())[0])
        # FBP has no randomness: every trial gives the same value
        ct_results.append(CtResult("fbp", k, fbp_mse, 0.0, None, [fbp_mse] * cfg.trials))
        for res in _run_sweeps([task], cfg):
            sweeps.append(res)
            try:
                value, h = mge(res)
            except ValueError:
                ct_results.append(CtResult(res.method, k, float("nan"), float("nan")))
                continue
            point = next(p for p in res.points if p.hyperparam == h)
            ct_results.append(CtResult(res.method, k, value, point.e_gen_std, h,
                                       point.e_gen_trials.tolist()))
    return ct_results, sweeps


# -- result files -------------------------------------------------------------------

SWEEP_FIELDS = ["method", "bottleneck", "level", "hyperparam", "e_train", "e_gen",
                "e_train_std", "e_gen_std", "trials", "valid", "iterations"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_sweep_csv(path, results) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_FIELDS)
    for res in results:
        for p in res.points:
            writer.writerow([res.method, res.bottleneck, _fmt(res.level), _fmt(p.hyperparam),
                             _fmt(p.e_train), _fmt(p.e_gen), _fmt(p.e_train_std),
                             _fmt(p.e_gen_std), _fmt(res.trials), _fmt(p.valid),
                             _fmt(p.iterations)])
    Path(path).write_text(buf.getvalue())


def read_sweep_csv(path) -> list[SweepResult]:
    """Rebuild sweep results (without per-trial detail) from a sweep CSV."""
    groups: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["bottleneck"], float(row["level"]))
            res = groups.get(key)
            if res is None:
                res = groups[key] = SweepResult(key[0], key[1], key[2], [], int(row["trials"]))
            res.points.append(SweepPoint(
                hyperparam=float(row["hyperparam"]),
                e_train=float(row["e_train"]),
                e_gen=float(row["e_gen"]),
                e_train_std=float(row["e_train_std"]),
                e_gen_std=float(row["e_gen_std"]),
                valid=row["valid"] == "1",
                iterations=float(row["iterations"]),
            ))
    return list(groups.values())


CT_FIELDS = ["method", "K", "mse_mean", "mse_std", "best_hyperparam"]


def write_ct_csv(path, ct_results) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CT_FIELDS)
    for r in ct_results:
        writer.writerow([r.method, r.k, _fmt(r.mse_mean), _fmt(r.mse_std),
                         "" if r.best_hyperparam is None else _fmt(r.best_hyperparam)])
    Path(path).write_text(buf.getvalue())


def read_ct_csv(path) -> list[CtResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            h = row["best_hyperparam"]
            out.append(CtResult(row["method"], int(row["K"]), float(row["mse_mean"]),
                                float(row["mse_std"]), float(h) if h else None))
    return out
