"""Command-line entry point.

    sparseinv run {resample,denoise,ct,all} [options]
    sparseinv plot RESULTS_DIR
    sparseinv gallery [options]
    sparseinv print-config {resample,denoise,ct,all} [options]

Results go to ``--output-dir``, else ``$SPARSEINV_OUTPUT_DIR``, else
``./results``. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .data import (
    FormatError,
    ImageSpec,
    SignalSpec,
    ingest_image,
    ingest_wav,
    shepp_logan,
    synth_signal,
    write_pgm,
)
from .experiments import (
    CtTask,
    ExperimentConfig,
    SIGNAL_EXPERIMENTS,
    _solve_rows,
    config_hash,
    mge_table,
    preset,
    read_ct_csv,
    read_sweep_csv,
    run_ct_experiment,
    run_denoising_experiment,
    run_resampling_experiment,
    write_ct_csv,
    write_sweep_csv,
)
from .optim import OptConfig
from .plotting import emit_plots

log = logging.getLogger("sparseinv")

OUTPUT_ENV = "SPARSEINV_OUTPUT_DIR"
EXPERIMENTS = ("resample", "denoise", "ct")
GALLERY_NAMES = ("truth", "fbp", "lasso", "vg", "diff_fbp", "diff_lasso", "diff_vg", "sinogram")


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


class _FloatList(argparse.Action):
    """Accepts ``1,2,3``, ``1 2 3`` or ``=-1,-2``."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, tuple(v for part in values for v in part))


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("experiment", choices=EXPERIMENTS + ("all",))
    p.add_argument("--dataset", help="synthetic | wav:PATH | shepp-logan | image:PATH")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk")
    p.add_argument("--trials", type=int)
    p.add_argument("--grid-size", type=int)
    lists = dict(type=_floats, nargs="+", action=_FloatList)
    p.add_argument("--lasso-grid", help="lambda values", **lists)
    p.add_argument("--vg-grid", help="gamma values", **lists)
    p.add_argument("--levels", help="bottleneck values (R, alpha or K)", **lists)
    p.add_argument("--methods", type=lambda s: tuple(s.split(",")))
    p.add_argument("--image-size", type=int)
    p.add_argument("--detector-count", type=int)
    p.add_argument("--start-time", type=float, help="WAV segment start in seconds")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--batch", type=int, help="problems solved together per chunk")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, dest="base_seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseinv", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiments and write results")
    _add_config_args(run)
    run.add_argument("--output-dir")
    run.add_argument("--no-plots", action="store_true")
    run.add_argument("--gallery", action="store_true", help="also write CT reconstruction images")
    run.add_argument("--print-config", action="store_true",
                     help="print the resolved configuration and exit")

    plot = sub.add_parser("plot", help="re-plot SVG panels from result CSVs")
    plot.add_argument("results_dir")
    plot.add_argument("--output-dir")

    gal = sub.add_parser("gallery", help="write CT reconstructions as PGM images")
    gal.add_argument("--dataset", default="shepp-logan")
    gal.add_argument("--scale", choices=("desk", "paper"), default="desk")
    gal.add_argument("--image-size", type=int)
    gal.add_argument("--k", type=int, default=40, help="number of projection angles")
    gal.add_argument("--lasso", type=float, help="lambda (default: best in a ct.csv, else 0.316)")
    gal.add_argument("--vg", type=float, help="gamma (default: best in a ct.csv, else 3)")
    gal.add_argument("--from-results", help="directory holding ct.csv to take best values from")
    gal.add_argument("--max-iters", type=int)
    gal.add_argument("--seed", type=int, default=0)
    gal.add_argument("--output-dir")

    pc = sub.add_parser("print-config", help="print the resolved configuration as JSON")
    _add_config_args(pc)
    return parser


# -- configuration ---------------------------------------------------------------


def _dataset_kind(dataset: str) -> str:
    if dataset in ("synthetic",) or dataset.startswith("wav:"):
        return "signal"
    if dataset in ("shepp-logan",) or dataset.startswith("image:"):
        return "image"
    raise UsageError(f"unknown dataset {dataset!r}; use synthetic, wav:PATH, shepp-logan or image:PATH")


def _check_dataset_path(dataset: str) -> None:
    if ":" in dataset:
        path = Path(dataset.split(":", 1)[1])
        if not path.is_file():
            raise UsageError(f"file not found: {path}")


def resolve_configs(args) -> list[ExperimentConfig]:
    """Expand presets and apply overrides; one config per experiment."""
    names = EXPERIMENTS if args.experiment == "all" else (args.experiment,)
    configs = []
    for name in names:
        dataset = args.dataset
        if dataset is not None:
            kind = _dataset_kind(dataset)
            wanted = "signal" if name in SIGNAL_EXPERIMENTS else "image"
            if kind != wanted:
                if args.experiment == "all":
                    dataset = None
                else:
                    raise UsageError(f"dataset {dataset!r} is not usable for the {name} experiment")
        if dataset is not None:
            _check_dataset_path(dataset)
        cfg = preset(name, args.scale, dataset)
        over = {}
        for key in ("trials", "grid_size", "lasso_grid", "vg_grid", "levels", "methods",
                    "image_size", "detector_count", "start_time", "workers", "base_seed"):
            val = getattr(args, key, None)
            if val is not None:
                over[key] = val
        if name == "ct" and "levels" in over:
            if any(v != int(v) or v < 1 for v in over["levels"]):
                raise UsageError("CT levels are angle counts and must be positive integers")
            over["levels"] = tuple(int(v) for v in over["levels"])
        if name == "resample" and "levels" in over:
            if any(not 0 < v < 1 for v in over["levels"]):
                raise UsageError("sampling ratios must lie in (0, 1)")
        opt_over = {}
        if args.max_iters is not None:
            opt_over["max_iters"] = args.max_iters
        if args.lr is not None:
            opt_over["initial_lr"] = args.lr
        if args.batch is not None:
            opt_over["batch"] = args.batch
        if opt_over:
            try:
                over["opt"] = replace(cfg.opt, **opt_over)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
        if "methods" in over and not set(over["methods"]) <= {"lasso", "vg"}:
            raise UsageError("methods must be chosen from lasso,vg")
        if over.get("trials", 1) < 1:
            raise UsageError("--trials must be at least 1")
        if over.get("grid_size", 1) < 1:
            raise UsageError("--grid-size must be at least 1")
        if over.get("workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        configs.append(cfg.with_(**over))
    return configs


def output_root(arg) -> Path:
    import os

    return Path(arg or os.environ.get(OUTPUT_ENV) or "results")


def load_signal(cfg: ExperimentConfig) -> np.ndarray:
    spec = SignalSpec(cfg.signal_length, cfg.sample_rate)
    if cfg.dataset == "synthetic":
        return synth_signal(spec)
    return ingest_wav(cfg.dataset.split(":", 1)[1], cfg.start_time, spec)


def load_image(dataset: str, size: int) -> np.ndarray:
    if dataset == "shepp-logan":
        return shepp_logan(size)
    return ingest_image(dataset.split(":", 1)[1], ImageSpec(size))


# -- commands ----------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _config_json(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    d["config_hash"] = config_hash(cfg)
    return d


def run_experiment(cfg: ExperimentConfig, out: Path, plots: bool = True,
                   gallery: bool = False) -> dict:
    """Run one configured experiment and write its result files to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ct_results = []
    if cfg.experiment == "ct":
        image = load_image(cfg.dataset, cfg.image_size)
        ct_results, sweeps = run_ct_experiment(image, cfg)
        write_ct_csv(out / "ct.csv", ct_results)
    else:
        signal = load_signal(cfg)
        runner = run_resampling_experiment if cfg.experiment == "resample" else run_denoising_experiment
        sweeps = runner(signal, cfg)
    write_sweep_csv(out / "sweeps.csv", sweeps)
    summary = {
        "config": _config_json(cfg),
        "mge": mge_table(sweeps),
        "ct": [{"method": r.method, "K": r.k, "mse_mean": r.mse_mean, "mse_std": r.mse_std,
                "best_hyperparam": r.best_hyperparam} for r in ct_results],
        "seeds": (cfg.base_seed + np.arange(cfg.trials)).tolist(),
        "selection": "hyperparameters are selected and reported on the same trials",
    }
    (out / "summary.json").write_text(_dump(summary))
    files = ["sweeps.csv", "summary.json"] + (["ct.csv"] if ct_results else [])
    if plots:
        files += [p.name for p in emit_plots(sweeps, ct_results, out)]
    if gallery and ct_results:
        k = 40 if 40 in cfg.levels else int(cfg.levels[len(cfg.levels) // 2])
        best = {r.method: r.best_hyperparam for r in ct_results if r.k == k}
        files += [p.name for p in write_gallery(
            load_image(cfg.dataset, cfg.image_size), k, best.get("lasso"), best.get("vg"),
            cfg.opt, cfg.base_seed, out / "gallery", cfg.detector_count)]
    wall = time.perf_counter() - t0
    manifest = {
        "config": _config_json(cfg),
        "seeds": summary["seeds"],
        "files": sorted(files),
        "versions": {"sparseinv": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_time_s": round(wall, 3),
    }
    (out / "manifest.json").write_text(_dump(manifest))
    log.info("%s finished in %.1fs; results in %s", cfg.experiment, wall, out)
    return summary


def write_gallery(image, k: int, lam, gamma, opt: OptConfig, seed: int, out: Path,
                  detector_count=None) -> list[Path]:
    """Truth, FBP/LASSO/VG reconstructions, their absolute errors and the
    sinogram as 8-bit PGM files. A method without a hyperparameter is skipped."""
    out.mkdir(parents=True, exist_ok=True)
    task = CtTask(image, k, detector_count)
    recon = {"fbp": task.fbp() * task.fov}
    for method, h in (("lasso", lam), ("vg", gamma)):
        if h is None:
            log.warning("no %s hyperparameter for K=%d; image skipped", method, k)
            continue
        *_, coeffs = _solve_rows(task, method, [h], [seed], opt)
        recon[method] = coeffs[0].reshape(image.shape) * task.fov
    sino = task.sinogram()
    images = {"truth": task.image, "sinogram": sino / sino.max() if sino.max() > 0 else sino}
    for method, r in recon.items():
        images[method] = r
        images[f"diff_{method}"] = np.abs(task.image - r)
    written = []
    for name in GALLERY_NAMES:
        if name in images:
            path = out / f"{name}_K{k}.pgm"
            write_pgm(path, images[name])
            written.append(path)
    return written


def _cmd_run(args) -> int:
    configs = resolve_configs(args)
    if args.print_config:
        sys.stdout.write(_dump([_config_json(c) for c in configs] if len(configs) > 1
                               else _config_json(configs[0])))
        return 0
    root = output_root(args.output_dir)
    for cfg in configs:
        out = root / cfg.experiment if len(configs) > 1 else root
        run_experiment(cfg, out, plots=not args.no_plots, gallery=args.gallery)
    return 0


def _cmd_print_config(args) -> int:
    args.print_config = True
    args.output_dir = None
    args.no_plots = args.gallery = False
    return _cmd_run(args)


def _cmd_plot(args) -> int:
    src = Path(args.results_dir)
    sweeps_path, ct_path = src / "sweeps.csv", src / "ct.csv"
    if not sweeps_path.is_file() and not ct_path.is_file():
        raise UsageError(f"file not found: {sweeps_path}")
    sweeps = read_sweep_csv(sweeps_path) if sweeps_path.is_file() else []
    ct_results = read_ct_csv(ct_path) if ct_path.is_file() else []
    out = Path(args.output_dir) if args.output_dir else src
    for p in emit_plots(sweeps, ct_results, out):
        print(p)
    return 0


def _cmd_gallery(args) -> int:
    if _dataset_kind(args.dataset) != "image":
        raise UsageError(f"dataset {args.dataset!r} is not an image dataset")
    _check_dataset_path(args.dataset)
    if args.k < 1:
        raise UsageError("--k must be positive")
    cfg = preset("ct", args.scale, args.dataset)
    size = args.image_size or cfg.image_size
    lam, gamma = args.lasso, args.vg
    if args.from_results:
        path = Path(args.from_results) / "ct.csv"
        if not path.is_file():
            raise UsageError(f"file not found: {path}")
        best = {r.method: r.best_hyperparam for r in read_ct_csv(path) if r.k == args.k}
        lam = best.get("lasso") if lam is None else lam
        gamma = best.get("vg") if gamma is None else gamma
    lam = 0.316 if lam is None else lam
    gamma = 3.0 if gamma is None else gamma
    opt = cfg.opt if args.max_iters is None else replace(cfg.opt, max_iters=args.max_iters)
    out = output_root(args.output_dir) / "gallery"
    for p in write_gallery(load_image(args.dataset, size), args.k, lam, gamma, opt, args.seed, out):
        print(p)
    return 0


COMMANDS = {"run": _cmd_run, "plot": _cmd_plot, "gallery": _cmd_gallery,
            "print-config": _cmd_print_config}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sparseinv: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, FormatError) as exc:
        print(f"sparseinv: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"sparseinv: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
