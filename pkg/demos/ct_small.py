"""Sparse-view reconstruction of a 64x64 phantom from 20 projection angles.

Compares filtered back-projection with pixel-space LASSO and the garrote and
writes the three reconstructions as PGM files next to the truth.

    python demos/ct_small.py [output_dir]
"""

import sys
from pathlib import Path

from sparseinv.data import shepp_logan, write_pgm
from sparseinv.experiments import CtTask
from sparseinv.operators import radon_operator
from sparseinv.optim import OptConfig
from sparseinv.solvers import LassoParams, SparseProblem, VgParams, solve

out = Path(sys.argv[1] if len(sys.argv) > 1 else "ct_demo")
out.mkdir(parents=True, exist_ok=True)

image = shepp_logan(64)
task = CtTask(image, 20)
opt = OptConfig(max_iters=3000)

recons = {"fbp": task.fbp()}
problem = SparseProblem(radon_operator(task.geometry), task.sinogram().ravel())
for name, params in (("lasso", LassoParams(0.1)), ("vg", VgParams(3.0))):
    sol = solve(problem, params, opt)
    recons[name] = sol.coeffs.reshape(image.shape) * task.fov
    print(f"{name}: {sol.iterations} iterations, stopped by {sol.stop_reason}")

write_pgm(out / "truth.pgm", image)
for name, recon in recons.items():
    print(f"{name:5s} MSE inside the field of view: {float(task.image_mse(recon)[0]):.2e}")
    write_pgm(out / f"{name}.pgm", recon.clip(0, 1))
print(f"images written to {out}/")
