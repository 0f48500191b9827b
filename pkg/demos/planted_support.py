"""Support recovery on small planted problems, checked against exhaustive search.

For each problem the brute-force l0 oracle gives the best support; the garrote
run reports its gates. Two-column supports sometimes end with every gate
closed: that end point is a local minimum of the free energy, far above the
value at the planted support.

    python demos/planted_support.py
"""

import numpy as np

from sparseinv.operators import MatrixOperator
from sparseinv.solvers import SparseProblem, VgParams, VgState, brute_force_l0, solve, vg_free_energy

rng = np.random.default_rng(4)
params = VgParams(-5.0)
for i in range(10):
    k = 1 + i % 2
    a = rng.standard_normal((8, 10))
    w = np.zeros(10)
    support = np.sort(rng.choice(10, k, replace=False))
    w[support] = rng.choice([-1, 1], k) * rng.uniform(1.0, 2.0, k)
    p = SparseProblem(MatrixOperator(a), a @ w)
    oracle = brute_force_l0(p, k)[0]
    sol = solve(p, params)
    found = tuple(int(j) for j in np.flatnonzero(sol.m > 0.5))
    f_end = vg_free_energy(p, VgState(sol.w, np.log(sol.m / (1 - sol.m))), params)
    f_planted = vg_free_energy(p, VgState(w, np.where(w != 0, 20.0, -20.0)), params)
    print(f"k={k} oracle {oracle} garrote {found}  F end {f_end:8.2f}  F planted {f_planted:8.2f}"
          f"  ({sol.stop_reason} after {sol.iterations})")
