"""Fill in 70% missing samples of the two-tone signal with LASSO and the garrote.

Prints training and generalization error for a few regularization strengths,
showing the U-shaped generalization curve on a single mask.

    python demos/resample_one_mask.py
"""

from sparseinv.data import sample_mask, synth_signal
from sparseinv.experiments import resampling_trial
from sparseinv.optim import OptConfig

signal = synth_signal()
mask = sample_mask(signal.size, 0.3, seed=0)
opt = OptConfig(max_iters=5000)

print("method  hyper    e_train  e_gen")
for lam in (0.001, 0.01, 0.1, 1.0, 3.0):
    tr, gen = resampling_trial(signal, mask, "lasso", lam, opt)
    print(f"lasso   {lam:<7g}  {tr:.4f}   {gen:.4f}")
for gamma in (-2.0, -6.0, -10.0, -14.0):
    tr, gen = resampling_trial(signal, mask, "vg", gamma, opt)
    print(f"vg      {gamma:<7g}  {tr:.4f}   {gen:.4f}")
