# coding: utf-8

# # Few-sample adaptation with a (lambda, eta) grid
#
# Retrain the source model on 50 labeled noisy images for every cell of the
# grid, score each candidate with `A_T + zeta * A_0` and keep the best.
# `A_T` is accuracy on the 50 retraining images, `A_0` on the clean test split.

# In[1]:

from driftlab import pipeline
from driftlab.config import load_config
from driftlab.data import DomainSpec
from driftlab.dira import HyperGrid, adapt_supervised
from driftlab.network import accuracy


# In[2]:

cfg = load_config()
prep = pipeline.prepare(cfg, seed=0, with_y=False)
target, s_t = pipeline.make_target(prep.test, DomainSpec("gaussian_noise", 5), 50, seed=0, index=0)
print("source clean", accuracy(prep.net, prep.test), "source noisy", accuracy(prep.net, target))


# In[3]:

grid = HyperGrid((0, 1, 10, 1e2, 1e3, 1e4), (1e-3, 1e-2, 1e-1))
report = adapt_supervised(prep.net, prep.anchor, prep.fisher, s_t, prep.test, grid, seed=0,
                          target_test=target, domain="gaussian_noise-5")
print(report.to_text())


# The `lam = 0` rows are plain fine-tuning. At the largest step size they fit
# the 50 noisy samples and forget a good part of the clean task. The selected
# regularized candidate gets most of the target gain without the forgetting.

# In[4]:

best = report.best
ft = next(c for c in report.candidates if c.lam == 0 and c.lr == best.lr)
print(f"finetune  A0 {ft.a_0:.3f} target {ft.target_accuracy:.3f}")
print(f"selected  A0 {best.a_0:.3f} target {best.target_accuracy:.3f} (lam={best.lam:g}, eta={best.lr:g})")
