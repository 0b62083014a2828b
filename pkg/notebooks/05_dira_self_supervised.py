# coding: utf-8

# # Self-supervised adaptation through a rotation head
#
# The network is split after layer k. The trunk feeds the original classifier
# head and a small head that predicts which quarter turn was applied. Target
# images need no labels: rotate them, train trunk + rotation head under the
# EWC penalty, and leave the classifier head untouched.

# In[1]:

import numpy as np

from driftlab import pipeline
from driftlab.config import load_config
from driftlab.data import DomainSpec
from driftlab.dira_ss import adapt_self_supervised, main_accuracy, make_rotation_batch, rotation_accuracy


# In[2]:

cfg = load_config()
prep = pipeline.prepare(cfg, seed=0)
y = prep.y
print("k =", y.k, "main clean", main_accuracy(y, prep.test),
      "rotation clean", rotation_accuracy(y, prep.test.images, seed=0))


# In[3]:

batch = make_rotation_batch(prep.test.images[:8], seed=1)
print(batch.rot_labels)


# Only the images go in. Passing the labeled dataset itself is refused.

# In[4]:

target, s_t = pipeline.make_target(prep.test, DomainSpec("gaussian_noise", 5), 100, seed=0, index=0)
report = adapt_self_supervised(y, prep.y_anchor, prep.y_fisher, s_t.images, prep.test,
                               cfg.hyper_grid(), seed=0, target_test=target)
adapted = y.with_trainable(report.best.params)
print("main head unchanged:", all(np.array_equal(a, b) for a, b in zip(y.main_params, adapted.main_params)))
print("main-head noisy accuracy", main_accuracy(y, target), "->", main_accuracy(adapted, target))
print("rotation accuracy on the target samples", rotation_accuracy(adapted, s_t.images, seed=1))
