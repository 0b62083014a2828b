# coding: utf-8

# # All corruptions, all methods
#
# The sweep runs Source, fine-tuning, the regularized grid and the rotation
# variant on every configured corruption and collects target-test accuracy
# into one table. The same thing is available as `driftlab sweep`.

# In[1]:

from driftlab import pipeline
from driftlab.config import load_config


# In[2]:

cfg = load_config()
result = pipeline.run_sweep(cfg, seed=0, log=print)
print(result.table.to_text())


# ## Which layers move?
#
# Population variance of every parameter across the six adapted models,
# averaged per layer (weights and biases pooled).

# In[3]:

print(result.variance.to_text())
first, second = result.variance.half_means()
print(f"input-side half {first:.2e}  output-side half {second:.2e}")


# In[4]:

written = pipeline.write_sweep(result, "/tmp/driftlab-sweep", cfg)
print(len(written), "files, e.g.", written[:3])
