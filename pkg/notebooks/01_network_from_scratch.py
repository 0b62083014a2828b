# coding: utf-8

# # A dense network in plain numpy
#
# The classifier is a stack of dense layers with ReLU in between and a linear
# output. Parameters live in a flat list `[W1, b1, W2, b2, ...]` where each
# `W` has shape `(in, out)`, so a layer is just `act(x @ W + b)`.

# In[1]:

import numpy as np

from driftlab.network import Network, accuracy, backward, cross_entropy, forward, train
from driftlab.data import GlyphSpec, generate_glyphs


# In[2]:

net = Network.create([4, 8, 3], seed=0)
[p.shape for p in net.params]


# Zero weights give zero logits, and the loss of a uniform prediction over C
# classes is log C.

# In[3]:

x = np.random.default_rng(0).normal(size=(5, 4))
zeroed = net.with_params([np.zeros_like(p) for p in net.params])
print(forward(zeroed, x))
print(cross_entropy(forward(zeroed, x), [0, 1, 2, 0, 1]), np.log(3))


# ## Checking backprop against finite differences
#
# Nudge one weight up and down by `h` and compare the slope with the analytic
# gradient.

# In[4]:

labels = np.array([0, 2, 1, 1, 0])
_, grads = backward(net, x, labels)

h = 1e-5
W = net.params[0]
i, j = 2, 5
up = [p.copy() for p in net.params]; up[0][i, j] += h
down = [p.copy() for p in net.params]; down[0][i, j] -= h
numeric = (cross_entropy(forward(net.with_params(up), x), labels)
           - cross_entropy(forward(net.with_params(down), x), labels)) / (2 * h)
print(grads[0][i, j], numeric)


# ## Training on the glyph task
#
# Six stroke glyphs rendered at 16x16 with random shift, scale and intensity.

# In[5]:

train_set, test_set = generate_glyphs(GlyphSpec(seed=0))
model = train(Network.create([256, 256, 128, 64, 6], seed=1), train_set, epochs=30, lr=0.05, seed=2)
print("clean test accuracy", accuracy(model, test_set))
