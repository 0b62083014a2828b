# coding: utf-8

# # Glyph domains, corruptions and quarter turns
#
# The source domain is clean glyphs. Target domains are corrupted copies of
# the source *test* split, at severities 1 to 5.

# In[1]:

import numpy as np

from driftlab.data import (CORRUPTIONS, DomainSpec, GlyphSpec, corrupt, generate_glyphs, load_dataset,
                           load_images, prototypes, rotate_quarter, sample_target_set, save_dataset)


# In[2]:

train_set, test_set = generate_glyphs(GlyphSpec(samples_per_class=100, seed=0))
print(len(train_set), len(test_set), np.bincount(test_set.labels))


# A quick ASCII look at the prototypes.

# In[3]:

def show(img):
    ramp = " .:-=+*#%@"
    for row in img:
        print("".join(ramp[int(v * (len(ramp) - 1))] for v in row))

for name, proto in zip(GlyphSpec().glyphs, prototypes(GlyphSpec())):
    print(name)
    show(proto)


# Every corruption at severity 5 on the same image.

# In[4]:

img = test_set.subset([0])
for kind in CORRUPTIONS[1:]:
    print(kind)
    show(corrupt(img, DomainSpec(kind, 5), seed=1).images[0])


# ## Quarter turns
#
# Counter-clockwise, exact pixel permutations. Four turns are the identity.

# In[5]:

x = np.array([[1, 2], [3, 4]])
print(rotate_quarter(x, 1))
print(np.array_equal(rotate_quarter(rotate_quarter(x, 1), 3), x))


# ## Sampling a few target images and the binary container
#
# Target samples are drawn uniformly without class balancing.

# In[6]:

target = corrupt(test_set, DomainSpec("gaussian_noise", 5), seed=2)
s_t = sample_target_set(target, 20, seed=3)
print(np.bincount(s_t.labels, minlength=6))

save_dataset(s_t, "/tmp/samples.dlb")
save_dataset(s_t, "/tmp/samples.images.dlb", include_labels=False)
print(load_dataset("/tmp/samples.dlb").labels[:5], load_images("/tmp/samples.images.dlb").shape)
