"""From PNG files on disk to augmented training batches.

Covers the loading conventions (grayscale in [0, 1], masks re-binarized,
multiple mask files merged by union), mask dilation, the deterministic
train/val/test split with its manifest file, and the affine augmentation
used during training.  Everything runs against PNGs written to a temp
directory, in the same images/ + masks/ layout the CLI discovers.
"""

import os
import tempfile

import numpy as np
from PIL import Image

from defunet.data import (AugmentConfig, augment, batches, dilate_mask,
                          discover_dataset, load_sample, split_dataset)

rng = np.random.default_rng(11)

# ---------------------------------------------------------------------------
# 1. write a toy corpus: 6 images with ring-shaped masks
# ---------------------------------------------------------------------------
tmp = tempfile.TemporaryDirectory()
root = tmp.name
os.makedirs(os.path.join(root, "images"))
os.makedirs(os.path.join(root, "masks"))

yy, xx = np.mgrid[0:24, 0:24]
for i in range(6):
    cy, cx = rng.integers(8, 16, size=2)
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    mask = ((r2 > 9) & (r2 < 36)).astype(np.uint8) * 255
    image = (mask * 0.6 + rng.integers(0, 80, size=mask.shape)).clip(0, 255)
    Image.fromarray(image.astype(np.uint8)).save(
        os.path.join(root, "images", f"case{i}.png"))
    Image.fromarray(mask).save(os.path.join(root, "masks", f"case{i}.png"))

# ---------------------------------------------------------------------------
# 2. loading: images scale to [0, 1], masks snap back to {0, 1}, and both
#    resize to a common working resolution
# ---------------------------------------------------------------------------
sample = load_sample(
    os.path.join(root, "images", "case0.png"),
    [os.path.join(root, "masks", "case0.png")],
    size=16, sample_id="case0")
print("loaded tensors:", sample.image.shape, sample.image.dtype)
print("image range [%.3f, %.3f], mask values %s"
      % (sample.image.min(), sample.image.max(), np.unique(sample.mask)))

# ---------------------------------------------------------------------------
# 3. dilation thickens thin boundary annotations before training
# ---------------------------------------------------------------------------
dot = np.zeros((7, 7)); dot[3, 3] = 1.0
print()
print("single pixel dilated once with radius 1 -> %d pixels set"
      % int(dilate_mask(dot, radius=1).sum()))
print("dilated twice -> %d pixels set"
      % int(dilate_mask(dot, radius=1, iterations=2).sum()))

# ---------------------------------------------------------------------------
# 4. discovery + split: the manifest records every assignment and can be
#    written next to a run for exact reproduction
# ---------------------------------------------------------------------------
samples = discover_dataset(root, size=16)
manifest = split_dataset(samples, counts=(4, 1, 1), seed=0)
print()
print("discovered", len(samples), "samples from", root)
print("split sizes:", {s: len(manifest.ids(s)) for s in ("train", "val", "test")})

manifest_path = os.path.join(root, "manifest.txt")
manifest.write(manifest_path)
with open(manifest_path) as fh:
    print("manifest head:", fh.readline().strip(), "|", fh.readline().strip())

# ---------------------------------------------------------------------------
# 5. augmentation: small affine jitter plus horizontal flips; masks stay
#    strictly binary and ride the same transform as the image
# ---------------------------------------------------------------------------
cfg = AugmentConfig()      # rotation 10 deg, shift 10%, zoom 10%, flip 50%
arng = np.random.default_rng(2)
aug = augment(samples[0], arng, cfg)
print()
print("augmented image range [%.3f, %.3f], mask still %s"
      % (aug.image.min(), aug.image.max(), np.unique(aug.mask)))

# the training loop consumes shuffled, freshly augmented batches per epoch
by_id = {s.id: s for s in samples}
train = [by_id[i] for i in manifest.ids("train")]
shapes = [images.shape for images, _ in batches(train, 2, rng=arng, aug_cfg=cfg)]
print("epoch batches:", shapes)

tmp.cleanup()
