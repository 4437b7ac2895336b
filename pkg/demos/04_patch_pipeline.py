"""Dense patch features on colour images.

Samples 8x8 patches from synthetic 32x32 colour images, whitens them, trains
a gaussian TIRBM with translation operators, then extracts quadrant-pooled
features for every image (4K dims) and fits a softmax classifier.

    python demos/04_patch_pipeline.py [tirbm|tiae|tiomp]
"""

import sys

import numpy as np

from tifl import classify
from tifl.experiments import patch_pipeline, synthetic_color_images

kind = sys.argv[1] if len(sys.argv) > 1 else "tirbm"
images, labels = synthetic_color_images(500, seed=0)
model, pre, feats = patch_pipeline(images, labels, model_kind=kind, K=16, epochs=3)
print(f"{kind}: features {feats.shape}")

order = np.random.default_rng(0).permutation(len(labels))
tr, te = order[:400], order[400:]
reg, _ = classify.cross_validate(feats[tr], labels[tr], (1e-3, 1e-2, 1e-1), folds=3)
clf = classify.fit(feats[tr], labels[tr], reg)
acc, _ = classify.evaluate(clf, feats[te], labels[te])
print(f"held-out accuracy {acc:.3f} (reg {reg:g}, chance 0.100)")
