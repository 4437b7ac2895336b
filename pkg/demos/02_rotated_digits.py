"""Sparse RBM versus transformation-invariant RBM on rotated digits.

Generates rotated digits from the bundled 5k MNIST subset (needs the
``digits`` extra), trains both models under the same budget and prints the
test error of a softmax classifier on the pooled features.  Filters of the
invariant model go to ``tirbm_filters.pgm``.

    python demos/02_rotated_digits.py [epochs]
"""

import logging
import sys
from dataclasses import replace

from tifl import checkpoint, viz
from tifl.experiments import DigitExperiment, run_digit_experiment, DIGIT_TRAIN_CONFIG

logging.basicConfig(level=logging.INFO, format="%(message)s")
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else DIGIT_TRAIN_CONFIG.epochs

cfg = replace(DIGIT_TRAIN_CONFIG, epochs=epochs)
results = run_digit_experiment(DigitExperiment("rot", cfg=cfg))
for label, res in results.items():
    print(f"{label:6s} S={res['S']:2d}  test error {res['error']:.3f}  "
          f"mean pooled activation {res['mean_pooled_activation']:.3f}")
ratio = results["TIRBM"]["error"] / results["RBM"]["error"]
print(f"error ratio TIRBM / RBM = {ratio:.2f}")

checkpoint.save("tirbm_rot.tifl", results["TIRBM"]["model"])
viz.export_filter_grid("tirbm_rot.tifl", "tirbm_filters.pgm")
print("wrote tirbm_rot.tifl and tirbm_filters.pgm")
