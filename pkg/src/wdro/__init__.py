"""wdro: gradient-penalty surrogates for local worst-case risk.

The package has three layers:

* exact machinery for small instances — discrete measures, Wasserstein
  distances, and a grid oracle for the worst-case risk over a Wasserstein
  ball, with a primal linear-program cross-check;
* a self-contained reverse-mode differentiation engine (first and second
  order) that powers both the oracle studies and training;
* a desk-scale training loop with the squared-gradient-norm penalty,
  Mixup, and a CLI for robustness experiments.
"""

__version__ = "0.1.0"
