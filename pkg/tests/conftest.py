"""Shared test configuration.

BLAS thread pools are pinned to one thread before numpy loads anywhere, so
timing-sensitive tests measure single-threaded arithmetic and trained models
are reproducible bit-for-bit.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")
