"""Sentence VAE with a canvas-writing generative model (AUTR) and an LSTM
baseline, built on a small numpy autodiff core."""

import os

# AUTR_THREADS caps BLAS worker threads; it only takes effect if set before
# numpy is first imported.
if os.environ.get("AUTR_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["AUTR_THREADS"])

__version__ = "0.1.0"
