"""Cooperative energy-based / translator pairs with cycle consistency.

Two generator networks map between domains X and Y; an energy model per
domain refines their outputs with short-run Langevin dynamics, and each
generator learns from its own refined outputs while a cycle loss keeps the
round trip near the identity.
"""

import os as _os

# COOPFORGE_THREADS caps BLAS worker threads; the single-thread default keeps
# reductions deterministic. Must be set before numpy first loads, which is why
# it lives ahead of the imports below. Explicitly set *_NUM_THREADS vars win.
_threads = _os.environ.get("COOPFORGE_THREADS", "1")
if not (_threads.isdigit() and int(_threads) > 0):
    _threads = "1"
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

from .tensor import Tensor, Graph, backward, grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "Graph", "backward", "grad_check", "__version__"]
