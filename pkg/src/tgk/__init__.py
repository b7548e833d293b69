"""Temporal-graph toolkit: hierarchical video graphs, task heads, and
prototype-based cross-task transfer, all on numpy with tape autodiff."""

import os as _os

# honor the thread cap before any numerics library initializes its pool
_threads = _os.environ.get("TGK_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .autodiff import GradientTape, Tensor, backward

__all__ = ["GradientTape", "Tensor", "backward", "__version__"]
