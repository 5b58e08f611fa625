"""Hot loops with a compiled backend and a pure-Python fallback.

The compiled module is used when it imports cleanly; set ``RDFC_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

py_segment_graph = _pykernels.segment_graph

try:
    if os.environ.get("RDFC_PURE_PYTHON") == "1":
        raise ImportError("pure-Python backend forced")
    from ._ckernels import segment_graph as c_segment_graph
except ImportError:
    c_segment_graph = None

if c_segment_graph is not None:
    segment_graph = c_segment_graph
    BACKEND = "cython"
else:
    segment_graph = py_segment_graph
    BACKEND = "python"

__all__ = ["segment_graph", "py_segment_graph", "c_segment_graph", "BACKEND"]
