"""Hot image kernels with a compiled and a pure-numpy implementation.

The compiled path is used when numba imports cleanly, unless the environment
variable ``KINSEG_NUMBA`` is 0, false, no or off. Both modules expose the same
functions; ``numpy_impl`` is always importable for comparison.
"""
import os

from . import numpy_impl

_FUNCS = ("silhouette_forward", "silhouette_backward", "correlate_edge",
          "correlate_edge_adjoint", "max_filter_disc", "scatter_add")


def _load_backend():
    if os.environ.get("KINSEG_NUMBA", "1").strip().lower() in ("0", "false", "no", "off"):
        return "numpy", numpy_impl
    try:
        from . import numba_impl
    except ImportError:
        return "numpy", numpy_impl
    return "numba", numba_impl


BACKEND, _impl = _load_backend()

silhouette_forward = _impl.silhouette_forward
silhouette_backward = _impl.silhouette_backward
correlate_edge = _impl.correlate_edge
correlate_edge_adjoint = _impl.correlate_edge_adjoint
max_filter_disc = _impl.max_filter_disc
scatter_add = _impl.scatter_add


def implementation(name):
    """Return the kernel module for ``name`` ('numpy' or 'numba')."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        from . import numba_impl
        return numba_impl
    raise ValueError(f"unknown kernel backend {name!r}")
