"""Backend dispatch for the fused numeric kernels.

The compiled extension is preferred when it imported cleanly; the numpy
implementation is always available as a fallback. ``DGA_PURE_PY=1`` in
the environment forces the fallback, and :func:`set_backend` switches at
runtime (used by the equivalence tests and the benchmark).
"""

import os

from . import kernels_numpy

_KERNEL_NAMES = (
    "softmax_fwd",
    "softmax_bwd",
    "lstm_gates_fwd",
    "lstm_gates_bwd",
    "pair_score_fwd",
    "pair_score_bwd",
    "edge_prop_fwd",
    "edge_prop_bwd",
    "blend_fwd",
    "blend_bwd",
    "l2norm_rows_fwd",
    "l2norm_rows_bwd",
)

_fastcore = None
if os.environ.get("DGA_PURE_PY", "") != "1":
    try:
        from . import _fastcore  # type: ignore[attr-defined]
    except ImportError:
        _fastcore = None

_active = _fastcore if _fastcore is not None else kernels_numpy


def available_backends():
    names = ["numpy"]
    if _fastcore is not None:
        names.append("compiled")
    return names


def backend_name():
    """Name of the backend currently serving kernel calls."""
    return _active.name


def set_backend(name):
    """Switch kernel implementations at runtime.

    ``name`` is ``"numpy"`` or ``"compiled"``; asking for the compiled
    backend when the extension failed to build raises ``ValueError``.
    """
    global _active
    if name == "numpy":
        _active = kernels_numpy
    elif name == "compiled":
        if _fastcore is None:
            raise ValueError("compiled backend is not available")
        _active = _fastcore
    else:
        raise ValueError(f"unknown backend {name!r}")
    for fn in _KERNEL_NAMES:
        globals()[fn] = getattr(_active, fn)
    return _active.name


for _fn in _KERNEL_NAMES:
    globals()[_fn] = getattr(_active, _fn)
del _fn
