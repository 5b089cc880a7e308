"""Backend selection for the hot loops.

The Cython extension is used when it was built; otherwise (or when
``LPGSTAR_BACKEND=numpy`` or ``python`` is set) the numpy implementation is
used. Both expose ``theta_table`` and ``cone_table`` with the same signatures.
"""
import os

import numpy as np

from . import _numpy

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"numpy": _numpy}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("LPGSTAR_BACKEND", "").strip().lower()
if _requested == "python":
    _requested = "numpy"
if _requested and _requested not in BACKENDS:
    raise ImportError(f"LPGSTAR_BACKEND={_requested!r} is not available; have {sorted(BACKENDS)}")
BACKEND = _requested or ("cython" if "cython" in BACKENDS else "numpy")


def _contig(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def theta_table(dyz, fz, nodes, alpha, m, scale, backend=None):
    return BACKENDS[backend or BACKEND].theta_table(
        _contig(dyz), _contig(fz), _contig(nodes), float(alpha), float(m), float(scale))


def cone_table(dxy, wy, sq, nodes, m, mlam, backend=None):
    return BACKENDS[backend or BACKEND].cone_table(
        _contig(dxy), _contig(wy), _contig(sq), _contig(nodes), float(m), float(mlam))
