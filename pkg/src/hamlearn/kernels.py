"""Backend selection for the numeric kernels.

The compiled ``_ckernels`` extension is used when it has been built; the
numpy versions in ``_pykernels`` are used otherwise, or when the environment
variable ``HAMLEARN_PURE_PYTHON`` is set to a non-empty value other than ``0``.
"""

import os

from . import _pykernels

_force_pure = os.environ.get("HAMLEARN_PURE_PYTHON", "") not in ("", "0")

if _force_pure:
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

matvec = _impl.matvec
rmatvec = _impl.rmatvec
outer = _impl.outer
tanh = _impl.tanh
tanh_vjp = _impl.tanh_vjp
relu = _impl.relu
relu_vjp = _impl.relu_vjp
softmax = _impl.softmax
softmax_xent = _impl.softmax_xent


def compiled_available() -> bool:
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


__all__ = [
    "BACKEND",
    "compiled_available",
    "matvec",
    "rmatvec",
    "outer",
    "tanh",
    "tanh_vjp",
    "relu",
    "relu_vjp",
    "softmax",
    "softmax_xent",
]
