"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback in ``_kernels_py`` is used.  Set ``BAEPRIOR_KERNELS=python`` to
force the fallback (the test suite checks both agree).
"""
import os

from . import _kernels_py

_FORCE_PYTHON = os.environ.get("BAEPRIOR_KERNELS", "").lower() == "python"

if _FORCE_PYTHON:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
    else:
        BACKEND = "cython"

cb_log_norm_const = _impl.cb_log_norm_const
cb_log_norm_const_grad = _impl.cb_log_norm_const_grad
cb_logpdf_and_grad = _impl.cb_logpdf_and_grad
cb_icdf_and_grad = _impl.cb_icdf_and_grad
sghmc_adapt = _impl.sghmc_adapt
sghmc_update = _impl.sghmc_update

HALF_BRANCH = _kernels_py.HALF_BRANCH
VHAT_FLOOR = _kernels_py.VHAT_FLOOR


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
