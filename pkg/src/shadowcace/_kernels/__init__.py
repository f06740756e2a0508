"""Hot GMM kernels over collapsed cells.

The compiled extension ``_ckernel`` is used when it was built; otherwise the
pure-Python ``_pykernel`` takes over. Non-logistic links always run on the
Python kernel.
"""

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKEND = "cython" if _ckernel is not None else "python"
_default = _ckernel if _ckernel is not None else _pykernel


def available_backends():
    return ("cython", "python") if _ckernel is not None else ("python",)


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"cython"``, ``"python"`` or the default)."""
    if name is None:
        return _default
    if name == "python":
        return _pykernel
    if name == "cython":
        if _ckernel is None:
            raise ImportError("compiled kernel is not built")
        return _ckernel
    raise ValueError(f"unknown kernel backend {name!r}")


def set_backend(name):
    """Switch the process-wide default backend."""
    global _default, BACKEND
    _default = get_backend(name)
    BACKEND = name


def for_link(link):
    """Kernel module and link argument for a :class:`LinkFunction`."""
    if link is None or link.name == "logistic":
        return _default, None
    return _pykernel, link
