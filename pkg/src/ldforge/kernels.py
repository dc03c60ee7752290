"""Hot loops: the compiled extension when it is built, otherwise the numpy versions."""
import os

from . import _kernels_py

try:
    if os.environ.get("LDFORGE_PURE_PYTHON"):
        raise ImportError
    from . import _kernels as _impl
    COMPILED = True
except ImportError:
    _impl = _kernels_py
    COMPILED = False

torus_mode_sum = _impl.torus_mode_sum
rk4_linear = _impl.rk4_linear
cotan_laplacian = _impl.cotan_laplacian
