"""Backend selection for the element kernels.

The compiled ``_core`` extension is used when importable; otherwise, or when
the environment variable ``MCFEM_BACKEND=python`` is set, the numpy
implementation in ``_kernels_py`` is used. Both expose
``element_matrices(xe, N, dN, w)``, ``element_ax(xe, dN, w)`` and
``element_mass_ax(xe, N, dN, w)`` and the block solver ``pcg``.
"""

import os

from . import _kernels_py

python_backend = _kernels_py

if os.environ.get("MCFEM_BACKEND", "").lower() == "python":
    compiled_backend = None
else:
    try:
        from . import _core as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

element_matrices = backend.element_matrices
element_ax = backend.element_ax
element_mass_ax = backend.element_mass_ax
pcg = backend.pcg
