"""Hot-path kernels for explicit-backend rendering and fitting.

Two interchangeable backends implement the same contracts:

* ``_native`` — compiled extension, used by default when importable;
* ``reference`` — pure numpy fallback, also the float64 oracle in tests.

Set ``MSIFIELD_FORCE_REFERENCE=1`` to skip the compiled module.  All
kernels are single-threaded with a fixed reduction order, so results are
bit-reproducible for a given backend.
"""

import os

from . import reference

if os.environ.get("MSIFIELD_FORCE_REFERENCE", "") == "1":
    _impl = reference
    backend_name = "reference"
else:
    try:
        from . import _native as _impl
        backend_name = "native"
    except ImportError:
        _impl = reference
        backend_name = "reference"

render_batch = _impl.render_batch
train_step = _impl.train_step
adam_step_dense = _impl.adam_step_dense


def get_backend(name: str):
    """Return the kernel module for 'native' or 'reference' (for benchmarks/tests)."""
    if name == "reference":
        return reference
    if name == "native":
        from . import _native
        return _native
    raise ValueError(f"unknown kernel backend {name!r}")
