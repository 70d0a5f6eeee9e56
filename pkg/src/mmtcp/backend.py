"""Engine backend selection.

The compiled engine is used when it was built; ``MMTCP_BACKEND=python``
forces the pure-Python one. Both produce identical results.
"""

from __future__ import annotations

import os

from . import engine as _py

try:
    from . import _cengine as _c
except ImportError:  # extension not built
    _c = None

BACKENDS = ("python", "cython")


def available() -> list[str]:
    return ["python"] + (["cython"] if _c is not None else [])


def default_backend() -> str:
    want = os.environ.get("MMTCP_BACKEND", "").strip().lower()
    if want == "python":
        return "python"
    if want == "cython":
        if _c is None:
            raise ImportError("MMTCP_BACKEND=cython but the compiled engine is not built")
        return "cython"
    if want:
        raise ValueError(f"unknown MMTCP_BACKEND {want!r}; choose from {BACKENDS}")
    return "cython" if _c is not None else "python"


def run_engine(spec: _py.EngineSpec, backend: str | None = None) -> _py.EngineResult:
    name = backend or default_backend()
    if name == "python":
        return _py.run_engine(spec)
    if name == "cython":
        if _c is None:
            raise ImportError("compiled engine is not available")
        return _c.run_engine(spec)
    raise ValueError(f"unknown backend {name!r}")
