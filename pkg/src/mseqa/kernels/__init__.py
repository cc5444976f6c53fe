"""Hot numerical kernels with a compiled core and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy versions in ``_pykernels`` are selected.  Both expose the same
functions and agree to floating-point rounding.

The masked softmax has no compiled version: numpy's vectorised ``exp`` is
faster than a scalar libm loop, so both backends share the numpy code.
"""

from __future__ import annotations

from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not compiled
    _ckernels = None

_impl: ModuleType = _ckernels if _ckernels is not None else _pykernels

__all__ = [
    "backend", "available_backends", "use_backend",
    "layer_norm", "layer_norm_backward", "gelu", "gelu_backward",
    "masked_softmax", "softmax_backward", "best_span", "best_alignment",
]


def backend() -> str:
    return "cython" if _impl is _ckernels else "python"


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def use_backend(name: str) -> str:
    """Switch the active backend; returns the previous one."""
    global _impl
    previous = backend()
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous


def layer_norm(x, scale, shift, eps):
    return _impl.layer_norm(x, scale, shift, eps)


def layer_norm_backward(dy, xhat, rstd, scale):
    return _impl.layer_norm_backward(dy, xhat, rstd, scale)


def gelu(x):
    return _impl.gelu(x)


def gelu_backward(dy, x):
    return _impl.gelu_backward(dy, x)


def masked_softmax(scores, key_mask):
    return _pykernels.masked_softmax(scores, key_mask)


def softmax_backward(dp, p):
    return _impl.softmax_backward(dp, p)


def best_span(logp_start, logp_end, valid, max_len):
    return _impl.best_span(logp_start, logp_end, valid, max_len)


def best_alignment(scores):
    return _impl.best_alignment(scores)
