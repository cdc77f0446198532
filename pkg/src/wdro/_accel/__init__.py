"""Backend selection for the training kernels.

Two implementations of the same small kernel API live here:

* ``_kernels`` -- Cython extension with per-sample C loops, built at
  install time when a compiler is available;
* ``_fallback`` -- vectorized numpy, always available.

The compiled module is preferred when importable.  Set the environment
variable ``WDRO_BACKEND`` to ``numpy`` or ``cython`` to force a choice;
forcing ``cython`` raises if the extension did not build.

Each backend is bit-deterministic run to run.  The two backends agree to
floating-point accuracy but not bit for bit (reduction orders differ), so
pick one backend when byte-stable output files matter.
"""

from __future__ import annotations

import os

from . import _fallback

_ACTIVATION_CODES = {"tanh": _fallback.ACT_TANH, "leaky_relu": _fallback.ACT_LEAKY}

_requested = os.environ.get("WDRO_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "cython"):
    raise ImportError(
        f"WDRO_BACKEND={_requested!r} not recognized; use 'numpy' or 'cython'"
    )

_impl = None
if _requested != "numpy":
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "WDRO_BACKEND=cython but the compiled extension is not "
                "available; reinstall with a C compiler or unset the variable"
            )
        _impl = None

if _impl is None:
    _impl = _fallback
    BACKEND = "numpy"
else:
    BACKEND = "cython"


def _split_params(params, hint):
    widths = hint.widths
    n_layers = len(widths) - 1
    if len(params) != 2 * n_layers:
        raise ValueError(
            f"expected {2 * n_layers} parameter arrays for widths {widths}, "
            f"got {len(params)}"
        )
    ws, bs = [], []
    import numpy as np

    for layer in range(n_layers):
        w = np.ascontiguousarray(params[2 * layer], dtype=np.float64)
        b = np.ascontiguousarray(params[2 * layer + 1], dtype=np.float64)
        if w.shape != (widths[layer + 1], widths[layer]):
            raise ValueError(
                f"weight {layer} has shape {w.shape}, expected "
                f"{(widths[layer + 1], widths[layer])}"
            )
        if b.shape != (widths[layer + 1],):
            raise ValueError(
                f"bias {layer} has shape {b.shape}, expected {(widths[layer + 1],)}"
            )
        ws.append(w)
        bs.append(b)
    return ws, bs


def _act_code(hint):
    try:
        return _ACTIVATION_CODES[hint.activation]
    except KeyError:
        raise ValueError(f"no kernel for activation {hint.activation!r}") from None


def penalized_objective(params, hint, x, y, lam):
    """Batch objective ``mean loss + lam * mean squared input-gradient norm``.

    Returns ``(objective, mean_loss, mean_penalty, grads)`` where ``grads``
    matches the layout of ``params``.
    """
    import numpy as np

    ws, bs = _split_params(params, hint)
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _impl.penalized_objective(ws, bs, _act_code(hint), hint.leaky_slope, x, y, float(lam))


def forward_logits(params, hint, x):
    import numpy as np

    ws, bs = _split_params(params, hint)
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _impl.forward_logits(ws, bs, _act_code(hint), hint.leaky_slope, x)


def input_gradients(params, hint, x, y):
    import numpy as np

    ws, bs = _split_params(params, hint)
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _impl.input_gradients(ws, bs, _act_code(hint), hint.leaky_slope, x, y)
