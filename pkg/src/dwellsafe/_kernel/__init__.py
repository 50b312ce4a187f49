"""Backend selection for the hot kernels.

At import time we try the compiled extension; if it is missing (or the
``DWELLSAFE_PURE`` environment variable is set to a non-empty value) the
package falls back to the pure NumPy implementations. Call
:func:`backend_name` to see which one is active.
"""

from __future__ import annotations

import os

compiled = None
if not os.environ.get("DWELLSAFE_PURE"):
    try:
        from . import _core as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

HAVE_COMPILED = compiled is not None


def backend_name() -> str:
    return "compiled" if HAVE_COMPILED else "pure-python"


def tb_propagate(mu, t0, t1, y0, rtol, atol, max_step):
    """Two-body propagation, compiled when available."""
    if HAVE_COMPILED:
        return compiled.tb_propagate(mu, t0, t1, y0, rtol, atol, max_step)
    return _pure_propagate(mu, t0, (t1,), y0, rtol, atol, max_step)[-1]


def tb_propagate_path(mu, t0, ts, y0, rtol, atol, max_step):
    """Chained two-body propagation through monotone output times."""
    if HAVE_COMPILED:
        return compiled.tb_propagate_path(mu, t0, ts, y0, rtol, atol, max_step)
    return _pure_propagate(mu, t0, ts, y0, rtol, atol, max_step)


def _pure_propagate(mu, t0, ts, y0, rtol, atol, max_step):
    from ..integrate import IntegratorConfig, dp45_path

    cfg = IntegratorConfig(atol=atol, rtol=rtol, max_step=max_step)

    def rhs(t, y):
        import numpy as np

        r3 = (y[0] * y[0] + y[1] * y[1]) ** 1.5
        return np.array([y[2], y[3], -mu * y[0] / r3, -mu * y[1] / r3])

    return dp45_path(rhs, t0, ts, y0, cfg)
