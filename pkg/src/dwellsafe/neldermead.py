"""Minimal Nelder-Mead simplex minimizer.

Written out rather than borrowed so the per-iteration overhead stays a few
microseconds: the impulse solver evaluates compiled objectives that cost
single-digit microseconds, and array/driver overhead in a general-purpose
minimizer would dominate the profile. Operates on plain float lists.
"""

from __future__ import annotations

from typing import Callable, Sequence

__all__ = ["nelder_mead"]

_REFLECT = 1.0
_EXPAND = 2.0
_CONTRACT = 0.5
_SHRINK = 0.5


def nelder_mead(
    f: Callable[[Sequence[float]], float],
    x0: Sequence[float],
    scale: float | Sequence[float] = 1.0,
    xatol: float = 1e-8,
    fatol: float = 1e-12,
    max_eval: int = 400,
) -> tuple[list[float], float, int]:
    """Minimize ``f`` from ``x0``; returns (x_best, f_best, n_evaluations).

    ``scale`` sets the initial simplex edge lengths. Terminates when the
    simplex collapses below ``xatol`` in every coordinate and the value
    spread falls below ``fatol``, or at the evaluation budget.
    """
    n = len(x0)
    if isinstance(scale, (int, float)):
        scale = [float(scale)] * n
    verts = [list(map(float, x0))]
    for i in range(n):
        v = list(verts[0])
        v[i] += scale[i] if scale[i] != 0.0 else 1.0
        verts.append(v)
    vals = [float(f(v)) for v in verts]
    n_eval = n + 1

    while n_eval < max_eval:
        order = sorted(range(n + 1), key=vals.__getitem__)
        verts = [verts[i] for i in order]
        vals = [vals[i] for i in order]
        spread_x = max(
            max(abs(verts[i][j] - verts[0][j]) for i in range(1, n + 1))
            for j in range(n)
        )
        if spread_x <= xatol and vals[-1] - vals[0] <= fatol:
            break

        centroid = [sum(verts[i][j] for i in range(n)) / n for j in range(n)]
        worst = verts[-1]
        refl = [centroid[j] + _REFLECT * (centroid[j] - worst[j]) for j in range(n)]
        f_refl = float(f(refl))
        n_eval += 1

        if f_refl < vals[0]:
            exp = [centroid[j] + _EXPAND * (centroid[j] - worst[j]) for j in range(n)]
            f_exp = float(f(exp))
            n_eval += 1
            if f_exp < f_refl:
                verts[-1], vals[-1] = exp, f_exp
            else:
                verts[-1], vals[-1] = refl, f_refl
        elif f_refl < vals[-2]:
            verts[-1], vals[-1] = refl, f_refl
        else:
            if f_refl < vals[-1]:
                # outside contraction
                cand = [
                    centroid[j] + _CONTRACT * (refl[j] - centroid[j]) for j in range(n)
                ]
                f_cand = float(f(cand))
                n_eval += 1
                accept = f_cand <= f_refl
            else:
                # inside contraction
                cand = [
                    centroid[j] - _CONTRACT * (centroid[j] - worst[j]) for j in range(n)
                ]
                f_cand = float(f(cand))
                n_eval += 1
                accept = f_cand < vals[-1]
            if accept:
                verts[-1], vals[-1] = cand, f_cand
            else:
                best = verts[0]
                for i in range(1, n + 1):
                    verts[i] = [
                        best[j] + _SHRINK * (verts[i][j] - best[j]) for j in range(n)
                    ]
                    vals[i] = float(f(verts[i]))
                    n_eval += 1

    i_best = min(range(n + 1), key=vals.__getitem__)
    return list(verts[i_best]), vals[i_best], n_eval
