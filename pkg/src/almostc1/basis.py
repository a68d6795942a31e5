"""Element-local polynomial bases.

Two tensor bases live on the unit square:

* ``b0``: biquadratic Bernstein polynomials (9 functions), used on faces
  without extraordinary vertices;
* ``b1``: C¹ biquadratic B-splines on the knot vector ``(0,0,0,1/2,1,1,1)``
  in each direction (16 functions), used on extraordinary faces.

Coefficient matrices are indexed ``c[j, k]`` with ``j`` along ``u`` and ``k``
along ``v``; flattened slot numbers follow C order, ``slot = j*n + k``.
All evaluators are vectorised over points and return arrays with the point
axis first.
"""

from __future__ import annotations

import numpy as np


def bernstein2(t: np.ndarray, order: int = 0) -> np.ndarray:
    """Quadratic Bernstein values (or derivatives) at ``t``, shape (m, 3)."""
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    if order == 0:
        return np.stack([s * s, 2.0 * s * t, t * t], axis=-1)
    if order == 1:
        return np.stack([-2.0 * s, 2.0 * (s - t), 2.0 * t], axis=-1)
    if order == 2:
        one = np.ones_like(t)
        return np.stack([2.0 * one, -4.0 * one, 2.0 * one], axis=-1)
    return np.zeros(t.shape + (3,))


def c1_spline(t: np.ndarray, order: int = 0) -> np.ndarray:
    """C¹ quadratic B-splines on ``(0,0,0,1/2,1,1,1)`` at ``t``, shape (m, 4).

    The knot ``1/2`` is evaluated as a right limit, except that ``t = 1``
    belongs to the right piece anyway.
    """
    t = np.asarray(t, dtype=float)
    right = t >= 0.5
    out = np.zeros(t.shape + (4,))
    # left piece: local parameter 2t, the chain rule contributes 2**order
    scale = 2.0**order
    bl = bernstein2(2.0 * t, order) * scale
    br = bernstein2(2.0 * t - 1.0, order) * scale
    left = ~right
    out[left, 0] = bl[left, 0]
    out[left, 1] = bl[left, 1] + 0.5 * bl[left, 2]
    out[left, 2] = 0.5 * bl[left, 2]
    out[right, 1] = 0.5 * br[right, 0]
    out[right, 2] = 0.5 * br[right, 0] + br[right, 1]
    out[right, 3] = br[right, 2]
    return out


def _tensor(fu, fv, du, dv, u, v):
    bu = fu(u, du)
    bv = fv(v, dv)
    n = bu.shape[-1]
    return (bu[:, :, None] * bv[:, None, :]).reshape(len(u), n * n)


def tensor_basis(kind: int, u, v, order: int = 0) -> list[np.ndarray]:
    """Tensor basis and its derivatives at points ``(u, v)``.

    Parameters
    ----------
    kind : int
        0 for the Bernstein basis (9 functions), 1 for the C¹ basis (16).
    order : int
        Highest derivative order (0, 1 or 2).

    Returns
    -------
    list of ndarray
        ``[N]`` for order 0, ``[N, Nu, Nv]`` for order 1 and
        ``[N, Nu, Nv, Nuu, Nuv, Nvv]`` for order 2; each of shape (m, n²).
    """
    u, v = np.broadcast_arrays(
        np.atleast_1d(np.asarray(u, dtype=float)), np.atleast_1d(np.asarray(v, dtype=float))
    )
    f = bernstein2 if kind == 0 else c1_spline
    out = [_tensor(f, f, 0, 0, u, v)]
    if order >= 1:
        out += [_tensor(f, f, 1, 0, u, v), _tensor(f, f, 0, 1, u, v)]
    if order >= 2:
        out += [
            _tensor(f, f, 2, 0, u, v),
            _tensor(f, f, 1, 1, u, v),
            _tensor(f, f, 0, 2, u, v),
        ]
    return out


def knot_insertion_matrix() -> np.ndarray:
    """4x3 map from Bézier coefficients on [0,1] to C¹ spline coefficients."""
    return np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])


def reanchor(c: np.ndarray, l: int) -> np.ndarray:
    """Coefficient matrix expressed in the frame anchored at local vertex ``l``.

    A face with vertices ``(g0, g1, g2, g3)`` re-anchored at ``l`` has vertices
    ``(g_l, g_{l+1}, ...)``.  Works on (n, n) and (n, n, d) arrays.
    """
    return np.rot90(c, -l, axes=(0, 1))


def reanchor_point(u, v, l: int):
    """Map a point given in the frame anchored at ``l`` back to the base frame."""
    for _ in range(l % 4):
        u, v = 1.0 - v, u
    return u, v
