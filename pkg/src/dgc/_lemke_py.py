"""Pure numpy Lemke pivot loop; the fallback when the compiled kernel is absent.

Shares its calling convention with ``dgc._lemke_ext.lemke_kernel``.  The
tableau has 2d+2 columns [w_1..w_d | z_1..z_d | z0 | rhs] and is updated in
place; ``basis[i]`` holds the column index of the variable basic in row i.
"""
import numpy as np

SOLVED = 0
RAY = 1
PIVOT_LIMIT = 2

TIE_TOL = 1e-12


def _pivot(T, r, c):
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _leaving_row(T, rows, c, d):
    """Lexicographic minimum ratio among candidate rows for entering column c."""
    col = T[rows, c]
    ratios = T[rows, -1] / col
    best = ratios.min()
    keep = ratios <= best + TIE_TOL * (1.0 + abs(best))
    rows, col = rows[keep], col[keep]
    j = 0
    while rows.size > 1 and j < d:
        v = T[rows, j] / col
        vmin = v.min()
        keep = v <= vmin + TIE_TOL * (1.0 + abs(vmin))
        rows, col = rows[keep], col[keep]
        j += 1
    return int(rows[0])


def lemke_kernel(T, basis, tol_piv, max_pivots):
    """Run Lemke Scheme I on the prepared tableau. Returns (status, pivots)."""
    d = T.shape[0]
    z0 = 2 * d
    rhs = T[:, -1]
    qmin = rhs.min()
    r = int(np.flatnonzero(rhs == qmin).max())
    _pivot(T, r, z0)
    leaving = int(basis[r])
    basis[r] = z0
    pivots = 1
    entering = leaving + d if leaving < d else leaving - d
    while pivots < max_pivots:
        col = T[:, entering]
        rows = np.flatnonzero(col > tol_piv)
        if rows.size == 0:
            return RAY, pivots
        z0_row = np.flatnonzero(basis[rows] == z0)
        r = _leaving_row(T, rows, entering, d)
        if z0_row.size:
            # z0 is among the minimum-ratio ties: let it leave and stop
            rz = int(rows[z0_row[0]])
            ratio_z = T[rz, -1] / T[rz, entering]
            ratio_r = T[r, -1] / T[r, entering]
            if ratio_z <= ratio_r + TIE_TOL * (1.0 + abs(ratio_r)):
                r = rz
        _pivot(T, r, entering)
        leaving = int(basis[r])
        basis[r] = entering
        pivots += 1
        if leaving == z0:
            return SOLVED, pivots
        entering = leaving + d if leaving < d else leaving - d
    return PIVOT_LIMIT, pivots
