# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Lemke pivot loop; same calling convention as ``dgc._lemke_py``."""
from libc.math cimport fabs
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dger

DEF SOLVED = 0
DEF RAY = 1
DEF PIVOT_LIMIT = 2
DEF TIE_TOL = 1e-12


cdef void _pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t c,
                 double* rowbuf, double* colbuf) noexcept nogil:
    cdef Py_ssize_t d = T.shape[0], ncol = T.shape[1], j, i
    cdef double inv = 1.0 / T[r, c]
    cdef int m = <int>ncol, n = <int>d, one = 1
    cdef double alpha = -1.0
    for j in range(ncol):
        T[r, j] *= inv
        rowbuf[j] = T[r, j]
    for i in range(d):
        colbuf[i] = T[i, c]
    colbuf[r] = 0.0
    # row-major T is column-major T' (ncol x d): T' -= rowbuf colbuf'
    dger(&m, &n, &alpha, rowbuf, &one, colbuf, &one, &T[0, 0], &m)


cdef Py_ssize_t _leaving_row(double[:, ::1] T, Py_ssize_t c, Py_ssize_t* rows,
                             Py_ssize_t nrows, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t rhs = T.shape[1] - 1, a, keep, j
    cdef double best, v, vmin
    best = T[rows[0], rhs] / T[rows[0], c]
    for a in range(1, nrows):
        v = T[rows[a], rhs] / T[rows[a], c]
        if v < best:
            best = v
    keep = 0
    for a in range(nrows):
        v = T[rows[a], rhs] / T[rows[a], c]
        if v <= best + TIE_TOL * (1.0 + fabs(best)):
            rows[keep] = rows[a]
            keep += 1
    nrows = keep
    j = 0
    while nrows > 1 and j < d:
        vmin = T[rows[0], j] / T[rows[0], c]
        for a in range(1, nrows):
            v = T[rows[a], j] / T[rows[a], c]
            if v < vmin:
                vmin = v
        keep = 0
        for a in range(nrows):
            v = T[rows[a], j] / T[rows[a], c]
            if v <= vmin + TIE_TOL * (1.0 + fabs(vmin)):
                rows[keep] = rows[a]
                keep += 1
        nrows = keep
        j += 1
    return rows[0]


def lemke_kernel(double[:, ::1] T, long long[::1] basis, double tol_piv, long max_pivots):
    """Run Lemke Scheme I on the prepared tableau. Returns (status, pivots)."""
    cdef Py_ssize_t d = T.shape[0], ncol = T.shape[1]
    cdef Py_ssize_t z0 = 2 * d, rhs = ncol - 1
    cdef Py_ssize_t r, i, nrows, rz, entering, leaving
    cdef long pivots
    cdef double qmin, ratio_z, ratio_r
    cdef int status = PIVOT_LIMIT
    cdef double* rowbuf = <double*>malloc(ncol * sizeof(double))
    cdef double* colbuf = <double*>malloc(d * sizeof(double))
    cdef Py_ssize_t* rows = <Py_ssize_t*>malloc(d * sizeof(Py_ssize_t))
    if rowbuf == NULL or colbuf == NULL or rows == NULL:
        free(rowbuf); free(colbuf); free(rows)
        raise MemoryError()
    try:
        with nogil:
            r = 0
            qmin = T[0, rhs]
            for i in range(1, d):
                if T[i, rhs] <= qmin:
                    qmin = T[i, rhs]
                    r = i
            _pivot(T, r, z0, rowbuf, colbuf)
            leaving = basis[r]
            basis[r] = z0
            pivots = 1
            entering = leaving + d if leaving < d else leaving - d
            while pivots < max_pivots:
                nrows = 0
                rz = -1
                for i in range(d):
                    if T[i, entering] > tol_piv:
                        rows[nrows] = i
                        nrows += 1
                        if basis[i] == z0 and rz < 0:
                            rz = i
                if nrows == 0:
                    status = RAY
                    break
                r = _leaving_row(T, entering, rows, nrows, d)
                if rz >= 0:
                    ratio_z = T[rz, rhs] / T[rz, entering]
                    ratio_r = T[r, rhs] / T[r, entering]
                    if ratio_z <= ratio_r + TIE_TOL * (1.0 + fabs(ratio_r)):
                        r = rz
                _pivot(T, r, entering, rowbuf, colbuf)
                leaving = basis[r]
                basis[r] = entering
                pivots += 1
                if leaving == z0:
                    status = SOLVED
                    break
                entering = leaving + d if leaving < d else leaving - d
    finally:
        free(rowbuf); free(colbuf); free(rows)
    return status, pivots
