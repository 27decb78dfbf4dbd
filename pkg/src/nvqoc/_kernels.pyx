# cython: language_level=3
"""Compiled propagation kernels for 4x4 Hermitian generators.

Same interface as :mod:`nvqoc._fallback`. Each step exponential is built from
a cyclic complex Jacobi eigendecomposition (exact to rounding for 4x4), so no
LAPACK call and no Python object is touched inside the step loop.
"""
import numpy as np

from libc.math cimport sqrt, fabs, cos, sin

cdef extern from "complex.h" nogil:
    double complex conj(double complex)
    double cabs(double complex)

cdef enum:
    N = 4
    MAX_SWEEPS = 60


cdef void _herm_eig4(double complex a[N][N], double w[N], double complex v[N][N]) noexcept nogil:
    """Diagonalise ``a`` in place, accumulating rotations into the columns of ``v``.

    ``v`` must hold an orthonormal basis on entry; pass the identity for a
    cold solve or the previous step's eigenvectors after rotating ``a`` into
    that basis (warm start).
    """
    cdef int i, j, k, p, q, sweep
    cdef double off, scale, r, theta, t, c, s
    cdef double complex ph, gpp, gpq, gqp, gqq, akp, akq, apk, aqk

    scale = 0.0
    for i in range(N):
        for j in range(N):
            scale += a[i][j].real * a[i][j].real + a[i][j].imag * a[i][j].imag

    for sweep in range(MAX_SWEEPS):
        off = 0.0
        for i in range(N):
            for j in range(i + 1, N):
                off += a[i][j].real * a[i][j].real + a[i][j].imag * a[i][j].imag
        if off <= 1e-32 * scale:
            break
        for p in range(N - 1):
            for q in range(p + 1, N):
                r = cabs(a[p][q])
                if r == 0.0:
                    continue
                ph = a[p][q] / r
                theta = (a[q][q].real - a[p][p].real) / (2.0 * r)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                # G = diag(phase) * real Givens rotation on (p, q)
                gpp = c
                gpq = s
                gqp = -s * conj(ph)
                gqq = c * conj(ph)
                for k in range(N):
                    akp = a[k][p]
                    akq = a[k][q]
                    a[k][p] = akp * gpp + akq * gqp
                    a[k][q] = akp * gpq + akq * gqq
                for k in range(N):
                    apk = a[p][k]
                    aqk = a[q][k]
                    a[p][k] = conj(gpp) * apk + conj(gqp) * aqk
                    a[q][k] = conj(gpq) * apk + conj(gqq) * aqk
                a[p][q] = 0.0
                a[q][p] = 0.0
                a[p][p] = a[p][p].real
                a[q][q] = a[q][q].real
                for k in range(N):
                    akp = v[k][p]
                    akq = v[k][q]
                    v[k][p] = akp * gpp + akq * gqp
                    v[k][q] = akp * gpq + akq * gqq

    for i in range(N):
        w[i] = a[i][i].real


cdef void _orthonormalize(double complex v[N][N]) noexcept nogil:
    """Modified Gram-Schmidt on the columns of ``v``."""
    cdef int i, j, k
    cdef double complex proj
    cdef double nrm
    for j in range(N):
        for i in range(j):
            proj = 0.0
            for k in range(N):
                proj = proj + conj(v[k][i]) * v[k][j]
            for k in range(N):
                v[k][j] = v[k][j] - proj * v[k][i]
        nrm = 0.0
        for k in range(N):
            nrm += v[k][j].real * v[k][j].real + v[k][j].imag * v[k][j].imag
        nrm = sqrt(nrm)
        for k in range(N):
            v[k][j] = v[k][j] / nrm


cdef void _step_expm(const double complex[:, ::1] h, double dt, double complex v[N][N],
                     double complex e[N][N]) noexcept nogil:
    """e = exp(-i h dt) for Hermitian h, warm-started from the basis ``v``.

    On return ``v`` holds the eigenvectors of ``h``.
    """
    cdef double complex a[N][N]
    cdef double complex hv[N][N]
    cdef double complex ph[N]
    cdef double w[N]
    cdef int i, j, k
    cdef double complex acc

    for i in range(N):
        for j in range(N):
            acc = 0.0
            for k in range(N):
                acc = acc + h[i, k] * v[k][j]
            hv[i][j] = acc
    for i in range(N):
        for j in range(i, N):
            acc = 0.0
            for k in range(N):
                acc = acc + conj(v[k][i]) * hv[k][j]
            a[i][j] = acc
            a[j][i] = conj(acc)
        a[i][i] = a[i][i].real
    _herm_eig4(a, w, v)
    # the carried basis picks up the same rounding bias every step, which
    # would accumulate coherently; V diag V^dagger is only unitary if V is
    _orthonormalize(v)
    for k in range(N):
        ph[k] = cos(w[k] * dt) - 1j * sin(w[k] * dt)
    for i in range(N):
        for j in range(N):
            acc = 0.0
            for k in range(N):
                acc = acc + v[i][k] * ph[k] * conj(v[j][k])
            e[i][j] = acc


cdef inline void _identity(double complex m[N][N]) noexcept nogil:
    cdef int i, j
    for i in range(N):
        for j in range(N):
            m[i][j] = 1.0 if i == j else 0.0


def hermitian_expm_raw(const double complex[:, ::1] h, double dt):
    """Return exp(-i h dt) for a single 4x4 Hermitian matrix (no validation)."""
    if h.shape[0] != N or h.shape[1] != N:
        raise ValueError("expected a 4x4 matrix")
    cdef double complex e[N][N]
    cdef double complex v[N][N]
    out = np.empty((N, N), dtype=np.complex128)
    cdef double complex[:, ::1] o = out
    cdef int i, j
    with nogil:
        _identity(v)
        _step_expm(h, dt, v, e)
        for i in range(N):
            for j in range(N):
                o[i, j] = e[i][j]
    return out


cdef inline void _matmul(double complex x[N][N], double complex y[N][N],
                         double complex out[N][N]) noexcept nogil:
    cdef int i, j, k
    cdef double complex acc
    for i in range(N):
        for j in range(N):
            acc = 0.0
            for k in range(N):
                acc = acc + x[i][k] * y[k][j]
            out[i][j] = acc


cdef enum:
    STACK = 64


def propagate_steps(const double complex[:, :, ::1] hams, double dt):
    """Ordered product exp(-i H_{n-1} dt) ... exp(-i H_0 dt).

    Partial products are merged pairwise through a binary-counter stack so
    that rounding grows with log(n) rather than n.
    """
    if hams.shape[1] != N or hams.shape[2] != N:
        raise ValueError("expected an (n, 4, 4) stack")
    cdef Py_ssize_t n = hams.shape[0]
    cdef Py_ssize_t step
    cdef double complex stack[STACK][N][N]
    cdef Py_ssize_t count[STACK]
    cdef int depth = 0
    cdef double complex cur[N][N]
    cdef double complex tmp[N][N]
    cdef double complex v[N][N]
    cdef Py_ssize_t cur_count
    cdef int i, j
    out = np.empty((N, N), dtype=np.complex128)
    cdef double complex[:, ::1] o = out

    with nogil:
        _identity(v)
        for step in range(n):
            _step_expm(hams[step], dt, v, cur)
            cur_count = 1
            while depth > 0 and count[depth - 1] == cur_count:
                # cur is later in time than the stacked block
                _matmul(cur, stack[depth - 1], tmp)
                for i in range(N):
                    for j in range(N):
                        cur[i][j] = tmp[i][j]
                cur_count = cur_count * 2
                depth -= 1
            for i in range(N):
                for j in range(N):
                    stack[depth][i][j] = cur[i][j]
            count[depth] = cur_count
            depth += 1

        _identity(cur)
        while depth > 0:
            _matmul(cur, stack[depth - 1], tmp)
            for i in range(N):
                for j in range(N):
                    cur[i][j] = tmp[i][j]
            depth -= 1
        for i in range(N):
            for j in range(N):
                o[i, j] = cur[i][j]
    return out
