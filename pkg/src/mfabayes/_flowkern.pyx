# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel: per-particle flow solve and Gaussian log likelihood.

Mirrors the contract of `_flowkern_py.loglik_batch`: one LU solve of
(I - Phi^T) z = q per particle via LAPACK, followed by the accumulation of
independent Gaussian terms over the observation records. Invalid particles
get -inf.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, isfinite
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_lapack cimport dgecon, dgetrf, dgetrs

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double NEG_Z_TOL = 1e-9
cdef double RCOND_MIN = 1e-12


def loglik_batch(arrays, cnp.ndarray[cnp.float64_t, ndim=2] thetas):
    cdef Py_ssize_t n = thetas.shape[0]
    cdef int n_p = arrays.n_nodes
    cdef cnp.ndarray[cnp.int64_t, ndim=1] e_src = arrays.edge_src
    cdef cnp.ndarray[cnp.int64_t, ndim=1] e_dst = arrays.edge_dst
    cdef cnp.ndarray[cnp.int64_t, ndim=1] e_par = arrays.edge_param
    cdef cnp.ndarray[cnp.float64_t, ndim=1] e_fix = arrays.edge_fixed
    cdef cnp.ndarray[cnp.int64_t, ndim=1] q_node = arrays.q_node
    cdef cnp.ndarray[cnp.int64_t, ndim=1] q_par = arrays.q_param
    cdef cnp.ndarray[cnp.float64_t, ndim=1] q_fix = arrays.q_fixed
    cdef cnp.ndarray[cnp.int64_t, ndim=1] o_kind = arrays.obs_kind
    cdef cnp.ndarray[cnp.int64_t, ndim=1] o_a = arrays.obs_a
    cdef cnp.ndarray[cnp.int64_t, ndim=1] o_len = arrays.obs_len
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sum_edges = arrays.sum_edges
    cdef cnp.ndarray[cnp.float64_t, ndim=1] o_val = arrays.obs_value
    cdef cnp.ndarray[cnp.int64_t, ndim=1] o_sp = arrays.obs_sigma_param
    cdef cnp.ndarray[cnp.float64_t, ndim=1] o_sf = arrays.obs_sigma_fixed
    cdef cnp.ndarray[cnp.int64_t, ndim=1] o_noise = arrays.obs_noise

    cdef Py_ssize_t n_e = e_src.shape[0]
    cdef Py_ssize_t n_q = q_node.shape[0]
    cdef Py_ssize_t n_obs = o_kind.shape[0]

    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)

    cdef double *a = <double *> malloc(n_p * n_p * sizeof(double))
    cdef double *b = <double *> malloc(n_p * sizeof(double))
    cdef double *phi = <double *> malloc(n_e * sizeof(double)) if n_e else NULL
    cdef double *work = <double *> malloc(4 * n_p * sizeof(double))
    cdef int *ipiv = <int *> malloc(n_p * sizeof(int))
    cdef int *iwork = <int *> malloc(n_p * sizeof(int))
    if a == NULL or b == NULL or work == NULL or ipiv == NULL or iwork == NULL:
        free(a); free(b); free(phi); free(work); free(ipiv); free(iwork)
        raise MemoryError()

    cdef Py_ssize_t p, e, k, j, t
    cdef int info, nrhs = 1, lda, ok
    cdef double anorm, colsum, rcond, scale, g, y, sig, resid, ll, zsrc
    cdef char norm = b'1'
    cdef char trans = b'N'

    lda = n_p
    try:
        for p in range(n):
            # allocation fractions for this particle
            for e in range(n_e):
                if e_par[e] >= 0:
                    phi[e] = thetas[p, e_par[e]]
                else:
                    phi[e] = e_fix[e]
            # A = I - Phi^T, column-major: a[col*n_p + row]
            for j in range(n_p * n_p):
                a[j] = 0.0
            for j in range(n_p):
                a[j * n_p + j] = 1.0
            for e in range(n_e):
                a[e_src[e] * n_p + e_dst[e]] = -phi[e]
            # rhs
            scale = 1.0
            for j in range(n_p):
                b[j] = 0.0
            for j in range(n_q):
                if q_par[j] >= 0:
                    b[q_node[j]] = thetas[p, q_par[j]]
                else:
                    b[q_node[j]] = q_fix[j]
                if b[q_node[j]] > scale:
                    scale = b[q_node[j]]
            # 1-norm before factorization, for dgecon
            anorm = 0.0
            for j in range(n_p):
                colsum = 0.0
                for k in range(n_p):
                    if a[j * n_p + k] >= 0:
                        colsum += a[j * n_p + k]
                    else:
                        colsum -= a[j * n_p + k]
                if colsum > anorm:
                    anorm = colsum
            dgetrf(&lda, &lda, a, &lda, ipiv, &info)
            ok = 1
            if info != 0:
                ok = 0
            if ok:
                dgecon(&norm, &lda, a, &lda, &anorm, &rcond, work, iwork, &info)
                if info != 0 or rcond < RCOND_MIN:
                    ok = 0
            if ok:
                dgetrs(&trans, &lda, &nrhs, a, &lda, ipiv, b, &lda, &info)
                if info != 0:
                    ok = 0
            if ok:
                for j in range(n_p):
                    if not isfinite(b[j]) or b[j] < -NEG_Z_TOL * scale:
                        ok = 0
                        break
                    if b[j] < 0.0:
                        b[j] = 0.0
            if not ok:
                out[p] = -np.inf
                continue
            # b now holds z; accumulate observation terms
            ll = 0.0
            for k in range(n_obs):
                if o_kind[k] == 0:
                    j = o_a[k]
                    if q_par[j] >= 0:
                        g = thetas[p, q_par[j]]
                    else:
                        g = q_fix[j]
                elif o_kind[k] == 1:
                    g = phi[o_a[k]] * b[e_src[o_a[k]]]
                elif o_kind[k] == 2:
                    g = phi[o_a[k]]
                elif o_kind[k] == 3:
                    g = b[o_a[k]]
                else:
                    g = 0.0
                    for t in range(o_len[k]):
                        e = sum_edges[o_a[k] + t]
                        g += phi[e] * b[e_src[e]]
                if o_sp[k] >= 0:
                    sig = thetas[p, o_sp[k]]
                else:
                    sig = o_sf[k]
                y = o_val[k]
                if o_noise[k] == 0:
                    if g <= 0.0 or sig <= 0.0:
                        ok = 0
                        break
                    resid = y / g - 1.0
                else:
                    if sig <= 0.0:
                        ok = 0
                        break
                    resid = y - g
                ll += -0.5 * LOG_2PI - log(sig) - resid * resid / (2.0 * sig * sig)
            if ok and isfinite(ll):
                out[p] = ll
            else:
                out[p] = -np.inf
    finally:
        free(a); free(b); free(phi); free(work); free(ipiv); free(iwork)
    return out
