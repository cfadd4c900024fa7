# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scatter/gather between pixel buffers and projection histograms."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def project_batch(const double[:, ::1] images, const int[:, ::1] index_map, Py_ssize_t n_bins):
    """Histogram every image along every direction: out[n, p, k]."""
    cdef Py_ssize_t n = images.shape[0]
    cdef Py_ssize_t n_pix = images.shape[1]
    cdef Py_ssize_t n_dir = index_map.shape[0]
    cdef Py_ssize_t i, p, j
    if index_map.shape[1] != n_pix:
        raise ValueError("index map does not match image size")
    out = np.zeros((n, n_dir, n_bins), dtype=np.float64)
    cdef double[:, :, ::1] hist = out
    for i in range(n):
        for p in range(n_dir):
            for j in range(n_pix):
                hist[i, p, index_map[p, j]] += images[i, j]
    return out


def scatter_bins(const double[:, :, ::1] bin_grads, const int[:, ::1] index_map):
    """Adjoint of project_batch: out[n, j] = sum_p bin_grads[n, p, index_map[p, j]]."""
    cdef Py_ssize_t n = bin_grads.shape[0]
    cdef Py_ssize_t n_dir = index_map.shape[0]
    cdef Py_ssize_t n_pix = index_map.shape[1]
    cdef Py_ssize_t i, p, j
    cdef double acc
    if bin_grads.shape[1] != n_dir:
        raise ValueError("direction count mismatch")
    out = np.zeros((n, n_pix), dtype=np.float64)
    cdef double[:, ::1] grad = out
    for i in range(n):
        for j in range(n_pix):
            acc = 0.0
            for p in range(n_dir):
                acc += bin_grads[i, p, index_map[p, j]]
            grad[i, j] = acc
    return out


from libc.math cimport sqrt


def adam_update(double[::1] param, const double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double corr1, double corr2,
                double eps, double weight_decay):
    """One fused Adam step over flat arrays, in place."""
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double g, inv_c2 = 1.0 / sqrt(corr2), step = lr / corr1
    for i in range(n):
        g = grad[i] + weight_decay * param[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        param[i] -= step * m[i] / (sqrt(v[i]) * inv_c2 + eps)
