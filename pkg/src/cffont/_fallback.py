"""Pure-numpy versions of the compiled kernels, same signatures and semantics."""
import numpy as np


def project_batch(images, index_map, n_bins):
    images = np.ascontiguousarray(images, dtype=np.float64)
    n, n_pix = images.shape
    n_dir = index_map.shape[0]
    if index_map.shape[1] != n_pix:
        raise ValueError("index map does not match image size")
    out = np.empty((n, n_dir, n_bins), dtype=np.float64)
    for p in range(n_dir):
        # one bincount per (image, direction) keeps the accumulation in pixel order
        idx = index_map[p]
        for i in range(n):
            out[i, p] = np.bincount(idx, weights=images[i], minlength=n_bins)
    return out


def scatter_bins(bin_grads, index_map):
    bin_grads = np.asarray(bin_grads, dtype=np.float64)
    n_dir = index_map.shape[0]
    if bin_grads.shape[1] != n_dir:
        raise ValueError("direction count mismatch")
    out = np.zeros((bin_grads.shape[0], index_map.shape[1]), dtype=np.float64)
    for p in range(n_dir):
        out += bin_grads[:, p, index_map[p]]
    return out


def adam_update(param, grad, m, v, lr, beta1, beta2, corr1, corr2, eps, weight_decay):
    g = grad + weight_decay * param
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    param -= (lr / corr1) * m / (np.sqrt(v) * (1.0 / np.sqrt(corr2)) + eps)
