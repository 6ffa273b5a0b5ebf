"""Numpy implementations of the hot kernels (reference backend)."""

import numpy as np


def likelihood_matrix(phi, lower, spacing, length, h_nodes, y, denom):
    """``out[t, j] = phi(wrap(y[t] - h[j])) / denom[t]``, linear interpolation."""
    n = phi.shape[0]
    v = np.mod(y[:, None] - h_nodes[None, :] - lower, length)
    pos = v / spacing
    i = np.minimum(pos.astype(np.int64), n - 2)
    frac = pos - i
    out = (1.0 - frac) * phi[i] + frac * phi[i + 1]
    out /= denom[:, None]
    return out


def filter_step(sigma, lik, u_idx, kernels):
    """``out[t] = kernels[u_idx[t]] @ (sigma[t] * lik[t])``."""
    weighted = sigma * lik
    out = np.empty_like(sigma)
    for a in np.unique(u_idx):
        rows = u_idx == a
        out[rows] = weighted[rows] @ kernels[a].T
    return out


def alpha_argmin(sigma, coeffs, tags):
    """Tag and value of the minimizing coefficient row for each state.

    Rows of ``coeffs`` are ordered by ascending tag, so the first minimizer
    is also the lowest control index among exact ties.
    """
    vals = sigma @ coeffs.T
    best = np.argmin(vals, axis=1)
    return tags[best], vals[np.arange(len(best)), best]


def categorical_sample(cdf, rows, u):
    """Index ``i`` with ``cdf[row, i-1] <= u < cdf[row, i]``."""
    n = cdf.shape[1]
    idx = np.count_nonzero(cdf[rows] <= u[:, None], axis=1)
    return np.minimum(idx, n - 1).astype(np.int64)
