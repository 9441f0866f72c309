"""Pure-NumPy kernel: batched flow solve and Gaussian log likelihood.

Same contract as the compiled `_flowkern` extension. Invalid particles
(singular system, non-finite or negative throughput, non-positive model
prediction under relative noise) receive -inf instead of raising.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
NEGATIVE_Z_TOL = 1e-9


def _phi_batch(arrays, thetas):
    phi = np.where(arrays.edge_param >= 0,
                   thetas[:, np.maximum(arrays.edge_param, 0)],
                   arrays.edge_fixed)
    return phi


def _q_batch(arrays, thetas):
    return np.where(arrays.q_param >= 0,
                    thetas[:, np.maximum(arrays.q_param, 0)],
                    arrays.q_fixed)


def solve_batch(arrays, thetas):
    """Solve (I - Phi^T) z = q for every particle.

    Returns (z, edge_flows, valid): z is (N, n_nodes), edge_flows is
    (N, n_edges) in the network's edge order, valid marks particles whose
    solve succeeded with nonnegative throughputs.
    """
    n, n_p = thetas.shape[0], arrays.n_nodes
    phi = _phi_batch(arrays, thetas)
    qv = _q_batch(arrays, thetas)
    a = np.broadcast_to(np.eye(n_p), (n, n_p, n_p)).copy()
    a[:, arrays.edge_dst, arrays.edge_src] = -phi
    b = np.zeros((n, n_p))
    b[:, arrays.q_node] = qv
    valid = np.ones(n, dtype=bool)
    try:
        z = np.linalg.solve(a, b[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        z = np.zeros((n, n_p))
        for i in range(n):
            try:
                z[i] = np.linalg.solve(a[i], b[i])
            except np.linalg.LinAlgError:
                valid[i] = False
    scale = np.maximum(np.abs(b).max(axis=1), 1.0)
    valid &= np.isfinite(z).all(axis=1)
    valid &= ~np.any(z < -NEGATIVE_Z_TOL * scale[:, None], axis=1)
    z = np.maximum(z, 0.0)
    edge_flows = phi * z[:, arrays.edge_src]
    return z, edge_flows, valid


def predictions_batch(arrays, thetas):
    """Model predictions G_k for every observation, per particle."""
    z, edge_flows, valid = solve_batch(arrays, thetas)
    phi = _phi_batch(arrays, thetas)
    qv = _q_batch(arrays, thetas)
    n, n_obs = thetas.shape[0], len(arrays.obs_kind)
    g = np.empty((n, n_obs))
    for k in range(n_obs):
        kind, a_k = arrays.obs_kind[k], arrays.obs_a[k]
        if kind == 0:
            g[:, k] = qv[:, a_k]
        elif kind == 1:
            g[:, k] = edge_flows[:, a_k]
        elif kind == 2:
            g[:, k] = phi[:, a_k]
        elif kind == 3:
            g[:, k] = z[:, a_k]
        else:
            idx = arrays.sum_edges[a_k:a_k + arrays.obs_len[k]]
            g[:, k] = edge_flows[:, idx].sum(axis=1)
    return g, valid


def loglik_batch(arrays, thetas):
    g, valid = predictions_batch(arrays, thetas)
    sigma = np.where(arrays.obs_sigma_param >= 0,
                     thetas[:, np.maximum(arrays.obs_sigma_param, 0)],
                     arrays.obs_sigma_fixed)
    y = arrays.obs_value
    relative = arrays.obs_noise == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.where(relative, y / np.where(g > 0, g, np.nan) - 1.0, y - g)
        terms = -0.5 * LOG_2PI - np.log(sigma) - resid * resid / (2.0 * sigma * sigma)
    valid &= np.isfinite(terms).all(axis=1)
    out = np.where(valid, np.where(valid[:, None], terms, 0.0).sum(axis=1), -np.inf)
    return out
