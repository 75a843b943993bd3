"""Shared helpers for the solver tests."""

import numpy as np
from scipy.linalg import null_space

from mhdvem.mhd import MhdState


def random_solenoidal_state(disc, seed=0):
    """Random (u, E, B) with zero boundary DoFs, div u = 0 and B = curl E."""
    rng = np.random.default_rng(seed)
    L = disc.layout
    free_u = np.flatnonzero(~L.velocity_boundary)
    Z = null_space(disc.Bdiv[:, free_u].toarray())
    u = np.zeros(disc.n_u)
    u[free_u] = Z @ rng.standard_normal(Z.shape[1])
    E = np.where(L.edge_boundary, 0.0, rng.standard_normal(disc.n_E))
    B = disc.curl @ E
    return MhdState(0.0, u, np.zeros(disc.n_p), np.zeros(disc.n_E), B)
