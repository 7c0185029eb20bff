"""Shared test helpers and independent oracles."""

import numpy as np

from votetrans.tables import UnitCounts


def finite_difference(f, theta, h=1e-6):
    """Central differences, one coordinate at a time."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


CONSTANT_2x2 = np.array([[0.75, 0.25], [0.35, 0.65]])


def random_units(rng, n_units, R, C, low=20, high=200):
    return [UnitCounts(f"u{k}", rng.integers(low, high, size=(R, C))) for k in range(n_units)]
