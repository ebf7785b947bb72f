import math

import numpy as np
import pytest

from volflow import catalog_field
from volflow.dynamics import integrate

TORUS_FREQ = [1.0, math.sqrt(2.0), math.sqrt(3.0)]


@pytest.fixture(scope="session")
def torus():
    return catalog_field("linear-torus", frequencies=TORUS_FREQ)


@pytest.fixture(scope="session")
def catmap():
    return catalog_field("catmap-suspension")


@pytest.fixture(scope="session")
def saddle():
    return catalog_field("saddle-demo")


@pytest.fixture(scope="session")
def saddle_pair():
    return catalog_field("saddle-pair-demo")


@pytest.fixture(scope="session")
def saddle_pair_cloud(saddle_pair):
    """Both periodic orbits plus the connecting orbit in the plane y = 0."""
    z = np.arange(0.0, 1.0, 0.05)
    g1 = np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
    g2 = np.column_stack([np.ones_like(z), np.zeros_like(z), z])
    # sampled from t = -2 so every link sample has a predecessor one time unit earlier
    back = integrate(saddle_pair, np.array([1e-3, 0.0, 0.0]), -2.0)
    fwd = integrate(saddle_pair, np.array([1e-3, 0.0, 0.0]), 4.1)
    ts = np.arange(-2.0, 4.1, 0.05)
    link = np.vstack([back.at(ts[ts < 0]), fwd.at(ts[ts >= 0])])
    link = saddle_pair.chart.wrap(link)
    return np.vstack([g1, link, g2]), len(g1), len(link)


def cat_map(xy):
    """Direct cat map (2x + y, x + y) mod 1."""
    x, y = xy[..., 0], xy[..., 1]
    return np.mod(np.stack([2 * x + y, x + y], axis=-1), 1.0)


def torus_dist(a, b):
    d = np.mod(np.asarray(a) - np.asarray(b) + 0.5, 1.0) - 0.5
    return float(np.linalg.norm(d))
