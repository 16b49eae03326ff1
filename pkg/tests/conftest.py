import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.geomspace(cond, 1.0, n)
    return (q * d) @ q.T


def separated_spd(rng, n):
    """SPD matrix with a geometrically decaying, well-separated spectrum.

    A distinct floor in ``[1e-3, 2e-3]`` keeps every eigenvalue resolvable in
    double precision, so even a full-rank decomposition is well posed.
    """
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    c = rng.uniform(0.5, 1.0)
    i = np.arange(n)
    d = 10.0 * np.exp(-c * i) * rng.uniform(0.9, 1.1, n) + 1e-3 * (2.0 - i / n)
    return (q * d) @ q.T, np.sort(d)[::-1]
