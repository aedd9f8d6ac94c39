import numpy as np
import pytest

from stiefel_tim.problem import NetworkInstance


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def skew(rng, r):
    A = crandn(rng, r, r)
    return A - A.conj().T


def hpd(rng, r):
    A = crandn(rng, r, r)
    return A @ A.conj().T + 0.1 * np.eye(r)


def scalar_instance():
    return NetworkInstance.from_lists(1, 1, [(0, 0)], [{0}])


def full_instance(K, sharing=True, d=1):
    edges = [(k, j) for k in range(K) for j in range(K)]
    share = [set(range(K)) if sharing else {j} for j in range(K)]
    return NetworkInstance.from_lists(K, d, edges, share)


def diagonal_instance(K, d=1):
    return NetworkInstance.from_lists(K, d, [(k, k) for k in range(K)], [{j} for j in range(K)])


def five_user_instance():
    """Five-user no-sharing example: receiver 2 hears transmitter 3, not vice versa."""
    edges = [(k, k) for k in range(5)] + [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 3)]
    return NetworkInstance.from_lists(5, 1, edges, [{j} for j in range(5)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
