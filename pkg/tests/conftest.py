import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcmlab import environment as envmod
from rcmlab.lattice import build_box

settings.register_profile("default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def unit_env():
    def make(d=2, n=3, speed="CSRW"):
        return envmod.sample(build_box(d, n), envmod.constant(1.0), 0, speed)

    return make


def random_field(d, n, seed, speed="CSRW", gamma=1.0):
    return envmod.sample(build_box(d, n), envmod.polynomial(gamma), seed, speed)


@pytest.fixture
def rand_env():
    return random_field


def dense_generator(env, theta):
    """-L as a dense matrix on the whole box: (D_theta)^-1 (diag(pi) - W)."""
    g = env.graph
    W = np.zeros((g.num_vertices, g.num_vertices))
    u, v = g.edges[:, 0], g.edges[:, 1]
    W[u, v] = env.conductances
    W[v, u] = env.conductances
    return (np.diag(W.sum(axis=1)) - W) / theta[:, None]
