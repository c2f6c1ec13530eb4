import math
import os

import jax
import pytest

# compiled kernels are reused across test sessions
_CACHE = os.environ.get("FINSLERLAB_JAX_CACHE", os.path.expanduser("~/.cache/finslerlab-jax"))
jax.config.update("jax_compilation_cache_dir", _CACHE)
jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.5)

from finslerlab import domain, metric  # noqa: E402

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def randers03():
    return metric.randers([0.3, 0.0])


@pytest.fixture(scope="session")
def torus32():
    return domain.build_mesh(domain.flat_torus(), 32)


@pytest.fixture(scope="session")
def randers_torus64(randers03):
    return domain.build_mesh(domain.flat_torus(metric=randers03), 64)


@pytest.fixture(scope="session")
def sphere3():
    return domain.build_mesh(domain.sphere(), 3)
