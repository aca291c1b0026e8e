import functools

import pytest
from hypothesis import HealthCheck, settings

from ghostsig.corpus_loader import corpus_load

settings.register_profile("ci", max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@functools.lru_cache(maxsize=None)
def program(name):
    return corpus_load(name).program


@pytest.fixture
def fifo():
    return program("fifo")


@pytest.fixture
def flag():
    return program("minimal_flag")
