import io

import pytest

from eagerfs import EagerPolicy, EagerShim, Engine, MemoryStore


@pytest.fixture
def store():
    return MemoryStore()


@pytest.fixture
def errs():
    return io.StringIO()


@pytest.fixture
def engine(errs):
    eng = Engine(err_stream=errs)
    yield eng
    if not eng.torn_down:
        eng.drain_all()


@pytest.fixture
def shim(store, errs):
    sh = EagerShim(store, EagerPolicy(), err_stream=errs)
    yield sh
    if not sh.engine.torn_down:
        sh.drain()
