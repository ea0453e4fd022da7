import pytest

from ttexplore import load_builtin_world
from ttexplore.policies import scripted


@pytest.fixture
def minihouse1():
    return load_builtin_world("minihouse1")


@pytest.fixture
def minihouse2():
    return load_builtin_world("minihouse2")


@pytest.fixture
def keymaze1():
    return load_builtin_world("keymaze1")


@pytest.fixture
def oracle():
    return scripted("actor", "oracle-actor")


@pytest.fixture
def greedy():
    return scripted("actor", "greedy-actor")


@pytest.fixture
def oracle_thinker():
    return scripted("thinker", "oracle-thinker")
