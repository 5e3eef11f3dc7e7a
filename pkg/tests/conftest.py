import pytest

from mrenforce import example_trace, load_example


@pytest.fixture
def fig8():
    return load_example("fig8")


@pytest.fixture
def fig9_input():
    return example_trace("fig9")
