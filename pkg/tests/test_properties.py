import pytest

from tests import properties


@pytest.mark.parametrize("name", list(properties.ALL))
def test_property(name):
    ok, detail = properties.ALL[name]()
    assert ok, detail


@pytest.mark.parametrize("seed", [1, 2])
def test_jacobian_fd_other_seeds(seed):
    ok, detail = properties.jacobian_fd_slope(seed=seed)
    assert ok, detail


def test_jacobian_fd_unstabilised():
    ok, detail = properties.jacobian_fd_slope(stab=False)
    assert ok, detail
