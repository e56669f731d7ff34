import pytest

from cjmap.model import coinjoin_from_values
from cjmap.preprocess import build_policy, normalize_fees


@pytest.fixture
def fig1():
    """The worked 4-input / 5-output example with 24 mappings."""
    return coinjoin_from_values([8, 6, 3, 3], [6, 6, 4, 2, 2], txid="fig1")


@pytest.fixture
def fig1_ntx(fig1):
    return normalize_fees(fig1, build_policy("generic"))
