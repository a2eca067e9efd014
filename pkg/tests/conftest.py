import pytest

from rateless_avc.channel import example_family


@pytest.fixture(scope="session")
def fam():
    return example_family()
