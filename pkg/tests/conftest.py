import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qisp.config import load_default_config


@pytest.fixture(scope="session")
def default_config():
    return load_default_config()


@pytest.fixture(scope="session")
def default_topology(default_config):
    return default_config.topology


@pytest.fixture(scope="session")
def default_fabric_spec(default_config):
    return default_config.fabric
