import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lschc import scenarios  # noqa: E402
from lschc.engine import DecompressionEnvironment  # noqa: E402
from lschc.packet import Direction  # noqa: E402


@pytest.fixture
def hello_ctx():
    return scenarios.hello_context()


@pytest.fixture
def hello_packet():
    return scenarios.hello_packet()


@pytest.fixture
def device_env():
    return DecompressionEnvironment(device_iid=scenarios.SENDER_IID, direction=Direction.UP)
