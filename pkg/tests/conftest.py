import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from salseek.volume import IntensityWindow  # noqa: E402


@pytest.fixture
def iw64():
    return IntensityWindow(0, 64, 64)
