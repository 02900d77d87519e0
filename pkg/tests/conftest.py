import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from dagbft.committee import make_committee  # noqa: E402


@pytest.fixture(scope="session")
def golden():
    return json.loads((Path(__file__).parent / "golden" / "vectors.json").read_text())


@pytest.fixture(scope="session")
def committee4():
    return make_committee(4, seed=11)


@pytest.fixture(scope="session")
def committee7():
    return make_committee(7, seed=12)
