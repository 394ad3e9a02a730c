import json
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def oracles():
    """Frozen values produced by tests/oracles/gen_scalar_oracles.py."""
    with open(DATA / "scalar_oracles.json") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def mp_oracle():
    """Pooled 2000x2000 Wishart sample statistics (gen_mp_oracle.py)."""
    with open(DATA / "mp_oracle.json") as fh:
        return json.load(fh)
