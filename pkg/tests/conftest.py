import os

import pytest

# keep parallel helpers deterministic and light on the single-core sandbox
os.environ.setdefault("RING_SIM_THREADS", "1")


@pytest.fixture(scope="session")
def default_cfg():
    from ringattractor.harness import default_config

    return default_config()
