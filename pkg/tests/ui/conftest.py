import pytest
from loguru import logger


@pytest.fixture(autouse=True)
def release_log_sink():
    # run_cli binds a sink to whatever sys.stderr is during the test
    yield
    logger.remove()
