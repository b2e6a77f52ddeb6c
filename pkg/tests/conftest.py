import os

import pytest


@pytest.fixture(autouse=True, scope="session")
def _session_cache(tmp_path_factory):
    """Keep reference-solution caching inside the test session."""
    cache = tmp_path_factory.mktemp("mdrk-cache")
    old = os.environ.get("MDRK_CACHE_DIR")
    os.environ["MDRK_CACHE_DIR"] = str(cache)
    yield cache
    if old is None:
        os.environ.pop("MDRK_CACHE_DIR", None)
    else:
        os.environ["MDRK_CACHE_DIR"] = old
