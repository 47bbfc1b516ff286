import pytest

pytest_plugins = [
    "fixtures.fixture_instances"
]

def pytest_addoption (parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="Run the scaled reproductions"
    )

def pytest_configure (config):
    config.addinivalue_line("markers", "slow: scaled end-to-end reproductions")

def pytest_collection_modifyitems (config, items):
    if config.getoption("--runslow"):
        return

    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
