import sys

import pytest

from dcmab.dataio import AuctionLog, GeneratorConfig, generate_records

SMALL = GeneratorConfig(merchants=40, consumers=60, requests=900, candidates_per_request=6)


@pytest.fixture(scope="session")
def small_logs():
    return AuctionLog(generate_records(SMALL, 1)), AuctionLog(generate_records(SMALL, 2))


@pytest.fixture(scope="session")
def small_setup(small_logs):
    from dcmab.simulator import prepare
    return prepare(*small_logs, 3, 3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
