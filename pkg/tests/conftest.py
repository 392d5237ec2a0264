import json
import sys
import pathlib

import pytest

from flatcusp.geometry import build_table

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def table():
    return build_table()


@pytest.fixture(scope="session")
def oracles():
    return json.loads((DATA / "oracles.json").read_text())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    LINES = getattr(mod, "LINES", None)
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
