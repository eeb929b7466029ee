import time

import pytest

from emoanon.config import RunConfig
from emoanon.pipeline import run_pipeline

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """The default synthetic run, written to disk once and shared."""
    out = tmp_path_factory.mktemp("default_run")
    t0 = time.perf_counter()
    res = run_pipeline(RunConfig(), out_dir=out)
    return res, out, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
