import pytest

from demopair.synthgen import GenConfig, build_dataset

_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance.append((name, "PASS" if report.passed else "FAIL"))
    elif report.when == "setup" and not report.passed:
        _acceptance.append((name, "FAIL"))


def pytest_terminal_summary(terminalreporter):
    # one visible pass/fail line per acceptance criterion
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _acceptance:
        terminalreporter.write_line(f"{name}: {status}")


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Smallest stratifiable dataset, shared read-only across test modules."""
    root = tmp_path_factory.mktemp("tiny-data")
    return build_dataset(GenConfig(n=60, seed=11, out_dir=str(root)))
