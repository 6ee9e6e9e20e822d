import pytest

from flexadapt.config import load_preset

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion, then assert."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])


@pytest.fixture(scope="session")
def pendulum_cfg():
    return load_preset("pendulum_friction")


@pytest.fixture(scope="session")
def pendulum_data(pendulum_cfg):
    return pendulum_cfg.collect(seed=0)


@pytest.fixture(scope="session")
def pendulum_trained(pendulum_cfg, pendulum_data):
    return pendulum_cfg.train(pendulum_data, seed=0)


@pytest.fixture(scope="session")
def arm_cfg():
    return load_preset("arm_benchmark")


@pytest.fixture(scope="session")
def arm_trained(arm_cfg):
    return arm_cfg.train(arm_cfg.collect(seed=0), seed=0)
