import pytest

from hawkesgen.kernels import (
    Constant,
    ErlangK,
    Exponential,
    Extension,
    KernelSequence,
    UniformSupport,
    classical,
)


def classical_seq(level=1.0, norm=0.5, rate=2.0):
    return classical(level, Exponential(rate, norm * rate))


def even_odd_seq(level=1.0, h=0.5, g=0.25):
    return KernelSequence(Constant(level), (Exponential(2.0, 2.0 * h), Exponential(4.0, 4.0 * g)), Extension.CYCLIC)


def three_cycle_seq():
    return KernelSequence(
        Constant(1.0),
        (Exponential(2.0, 1.0), ErlangK(2, 3.0, 0.3), UniformSupport(0.4, 1.0)),
        Extension.CYCLIC,
    )


def poisson_seq(level=1.0):
    return KernelSequence(Constant(level), (), Extension.NULL)


@pytest.fixture
def classical_model():
    return classical_seq()


@pytest.fixture
def even_odd_model():
    return even_odd_seq()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import ACCEPTANCE_KEY

    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
