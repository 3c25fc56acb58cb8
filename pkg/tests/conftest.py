import numpy as np
import pytest

from toruslab.mesh import ConformalMetric, FourierTerm, constant_field, sample_metric

FLAT_FIXTURES = {
    "identity": np.eye(3),
    "diag149": np.diag([1.0, 4.0, 9.0]),
    "skewed": np.array([[1.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]]),
}

# mixed-sign scalar curvature; the family member at eps is FAMILY.scaled(eps)
FAMILY = ConformalMetric(tuple(np.eye(3).ravel()),
                         (FourierTerm(1.0, (1, 0, 0), 0.0), FourierTerm(0.5, (0, 1, 1), 0.3)))


@pytest.fixture(params=sorted(FLAT_FIXTURES))
def flat_matrix(request):
    return FLAT_FIXTURES[request.param]


@pytest.fixture
def flat16(flat_matrix):
    return constant_field(flat_matrix, 16)


@pytest.fixture(scope="session")
def conformal16():
    return sample_metric(FAMILY.scaled(0.1), 16)


ACCEPTANCE_LINES = []


def report_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
