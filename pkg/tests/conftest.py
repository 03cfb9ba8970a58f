import numpy as np
import pytest

from tempstab._backend import compiled_kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


requires_compiled = pytest.mark.skipif(compiled_kernels() is None,
                                       reason="compiled kernels not built")


# one summary line per acceptance criterion, shown at the end of the run
_CRITERIA = []


@pytest.fixture
def criterion(capsys):
    def record(number, title, passed, seconds, limit, detail=""):
        ok = passed and seconds < limit
        line = (f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}  "
                f"[{seconds:.2f} s, limit {limit:g} s]")
        _CRITERIA.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        assert passed, line
        assert seconds < limit, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
