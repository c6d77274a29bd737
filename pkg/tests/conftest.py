import numpy as np
import pytest

from opseq.trace_ingest import FamilyLabel, TraceDocument


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def make_doc(tokens, label="a", index=0, doc_id=None):
    return TraceDocument(doc_id or " ".join(tokens), FamilyLabel(label, index), tuple(tokens))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
