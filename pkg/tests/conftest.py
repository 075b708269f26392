import numpy as np
import pytest

from rmagg import data, rm_codes


@pytest.fixture(scope="session")
def classbook16() -> rm_codes.ClassCodebook:
    """[16, 5, 8] code with 10 seeded classes, shared read-only."""
    params = rm_codes.derive_params(4, 1)
    codebook = rm_codes.span_codebook(rm_codes.generate_basis(params), params)
    return rm_codes.assign_class_codewords(codebook, 10, seed=11)


@pytest.fixture(scope="session")
def classbook32() -> rm_codes.ClassCodebook:
    """[32, 6, 16] code with 10 seeded classes."""
    params = rm_codes.derive_params(5, 1)
    codebook = rm_codes.span_codebook(rm_codes.generate_basis(params), params)
    return rm_codes.assign_class_codewords(codebook, 10, seed=11)


@pytest.fixture(scope="session")
def digits_split() -> tuple[data.Dataset, data.Dataset]:
    return data.split(data.digits(), test_fraction=0.25, seed=3)


@pytest.fixture(scope="session")
def blobs_split() -> tuple[data.Dataset, data.Dataset]:
    whole = data.synth_blobs(num_classes=4, per_class=80, dim=12, spread=0.05, seed=9)
    return data.split(whole, test_fraction=0.25, seed=9)


def popcount16(values: np.ndarray) -> np.ndarray:
    """Vectorized popcount for arrays of words below 2**16."""
    table = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.uint8)
    return table[values]


ACCEPTANCE_PREFIX = "tests/test_acceptance.py::test_criterion_"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per numbered acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            if getattr(report, "when", "call") not in ("call", None):
                if outcome == "passed":
                    continue
            tail = nodeid.split("test_criterion_", 1)[1]
            number, _, label = tail.partition("_")
            verdict = "PASS" if outcome == "passed" else "FAIL"
            # a failed setup/teardown overrides an earlier pass
            if lines.get(number, ("", "PASS"))[1] == "PASS":
                lines[number] = (label.replace("_", " "), verdict)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        label, verdict = lines[number]
        terminalreporter.write_line(f"criterion {int(number):2d} {verdict}: {label}")
