import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from twinsync.predictor import build_dataset, train_predictor
from twinsync.signal import SynthSpec, estimate_decorrelation_time, synthesize_trace


@pytest.fixture(scope="session")
def default_trace():
    return synthesize_trace(SynthSpec())


@pytest.fixture(scope="session")
def default_predictor(default_trace):
    l_in = estimate_decorrelation_time(default_trace)
    return train_predictor(build_dataset(default_trace, l_in, 200), epochs=20, lr=3e-3, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
