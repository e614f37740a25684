import numpy as np
import pytest

from pseudosal.core import Image
from pseudosal.dataio import SyntheticConfig, generate_synthetic


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(SyntheticConfig(n_images=8, n_test=4, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=16, w=16):
    return Image(rng.random((h, w, 3)).astype(np.float32))


CRITERIA = {
    "c01": "loss oracle", "c02": "gradient check", "c03": "contingency oracle", "c04": "MVA recurrence",
    "c05": "CRF degenerate cases", "c06": "binarization property", "c07": "oracle fusion dominance",
    "c08": "label-quality trend", "c09": "ablation direction", "c10": "determinism",
    "c11": "per-image MAE rank correlation",
}


def pytest_terminal_summary(terminalreporter):
    results = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid or rep.when not in ("call", "setup"):
                continue
            key = nodeid.split("::test_")[1][:3]
            if outcome != "passed" or key not in results:
                results[key] = ("PASS" if outcome == "passed" else "FAIL", dict(rep.user_properties))
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        status, props = results[key]
        extra = "  " + ", ".join(f"{k}={v}" for k, v in props.items()) if props else ""
        terminalreporter.write_line(f"criterion {int(key[1:]):2d} {status}  {CRITERIA[key]}{extra}")
