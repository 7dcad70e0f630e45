import numpy as np
import pytest

from qrank.pipeline import build_synthetic


@pytest.fixture(scope="session")
def small_set():
    """12 sources of 32x32 with calibrated PSNR/SSIM and built-in features."""
    ds, images = build_synthetic(12, 32, seed=5)
    return ds, images


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """One full `demo --seed 1` run: (output dir, report, wall seconds)."""
    import json
    import time

    from qrank.cli import run

    out = tmp_path_factory.mktemp("demo") / "seed1"
    t0 = time.perf_counter()
    code = run(["demo", "--seed", "1", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    return out, json.loads((out / "report.json").read_text()), elapsed


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
