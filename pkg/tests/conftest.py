import numpy as np
import pytest
from hypothesis import settings

from gridy import kernels

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_ACCEPTANCE = []

BACKENDS = ["python"] + (["compiled"] if kernels.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.load_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report_criterion():
    def report(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sim_dir(tmp_path_factory):
    """A small simulated study (2K = 10) written in the block format, with its truth."""
    from gridy.data import write_dataset
    from gridy.simulation import SimulationConfig, simulate_dataset, write_truth

    root = tmp_path_factory.mktemp("sim")
    ds, truth = simulate_dataset(SimulationConfig(d=20, T=120, K=5, c=2.0, seed=21))
    manifest = write_dataset(ds, root)
    write_truth(truth, root / "truth.json", subjects=ds.subjects)
    return manifest
