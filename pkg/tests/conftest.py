import numpy as np
import pytest

from entrovote.volume_io import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_volume(rng):
    return Volume(rng.normal(size=(4, 4, 3)), voxel_size_mm=(1.0, 1.5, 2.0), source_id="fixture")


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    from entrovote.dataset import generate_dataset

    out = tmp_path_factory.mktemp("synth")
    generate_dataset(out, counts=(3, 3, 3), seed=7, extents=(16, 16, 40))
    return out


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
