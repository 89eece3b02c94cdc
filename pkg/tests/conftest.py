import pytest

from placemotion.ingest import SynthSpec, synth_dataset, write_faces, write_photos, write_sites
from placemotion.stats import BootstrapConfig

import report

# The bundled fixture: default SynthSpec at this seed (20 sites, ~50k faces).
GOLDEN_SEED = 42
STUDY_SEED = 7


@pytest.fixture(scope="session")
def golden():
    return synth_dataset(SynthSpec(), GOLDEN_SEED)


@pytest.fixture(scope="session")
def golden_dir(tmp_path_factory, golden):
    sites, photos, faces = golden
    d = tmp_path_factory.mktemp("golden")
    write_sites(d / "sites.csv", sites)
    write_photos(d / "photos.csv", photos)
    write_faces(d / "faces.csv", faces)
    return d


@pytest.fixture(scope="session")
def study_cfg():
    return BootstrapConfig(1000, 0.95, STUDY_SEED)


def pytest_terminal_summary(terminalreporter):
    if not report.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(report.RESULTS):
        terminalreporter.write_line(line)
