import numpy as np
import pytest

from cytoarch.celldb import build_cell_db
from cytoarch.config import PopulationConfig, SynthConfig
from cytoarch.features import N_FEATURES
from cytoarch.synth import generate_synthetic_section


def random_db(rng, n=400, sections=("secA", "secB"), height=600, width=600, resolution_um=0.5):
    """Random but well-spread cell database for query / regional tests."""
    ids = [f"c{i:05d}" for i in range(n)]
    secs = [sections[i % len(sections)] for i in range(n)]
    centroids = np.column_stack([
        rng.uniform(0, height, size=n),
        rng.uniform(0, width, size=n),
    ])
    areas = rng.uniform(20, 120, size=n)
    features = rng.normal(0, 10, size=(n, N_FEATURES))
    return build_cell_db(ids, secs, centroids, areas, features, resolution_um=resolution_um)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_section():
    """One 400x400 synthetic section with an oriented central population."""
    cfg = SynthConfig(
        width=400,
        height=400,
        seed=5,
        populations=[
            PopulationConfig(count=70, orientation_kappa=0.0),
            PopulationConfig(
                count=40,
                orientation_mean_deg=-30.0,
                orientation_kappa=8.0,
                polygon=[[100, 100], [300, 100], [300, 300], [100, 300]],
                structure="zone",
            ),
        ],
    )
    return generate_synthetic_section(cfg, "small")
