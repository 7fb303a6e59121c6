from pathlib import Path

import pytest

from emrbench import catalog_from_rows, load_catalog

CAT3_ROWS = [
    "heart_rate,vital,hr,1,350,,",
    "creatinine_mg_dl,lab,creatinine,0,30,,",
    "epinephrine_mcg_kg_min,drug,epi,,,1.0,Epinephrine",
]


@pytest.fixture
def cat3():
    """Three-variable catalog: one vital, one lab, one drug."""
    return catalog_from_rows(CAT3_ROWS)


@pytest.fixture(scope="session")
def demo_catalog():
    path = Path(__file__).resolve().parent.parent / "configs" / "demo_catalog.csv"
    return load_catalog(path)


@pytest.fixture(scope="session")
def configs_dir():
    return Path(__file__).resolve().parent.parent / "configs"
