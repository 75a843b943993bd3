import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

DATA = os.path.join(os.path.dirname(__file__), "data")


def pytest_addoption(parser):
    parser.addoption("--slow", action="store_true", default=False,
                     help="also run the finest convergence levels")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--slow"):
        return
    skip = pytest.mark.skip(reason="needs --slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def voro_path():
    return os.path.join(DATA, "voro.pm")


@pytest.fixture(scope="session")
def oracle_cases():
    """(name, ElementOperators, CellOracle) for the unit cube and one Kuhn tet."""
    from mhdvem.geometry import entity_measures
    from mhdvem.mesh import build_cube_mesh, build_tet_mesh
    from mhdvem.projectors import element_operators
    from oracles import CellOracle

    out = []
    for name, mesh in (("cube", build_cube_mesh(1)), ("tet", build_tet_mesh(1))):
        op = element_operators(entity_measures(mesh), 0)
        out.append((name, op, CellOracle(mesh, 0)))
    return out
