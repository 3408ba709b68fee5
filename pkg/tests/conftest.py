import numpy as np
import pytest

from c2fhand.hierarchy import build_hierarchy
from c2fhand.model import preset_hierarchy
from c2fhand.templates import hand_template, icosahedron


@pytest.fixture(scope="session")
def template():
    return hand_template()


@pytest.fixture(scope="session")
def full_hier(template):
    return build_hierarchy(template, targets=[778, 389, 195, 98])


@pytest.fixture(scope="session")
def desk_hier():
    return preset_hierarchy("desk")


@pytest.fixture(scope="session")
def ico():
    return icosahedron()


@pytest.fixture(scope="session")
def ico_hier(ico):
    return build_hierarchy(ico, targets=[12, 6, 4])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report_line(request):
    """Record one PASS/FAIL line; the lines are echoed live and again in the summary."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number, name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {name}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        else:
            print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
