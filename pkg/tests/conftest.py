import numpy as np
import pytest

from bf_transport_fem.forms import AssemblyContext, ModelParams
from bf_transport_fem.mesh import BoundaryTag, build_multiplier_partition, build_unit_square

CHANNEL_TAGS = {"left": "inlet", "right": "outlet", "bottom": "wall", "top": "wall"}


def make_params(**kw) -> ModelParams:
    base = dict(nu=0.1, kappa=0.1, forch=1.0, power=3.0, a0=0.5, a1=2.0, phi_in=0.0, dt=0.1, t_final=0.5)
    base.update(kw)
    return ModelParams.derived(**base)


def make_context(n=4, tags=None, **kw) -> AssemblyContext:
    mesh = build_unit_square(n, tags or CHANNEL_TAGS)
    return AssemblyContext(mesh, build_multiplier_partition(mesh), make_params(**kw))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ctx4():
    return make_context(4)


WALL = BoundaryTag.WALL


def parse_legacy_vtk(text):
    """Minimal reader for the ASCII legacy format written by the package."""
    lines = text.splitlines()
    assert lines[0].startswith("# vtk DataFile")
    assert lines[2] == "ASCII"
    out = {"dataset": lines[3].split()[1], "arrays": {}}
    k = 4
    while k < len(lines):
        head = lines[k].split()
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(v) for v in lines[k + 1 + i].split()] for i in range(n)])
            k += n + 1
        elif head[0] in ("CELLS", "LINES"):
            n = int(head[1])
            conn = [list(map(int, lines[k + 1 + i].split())) for i in range(n)]
            assert sum(len(c) for c in conn) == int(head[2])
            out["cells"] = conn
            k += n + 1
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            out["types"] = [int(v) for v in lines[k + 1:k + 1 + n]]
            k += n + 1
        elif head[0] in ("CELL_DATA", "POINT_DATA"):
            out["n_data"] = int(head[1])
            k += 1
        elif head[0] == "SCALARS":
            assert lines[k + 1] == "LOOKUP_TABLE default"
            n = out["n_data"]
            out["arrays"][head[1]] = np.array([float(v) for v in lines[k + 2:k + 2 + n]])
            k += n + 2
        else:
            raise AssertionError(f"unexpected line {lines[k]!r}")
    return out


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: int, ok: bool, detail: str) -> None:
    """Print and remember one pass/fail line for an acceptance criterion."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
