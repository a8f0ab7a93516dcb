import numpy as np
import pytest

from mdgice.assembly import Discretization, Outflow
from mdgice.cases import BoundaryLayerConfig, boundary_layer_problem
from mdgice.mesh import build_triangulated_grid
from mdgice.output import (
    OutputError,
    cell_table,
    csv_text,
    mesh_text,
    read_csv,
    read_mesh_nodes,
    vtk_text,
    write_csv,
    write_mesh,
    write_vtk,
)
from mdgice.physics import Burgers


def _line_state():
    pr = boundary_layer_problem(2, BoundaryLayerConfig())
    st = pr.disc.state_from_functions(lambda x: x[:, 0] ** 2)
    return pr.disc, st


def _grid_state(n=10, degree=1):
    mesh, geom = build_triangulated_grid(n, n, degree=degree)
    disc = Discretization(geom, Burgers(1e-3, spacetime=True), 1, bcs={t: Outflow() for t in mesh.tags()})
    return disc, disc.state_from_functions(lambda x: np.sin(x[:, 0]) + x[:, 1])


def test_cell_table_for_eight_cells():
    disc, st = _line_state()
    header, rows = cell_table(disc, st)
    assert len(rows) == 8
    assert header[:3] == ["cell", "x_left", "x_right"]
    lefts = [r[1] for r in rows]
    rights = [r[2] for r in rows]
    np.testing.assert_allclose(lefts[1:], rights[:-1])
    assert lefts[0] == 0.0 and rights[-1] == 1.0
    # samples are y = x^2 at the sampled positions
    for r in rows:
        np.testing.assert_allclose(np.array(r[6:9]), np.array(r[3:6]) ** 2, atol=1e-12)


def test_cell_table_needs_line_grid():
    disc, st = _grid_state(2)
    with pytest.raises(ValueError):
        cell_table(disc, st)


def test_vtk_linear_grid_has_one_output_cell_per_cell():
    disc, st = _grid_state(10)
    text = vtk_text(disc, st, samples_per_edge=2)
    assert "CELLS 200 800" in text
    assert "CELL_TYPES 200" in text
    assert "POINT_DATA 600" in text
    assert text.startswith("# vtk DataFile Version 3.0\n")


def test_vtk_oversamples_curved_cells():
    disc, st = _grid_state(2, degree=2)
    text = vtk_text(disc, st)
    n = disc.p_y + 2
    assert f"CELLS {8 * (n - 1) ** 2} " in text


def test_emission_is_byte_stable(tmp_path):
    disc, st = _grid_state(3, degree=2)
    a = write_vtk(tmp_path / "a.vtk", disc, st).read_bytes()
    b = write_vtk(tmp_path / "b.vtk", disc, st).read_bytes()
    assert a == b
    assert write_mesh(tmp_path / "m1.txt", disc, st).read_bytes() == write_mesh(tmp_path / "m2.txt", disc, st).read_bytes()


def test_mesh_dump_round_trip(tmp_path):
    disc, st = _grid_state(3, degree=2)
    st.u = st.u + 1e-3 * np.random.default_rng(0).standard_normal(st.u.shape)
    path = write_mesh(tmp_path / "mesh.txt", disc, st)
    np.testing.assert_array_equal(read_mesh_nodes(path), st.u)
    assert "boundary_facets 12" in mesh_text(disc, st)


def test_metrics_csv_round_trip(tmp_path):
    header = ["status", "error", "ratio"]
    rows = [["converged", 0.1 + 0.2, 1e-17]]
    path = write_csv(tmp_path / "metrics.csv", header, rows)
    h, back = read_csv(path)
    assert h == header
    assert back == rows
    assert csv_text(header, rows) == path.read_text()


def test_write_failure_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError, match="file"):
        write_csv(blocker / "sub" / "m.csv", ["a"], [[1.0]])
