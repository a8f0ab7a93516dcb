"""File emission: legacy ASCII VTK fields, CSV tables and a plain-text mesh dump.

All writers use a fixed float format and deterministic ordering so that
repeated emission of the same state yields identical bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .assembly import Discretization, DiscreteState
from .basis import LINE

FLOAT = "{:.17g}"


class OutputError(OSError):
    """Writing an artifact failed; the message carries the path."""


def _fmt(v) -> str:
    return FLOAT.format(float(v))


def _write(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _lattice(kind: str, n: int):
    """Sub-sampling points (n per edge) and sub-cells of the unit simplex."""
    if kind == LINE:
        pts = np.linspace(0.0, 1.0, n)[:, None]
        cells = [(i, i + 1) for i in range(n - 1)]
        return pts, cells
    idx = {}
    pts = []
    for j in range(n):
        for i in range(n - j):
            idx[i, j] = len(pts)
            pts.append((i / (n - 1), j / (n - 1)))
    cells = []
    for j in range(n - 1):
        for i in range(n - 1 - j):
            cells.append((idx[i, j], idx[i + 1, j], idx[i, j + 1]))
            if i + j < n - 2:
                cells.append((idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]))
    return np.array(pts), cells


def vtk_text(disc: Discretization, state: DiscreteState, samples_per_edge: int | None = None,
             names=None) -> str:
    """Legacy ASCII unstructured grid; each cell is sub-sampled for curved geometry.

    With linear geometry and ``samples_per_edge=2`` the output cells are the
    grid cells themselves.
    """
    geom = disc.geom
    kind = geom.mesh.kind
    n = samples_per_edge if samples_per_edge is not None else disc.p_y + 2
    if geom.degree == 1 and samples_per_edge is None:
        n = max(2, n)
    pts, sub = _lattice(kind, n)
    phu, _ = disc.U.eval(pts)
    phy, _ = disc.Y.eval(pts)
    nc = geom.mesh.n_cells
    X = np.einsum("qn,cnd->cqd", phu, state.u[geom.cell_nodes])
    Yv = np.einsum("qn,cmn->cqm", phy, state.y)
    m = Yv.shape[-1]
    names = names or [f"y{i}" for i in range(m)]
    npts = nc * len(pts)
    out = io.StringIO()
    out.write("# vtk DataFile Version 3.0\nmdgice solution\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {npts} double\n")
    for c in range(nc):
        for q in range(len(pts)):
            xyz = list(X[c, q]) + [0.0] * (3 - geom.dim)
            out.write(" ".join(_fmt(v) for v in xyz) + "\n")
    vpc = len(sub[0])
    ncells = nc * len(sub)
    out.write(f"CELLS {ncells} {ncells * (vpc + 1)}\n")
    for c in range(nc):
        base = c * len(pts)
        for s in sub:
            out.write(f"{vpc} " + " ".join(str(base + i) for i in s) + "\n")
    ctype = 3 if kind == LINE else 5
    out.write(f"CELL_TYPES {ncells}\n")
    out.write("".join(f"{ctype}\n" for _ in range(ncells)))
    out.write(f"CELL_DATA {ncells}\nSCALARS cell_id int 1\nLOOKUP_TABLE default\n")
    for c in range(nc):
        out.write("".join(f"{c}\n" for _ in sub))
    out.write(f"POINT_DATA {npts}\n")
    for a in range(m):
        out.write(f"SCALARS {names[a]} double 1\nLOOKUP_TABLE default\n")
        out.write("".join(_fmt(v) + "\n" for v in Yv[:, :, a].ravel()))
    return out.getvalue()


def write_vtk(path, disc, state, samples_per_edge=None, names=None) -> Path:
    return _write(path, vtk_text(disc, state, samples_per_edge, names))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return _write(path, csv_text(header, rows))


def read_csv(path) -> tuple[list, list]:
    """Header and rows; numeric fields are returned as floats."""
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))

    def conv(v):
        try:
            return float(v)
        except ValueError:
            return v

    return r[0], [[conv(v) for v in row] for row in r[1:]]


def cell_table(disc: Discretization, state: DiscreteState, n_samples: int = 3):
    """1D grids: one row per cell with its extents and ``n_samples`` state samples."""
    if disc.geom.mesh.kind != LINE:
        raise ValueError("cell table is defined for line grids")
    t = np.linspace(0.0, 1.0, n_samples)[:, None]
    phu, _ = disc.U.eval(t)
    phy, _ = disc.Y.eval(t)
    X = np.einsum("qn,cn->cq", phu, state.u[disc.geom.cell_nodes][:, :, 0])
    Y = np.einsum("qn,cn->cq", phy, state.y[:, 0, :])
    header = ["cell", "x_left", "x_right"] + [f"x{i}" for i in range(n_samples)] + [f"y{i}" for i in range(n_samples)]
    rows = []
    for c in np.argsort(X[:, 0], kind="stable"):
        rows.append([int(c), float(X[c].min()), float(X[c].max()), *map(float, X[c]), *map(float, Y[c])])
    return header, rows


def mesh_text(disc: Discretization, state: DiscreteState) -> str:
    """Plain-text grid dump: reference vertices, cells, geometry nodes, tagged boundary facets."""
    mesh, geom = disc.geom.mesh, disc.geom
    out = io.StringIO()
    out.write(f"dim {mesh.dim}\nkind {mesh.kind}\ngeometry_degree {geom.degree}\n")
    out.write(f"vertices {len(mesh.vertices)}\n")
    for v in mesh.vertices:
        out.write(" ".join(_fmt(a) for a in v) + "\n")
    out.write(f"cells {mesh.n_cells}\n")
    for c in geom.cell_nodes:
        out.write(" ".join(str(int(i)) for i in c) + "\n")
    out.write(f"nodes {geom.n_nodes}\n")
    for x in state.u:
        out.write(" ".join(_fmt(a) for a in x) + "\n")
    bf = mesh.boundary_facets
    out.write(f"boundary_facets {len(bf)}\n")
    for f in bf:
        out.write(" ".join(str(int(v)) for v in mesh.facet_vertices[f]) + f" {mesh.facet_tags[f]}\n")
    return out.getvalue()


def write_mesh(path, disc, state) -> Path:
    return _write(path, mesh_text(disc, state))


def read_mesh_nodes(path) -> np.ndarray:
    """Geometry node coordinates back from a mesh dump."""
    lines = Path(path).read_text().splitlines()
    i = next(k for k, ln in enumerate(lines) if ln.startswith("nodes "))
    n = int(lines[i].split()[1])
    return np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + n]])
