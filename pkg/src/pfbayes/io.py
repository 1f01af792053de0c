"""File emission: legacy VTK snapshots, CSV tables and JSON metadata sidecars."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

from .mesh import Mesh2D

VTK_QUAD = 9


def write_vtk(
    path,
    mesh: Mesh2D,
    point_scalars: Optional[Mapping[str, np.ndarray]] = None,
    point_vectors: Optional[Mapping[str, np.ndarray]] = None,
    cell_scalars: Optional[Mapping[str, np.ndarray]] = None,
    title: str = "phase-field snapshot",
) -> None:
    """Write an unstructured grid in legacy ASCII VTK 3.0 format.

    Only active elements are written. Vectors are given as flat nodal
    ``(u_x, u_y)`` pairs or ``(n_nodes, 2)`` arrays and padded with ``z = 0``.
    """
    elems = mesh.elements[mesh.active]
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {len(elems)} {5 * len(elems)}")
    lines += ["4 " + " ".join(str(int(i)) for i in e) for e in elems]
    lines.append(f"CELL_TYPES {len(elems)}")
    lines += [str(VTK_QUAD)] * len(elems)

    if point_scalars or point_vectors:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in (point_scalars or {}).items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in np.asarray(values, dtype=float)]
        for name, values in (point_vectors or {}).items():
            v = np.asarray(values, dtype=float).reshape(mesh.n_nodes, 2)
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.17g} {b:.17g} 0" for a, b in v]
    if cell_scalars:
        lines.append(f"CELL_DATA {len(elems)}")
        for name, values in cell_scalars.items():
            vals = np.asarray(values, dtype=float)
            if len(vals) == mesh.n_elements:
                vals = vals[mesh.active]
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in vals]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_header(path) -> Dict[str, int]:
    """Counts of points, cells and quad cell types in a file written by :func:`write_vtk`."""
    out = {}
    with open(path) as fh:
        tokens = fh.read().split("\n")
    for i, line in enumerate(tokens):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "POINTS":
            out["points"] = int(parts[1])
        elif parts[0] == "CELLS":
            out["cells"] = int(parts[1])
        elif parts[0] == "CELL_TYPES":
            n = int(parts[1])
            out["quads"] = sum(1 for t in tokens[i + 1 : i + 1 + n] if t.strip() == str(VTK_QUAD))
    out["version"] = tokens[0].strip()
    return out


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_metadata(path, meta: Mapping) -> None:
    Path(path).write_text(json.dumps(_jsonable(dict(meta)), indent=2, sort_keys=True) + "\n")


def read_metadata(path) -> dict:
    return json.loads(Path(path).read_text())


def code_version() -> str:
    """Hash of the package sources, recorded in metadata sidecars."""
    h = hashlib.sha1()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:12]
