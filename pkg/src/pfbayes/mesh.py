"""Structured quadrilateral meshes for the SENT, DENT and two-voids specimens.

All builders return a :class:`Mesh2D` made of bilinear quads on a regular
lattice. Pre-cracks are not cut into the mesh; they are represented by the
node set ``crack_nodes`` on which the phase field is pinned to zero. Voids are
carved by deactivating the elements whose centroid falls inside a disk.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

# Snap tolerance used when matching node coordinates against geometry lines.
_GEOM_TOL = 1e-9

SENT_NOTCH_Y = 0.5
SENT_NOTCH_LENGTH = 0.5

DENT_WIDTH = 20.0
DENT_HEIGHT = 10.0
DENT_NOTCH_LENGTH = 5.0
DENT_H1 = 5.5
DENT_H2 = 3.5

VOIDS = (
    ((0.21, 0.197), 0.247),
    ((0.7, 0.197), 0.0806),
)


class MeshError(ValueError):
    """Raised for mesh densities that cannot represent the requested geometry."""


@dataclass
class Mesh2D:
    """Quadrilateral mesh with tagged boundaries.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
        Nodal coordinates in mm.
    elements : (n_el, 4) int array
        Counterclockwise connectivity.
    boundary_sets : dict
        ``bottom``, ``top``, ``left``, ``right`` node index arrays.
    crack_nodes : int array
        Nodes where the phase field is held at zero.
    active : (n_el,) bool array
        ``False`` for elements removed to carve voids.
    h : float
        Nominal element edge length.
    shape : (nx, ny)
        Number of elements along x and y; nodes are numbered row by row.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_sets: Dict[str, np.ndarray]
    crack_nodes: np.ndarray
    active: np.ndarray
    h: float
    shape: Tuple[int, int]
    geometry: str = "rectangle"
    meta: Dict[str, float] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def active_elements(self) -> np.ndarray:
        return self.elements[self.active]

    @property
    def active_nodes(self) -> np.ndarray:
        """Boolean mask of nodes touched by at least one active element."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.active_elements.ravel()] = True
        return mask

    def element_areas(self) -> np.ndarray:
        x = self.nodes[self.elements, 0]
        y = self.nodes[self.elements, 1]
        # shoelace formula over the 4 corners
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def lattice(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return the 1D x and y coordinate lines of the underlying lattice."""
        nx, ny = self.shape
        xs = self.nodes[: nx + 1, 0]
        ys = self.nodes[:: nx + 1, 1]
        return xs, ys

    def digest(self) -> str:
        """Content hash, used to key cached random-field bases."""
        m = hashlib.sha1()
        for arr in (self.nodes, self.elements, self.active.astype(np.uint8)):
            m.update(np.ascontiguousarray(arr).tobytes())
        return m.hexdigest()[:16]


def structured_rectangle(
    x0: float,
    x1: float,
    y0: float,
    y1: float,
    nx: int,
    ny: int,
    geometry: str = "rectangle",
) -> Mesh2D:
    """Regular ``nx`` by ``ny`` grid of quads on ``[x0, x1] x [y0, y1]``."""
    if nx < 1 or ny < 1:
        raise MeshError(f"need at least one element per direction, got nx={nx}, ny={ny}")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])

    idx = np.arange(len(nodes)).reshape(ny + 1, nx + 1)
    boundary_sets = {
        "bottom": idx[0, :].copy(),
        "top": idx[-1, :].copy(),
        "left": idx[:, 0].copy(),
        "right": idx[:, -1].copy(),
    }
    h = max((x1 - x0) / nx, (y1 - y0) / ny)
    return Mesh2D(
        nodes=nodes,
        elements=elements.astype(np.int64),
        boundary_sets=boundary_sets,
        crack_nodes=np.zeros(0, dtype=np.int64),
        active=np.ones(len(elements), dtype=bool),
        h=h,
        shape=(nx, ny),
        geometry=geometry,
    )


def _segment_nodes(mesh: Mesh2D, y: float, xa: float, xb: float) -> np.ndarray:
    x, yy = mesh.nodes[:, 0], mesh.nodes[:, 1]
    sel = (np.abs(yy - y) < _GEOM_TOL) & (x >= xa - _GEOM_TOL) & (x <= xb + _GEOM_TOL)
    return np.flatnonzero(sel)


def _on_grid(value: float, n: int) -> bool:
    return abs(value * n - round(value * n)) < 1e-9


def build_sent(n: int) -> Mesh2D:
    """Single edge notched tension specimen on the unit square.

    The notch runs along ``y = 0.5`` from the left edge to the centre, so
    ``n`` must be even.
    """
    if n < 2 or n % 2:
        raise MeshError(f"SENT needs an even element count per side (notch at y=0.5), got n={n}")
    mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, n, n, geometry="sent")
    mesh.crack_nodes = _segment_nodes(mesh, SENT_NOTCH_Y, 0.0, SENT_NOTCH_LENGTH)
    mesh.h = 1.0 / n
    return mesh


def build_dent(
    n: int,
    left_height: float = DENT_H2,
    right_height: float = DENT_H1,
    strict: bool = True,
) -> Mesh2D:
    """Double edge notched tension specimen, 20 mm wide and 10 mm tall.

    Parameters
    ----------
    n : int
        Elements per mm.
    left_height, right_height : float
        Vertical positions of the left and right notches.
    strict : bool
        If true, reject densities whose mesh lines miss a notch. Otherwise the
        notch is snapped to the nearest mesh line.
    """
    if n < 1:
        raise MeshError(f"DENT needs n >= 1, got n={n}")
    for v in (left_height, right_height, DENT_NOTCH_LENGTH):
        if strict and not _on_grid(v, n):
            raise MeshError(f"DENT density n={n} puts no mesh line at {v} mm; use an even n")
    mesh = structured_rectangle(0.0, DENT_WIDTH, 0.0, DENT_HEIGHT, 20 * n, 10 * n, geometry="dent")

    def snap(v):
        return round(v * n) / n

    left = _segment_nodes(mesh, snap(left_height), 0.0, snap(DENT_NOTCH_LENGTH))
    right = _segment_nodes(mesh, snap(right_height), DENT_WIDTH - snap(DENT_NOTCH_LENGTH), DENT_WIDTH)
    mesh.crack_nodes = np.union1d(left, right)
    mesh.meta = {"left_height": left_height, "right_height": right_height}
    mesh.h = 1.0 / n
    return mesh


def build_voids(n: int, voids: Optional[Sequence] = None) -> Mesh2D:
    """Unit square with two circular voids and no pre-crack.

    Elements whose centroid lies strictly inside a void are deactivated.
    """
    if n < 10:
        raise MeshError(f"voids geometry needs n >= 10 to resolve the holes, got n={n}")
    voids = VOIDS if voids is None else voids
    mesh = structured_rectangle(0.0, 1.0, 0.0, 1.0, n, n, geometry="voids")
    c = mesh.centroids()
    inside = np.zeros(mesh.n_elements, dtype=bool)
    for (cx, cy), r in voids:
        inside |= (c[:, 0] - cx) ** 2 + (c[:, 1] - cy) ** 2 < r**2
    mesh.active = ~inside
    mesh.h = 1.0 / n
    return mesh


def build(geometry: str, n: int, **kwargs) -> Mesh2D:
    builders = {"sent": build_sent, "dent": build_dent, "voids": build_voids}
    try:
        builder = builders[geometry]
    except KeyError:
        raise MeshError(f"unknown geometry {geometry!r}; expected one of {sorted(builders)}") from None
    return builder(n, **kwargs)


def void_area(voids: Optional[Sequence] = None) -> float:
    voids = VOIDS if voids is None else voids
    return sum(math.pi * r**2 for _, r in voids)
