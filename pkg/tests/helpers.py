import numpy as np

from pfbayes.mesh import structured_rectangle


def strip_mesh(ell, n_per_ell=10, half_length=10.0, height_elems=2):
    """Strip (-L, L) x (0, H) with L = half_length * ell and a d = 0 line at x = 0."""
    L = half_length * ell
    nx = int(round(2 * L / ell * n_per_ell))
    h = ell / n_per_ell
    mesh = structured_rectangle(-L, L, 0.0, height_elems * h, nx, height_elems)
    mesh.crack_nodes = np.flatnonzero(np.abs(mesh.nodes[:, 0]) < 1e-12)
    return mesh
