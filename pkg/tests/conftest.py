import numpy as np
import pytest

from nrreg.mesh import Surface, compute_normals


def grid_mesh(nx, ny, wavy=0.05):
    """Regular (nx, ny) grid over the unit square with an optional sinusoidal
    height field; two triangles per cell."""
    xs, ys = np.meshgrid(np.linspace(0, 1, nx), np.linspace(0, 1, ny), indexing="ij")
    z = wavy * np.sin(2 * np.pi * xs) * np.cos(2 * np.pi * ys)
    verts = np.column_stack([xs.ravel(), ys.ravel(), z.ravel()])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            c = (i + 1) * ny + j + 1
            d = i * ny + j + 1
            faces.append([a, b, c])
            faces.append([a, c, d])
    return Surface(verts, np.array(faces))


def rot_z(angle):
    """Rotation about the z axis by ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def linear_twist(g, max_angle_deg=10.0, lift=0.02):
    """Smooth per-node deformation: rotation about z growing linearly with the
    node's x coordinate (0 to ``max_angle_deg``), plus a linear z lift."""
    x = g.node_positions[:, 0]
    t = (x - x.min()) / max(np.ptp(x), 1e-12)
    rots = np.stack([rot_z(a) for a in np.deg2rad(max_angle_deg) * t])
    trans = np.zeros((g.n_nodes, 3))
    trans[:, 2] = lift * t
    return rots, trans


def polyline_surface(n, spacing=1.0):
    """n collinear points along x joined by explicit edges (no faces)."""
    verts = np.zeros((n, 3))
    verts[:, 0] = spacing * np.arange(n)
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return Surface(verts, None, edges=edges)


@pytest.fixture(scope="session")
def grid25():
    return compute_normals(grid_mesh(25, 25))


@pytest.fixture(scope="session")
def grid9():
    return compute_normals(grid_mesh(9, 9))
