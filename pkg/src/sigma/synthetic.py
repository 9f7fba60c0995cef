"""Deterministic synthetic shapes for tests, demos, and experiments."""

import numpy as np

from .meshes import PointCloud, Shape, TriMesh


def right_triangle():
    """Single right triangle (0,0,0), (1,0,0), (0,1,0)."""
    return TriMesh(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        [[0, 1, 2]],
    )


def unit_square():
    """Unit square split into two triangles, CCW seen from +z."""
    verts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
    return TriMesh(verts, [[0, 1, 2], [0, 2, 3]])


def tetrahedron(edge=1.0):
    """Regular tetrahedron with the given edge length, outward winding."""
    v = np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )
    v *= edge / (2.0 * np.sqrt(2.0))
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(v, f)


def cube_mesh(edge=1.0):
    """Axis-aligned cube surface centered at the origin, 12 triangles."""
    h = edge / 2.0
    v = np.array(
        [
            [-h, -h, -h], [h, -h, -h], [h, h, -h], [-h, h, -h],
            [-h, -h, h], [h, -h, h], [h, h, h], [-h, h, h],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [1, 2, 6], [1, 6, 5],  # +x
            [2, 3, 7], [2, 7, 6],  # +y
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return TriMesh(v, f)


def grid_mesh(nx=8, ny=8, width=1.0, height=None):
    """Rectangular grid in the z=0 plane, optionally lifted by height(x, y)."""
    xs = np.linspace(0.0, width, nx)
    ys = np.linspace(0.0, width * (ny - 1) / (nx - 1), ny)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    zz = np.zeros_like(xx) if height is None else height(xx, yy)
    verts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            faces.append([a, b, b + 1])
            faces.append([a, b + 1, a + 1])
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def _icosahedron():
    p = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v, f


def icosphere(subdivisions=2):
    """Unit sphere by midpoint subdivision of an icosahedron."""
    v, f = _icosahedron()
    for _ in range(subdivisions):
        cache = {}
        verts = list(v)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_f = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_f += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v = np.array(verts)
        f = np.array(new_f, dtype=np.int64)
    return TriMesh(v, f)


def bumpy_sphere(subdivisions=2, amplitude=0.2):
    """Asymmetric smooth radial bumps on an icosphere; breaks all symmetries."""
    base = icosphere(subdivisions)
    v = base.vertices
    r = 1.0 + amplitude * (
        0.5 * np.sin(1.7 * v[:, 0] + 0.9)
        + 0.3 * np.cos(2.3 * v[:, 1] - 0.4)
        + 0.2 * np.sin(3.1 * v[:, 2] + 2.0)
    )
    return TriMesh(v * r[:, None], base.faces)


def bar_mesh(segments=14, side=0.5, length=4.0, bend_angle=0.0, per_side=2):
    """Open square tube along x, optionally bent by bend_angle radians.

    Bending wraps the axis around a circle of radius length/bend_angle; the
    cross-sections rotate rigidly, so thin bars stay near-isometric.
    """
    per = 4 * per_side  # points per cross-section ring
    ring = []
    h = side / 2.0
    for i in range(per_side):
        ring.append((-h + side * i / per_side, -h))
    for i in range(per_side):
        ring.append((h, -h + side * i / per_side))
    for i in range(per_side):
        ring.append((h - side * i / per_side, h))
    for i in range(per_side):
        ring.append((-h, h - side * i / per_side))
    ring = np.array(ring)
    verts = []
    for s in range(segments + 1):
        x = length * s / segments
        for y, z in ring:
            verts.append((x, y, z))
    verts = np.array(verts)
    faces = []
    for s in range(segments):
        for r in range(per):
            a = s * per + r
            b = s * per + (r + 1) % per
            c = (s + 1) * per + r
            d = (s + 1) * per + (r + 1) % per
            faces.append([a, b, d])
            faces.append([a, d, c])
    mesh = TriMesh(verts, np.array(faces, dtype=np.int64))
    if bend_angle != 0.0:
        radius = length / bend_angle
        x, y, z = mesh.vertices.T
        beta = x / length * bend_angle
        bent = np.column_stack(
            [np.sin(beta) * (radius + y), np.cos(beta) * (radius + y) - radius, z]
        )
        mesh = TriMesh(bent, mesh.faces)
    return mesh


def twist_warp(mesh, rate=0.15, axis=2):
    """Rotate each vertex around the given axis by rate * coordinate."""
    v = mesh.vertices.copy()
    angle = rate * v[:, axis]
    c, s = np.cos(angle), np.sin(angle)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    vi = c * v[:, i] - s * v[:, j]
    vj = s * v[:, i] + c * v[:, j]
    v[:, i], v[:, j] = vi, vj
    return TriMesh(v, mesh.faces)


def random_rotation(rng, reflect=False):
    """Uniform-ish random rotation (or reflection when requested)."""
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    if reflect:
        q[:, 0] = -q[:, 0]
    return q


def rigid_motion(mesh, rotation, translation):
    return TriMesh(mesh.vertices @ rotation.T + np.asarray(translation), mesh.faces)


def scaled(mesh, factor):
    return TriMesh(mesh.vertices * factor, mesh.faces)


def fps_keypoints(mesh, count, start=0):
    """Farthest-point-sampled keypoint indices on a mesh."""
    from .geodesics import farthest_point_sample

    shape = Shape(mesh, [0])
    return farthest_point_sample(shape, count, start=start)


def near_isometric_pair(seed, n_keypoints=6, subdivisions=2, warp_rate=0.08,
                        scale=1.0, rotate=True):
    """A bumpy sphere and a mildly warped, rigidly moved (optionally scaled) copy.

    Vertex order is shared, so the identity map on keypoints is ground truth.
    """
    rng = np.random.default_rng(seed)
    base = bumpy_sphere(subdivisions=subdivisions, amplitude=0.18)
    warped = twist_warp(base, rate=warp_rate * (0.5 + rng.random()), axis=int(rng.integers(3)))
    if rotate:
        rot = random_rotation(rng)
        trans = rng.uniform(-1.5, 1.5, size=3)
        warped = rigid_motion(warped, rot, trans)
    if scale != 1.0:
        warped = scaled(warped, scale)
    kp = fps_keypoints(base, n_keypoints, start=int(rng.integers(base.n_vertices)))
    return Shape(base, kp, label=f"pair{seed}-x"), Shape(warped, kp, label=f"pair{seed}-y")


def mesh_to_cloud(mesh, knn=8):
    return PointCloud(mesh.vertices.copy(), knn=knn)


def two_cluster_cloud(gap=100.0, n=5, knn=3):
    """Two well-separated blobs; the symmetric kNN graph is disconnected."""
    rng = np.random.default_rng(0)
    a = rng.random((n, 3))
    b = rng.random((n, 3)) + np.array([gap, 0.0, 0.0])
    return PointCloud(np.vstack([a, b]), knn=knn)
