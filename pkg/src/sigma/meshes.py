"""Triangle meshes, point clouds, and shape I/O.

Meshes are vertex/face arrays with counter-clockwise winding assumed and
never reoriented; point clouds are bare point sets with a neighborhood size
used to build graph operators. A Shape bundles geometry with the sparse
keypoints that drive matching.
"""

import hashlib
import json
import logging
import warnings
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateNormal,
    ParseError,
    ValidationError,
)

log = logging.getLogger(__name__)

# Faces whose area falls below this fraction of the squared bounding-box
# diagonal are rejected at load time.
EPS_AREA_FACTOR = 1e-12


def _as_vertices(arr, what="vertices"):
    v = np.ascontiguousarray(arr, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ValidationError(f"{what} must be (N, 3), got {v.shape}")
    if v.shape[0] == 0:
        raise ValidationError(f"{what} are empty")
    if not np.isfinite(v).all():
        raise ValidationError(f"{what} contain non-finite values")
    return v


class TriMesh:
    """Triangle mesh with cached derived quantities.

    Parameters
    ----------
    vertices : (N, 3) array_like
        Vertex positions.
    faces : (F, 3) array_like
        Vertex indices per triangle, counter-clockwise when viewed from
        outside. Winding is taken as given and never repaired.

    Raises
    ------
    ValidationError
        On out-of-range indices, repeated indices within a face, or a face
        area below 1e-12 times the squared bounding-box diagonal.
    """

    def __init__(self, vertices, faces):
        self.vertices = _as_vertices(vertices)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError(f"faces must be (F, 3), got {f.shape}")
        self.faces = f
        self._validate()
        self._face_areas = None
        self._face_normals = None
        self._vertex_normals = None

    def _validate(self):
        n = len(self.vertices)
        f = self.faces
        if f.size and (f.min() < 0 or f.max() >= n):
            bad = int(np.argmax((f < 0).any(axis=1) | (f >= n).any(axis=1)))
            raise ValidationError(f"face {bad} references vertex out of range [0, {n})")
        same = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if same.any():
            raise ValidationError(f"face {int(np.argmax(same))} repeats a vertex index")
        eps = EPS_AREA_FACTOR * self.squared_bbox_diagonal()
        areas = self._compute_face_areas()
        small = areas < eps
        if small.any():
            raise ValidationError(
                f"face {int(np.argmax(small))} is degenerate "
                f"(area {areas[small].min():.3e} < {eps:.3e})"
            )
        if not self._edges_manifold():
            warnings.warn("mesh has non-manifold edges; proceeding", stacklevel=3)

    def _edges_manifold(self):
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool((counts <= 2).all())

    def squared_bbox_diagonal(self):
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.dot(span, span))

    def _compute_face_areas(self):
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    @property
    def face_areas(self):
        if self._face_areas is None:
            self._face_areas = self._compute_face_areas()
        return self._face_areas

    @property
    def face_normals(self):
        """Unit face normals following the stored winding."""
        if self._face_normals is None:
            v, f = self.vertices, self.faces
            cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            self._face_normals = cross / np.linalg.norm(cross, axis=1, keepdims=True)
        return self._face_normals

    @property
    def vertex_normals(self):
        """Area-weighted vertex normals, unit length.

        Raises
        ------
        DegenerateNormal
            If the incident face normals of some vertex cancel below 1e-12.
        """
        if self._vertex_normals is None:
            v, f = self.vertices, self.faces
            # cross product magnitude is twice the face area, so summing raw
            # cross products is already area weighting
            cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            acc = np.zeros_like(v)
            for c in range(3):
                np.add.at(acc, f[:, c], cross)
            norms = np.linalg.norm(acc, axis=1)
            bad = norms < 1e-12
            if bad.any():
                raise DegenerateNormal(int(np.argmax(bad)))
            self._vertex_normals = acc / norms[:, None]
        return self._vertex_normals

    def edges(self):
        """Unique undirected edges as an (E, 2) int array, sorted rows."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def winding_conflicts(self):
        """Directed edges traversed twice in the same direction.

        A consistently wound orientable mesh traverses each interior edge once
        per direction; repeats signal flipped faces. Returns an (K, 2) array
        of offending directed edges (possibly empty).
        """
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts > 1]

    @property
    def n_vertices(self):
        return len(self.vertices)


class PointCloud:
    """Point set with a symmetric k-nearest-neighbor graph size.

    Exactly coincident duplicate points are removed at construction; the
    old-index -> new-index remap is kept on ``remap`` and logged.
    """

    def __init__(self, points, knn=8):
        pts = _as_vertices(points, "points")
        uniq, remap = np.unique(pts, axis=0, return_inverse=True)
        if len(uniq) != len(pts):
            # np.unique sorts; restore first-occurrence order for stability
            first = np.full(len(uniq), len(pts), dtype=np.int64)
            np.minimum.at(first, remap, np.arange(len(pts)))
            order = np.argsort(first, kind="stable")
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            uniq = uniq[order]
            remap = rank[remap]
            log.warning("deduplicated %d coincident points", len(pts) - len(uniq))
            self.points = np.ascontiguousarray(uniq)
            self.remap = remap
        else:
            self.points = pts
            self.remap = np.arange(len(pts), dtype=np.int64)
        if knn < 1:
            raise ValidationError(f"knn must be >= 1, got {knn}")
        self.knn = int(knn)

    @property
    def vertices(self):
        return self.points

    @property
    def n_vertices(self):
        return len(self.points)


class Shape:
    """Geometry plus the sparse keypoints used for matching.

    Parameters
    ----------
    geometry : TriMesh or PointCloud
    keypoints : (n,) array_like of int
        Distinct, in-range vertex indices.
    label : str, optional
        Free-form identifier used in logs and output files.
    """

    def __init__(self, geometry, keypoints, label=""):
        if not isinstance(geometry, (TriMesh, PointCloud)):
            raise ValidationError(f"unsupported geometry type {type(geometry)!r}")
        self.geometry = geometry
        kp = np.ascontiguousarray(keypoints, dtype=np.int64).ravel()
        if kp.size == 0:
            raise ValidationError("keypoints are empty")
        n = geometry.n_vertices
        if kp.min() < 0 or kp.max() >= n:
            raise ValidationError(f"keypoint index out of range [0, {n})")
        if len(np.unique(kp)) != len(kp):
            raise ValidationError("keypoints contain duplicates")
        self.keypoints = kp
        self.label = label
        self.source_path = None  # set when loaded from disk
        self._diameter = None
        self._adjacency = None  # lazily built edge-length graph (meshes)

    @property
    def is_mesh(self):
        return isinstance(self.geometry, TriMesh)

    @property
    def vertices(self):
        return self.geometry.vertices

    @property
    def n_keypoints(self):
        return len(self.keypoints)

    @property
    def keypoint_coords(self):
        return self.vertices[self.keypoints]

    @property
    def diameter(self):
        """Shape diameter: geodesic for meshes, Euclidean for point clouds."""
        if self._diameter is None:
            from .geodesics import shape_diameter

            self._diameter = shape_diameter(self).value
        return self._diameter


def vertex_normals(mesh):
    """Area-weighted unit vertex normals of a TriMesh."""
    return mesh.vertex_normals


def face_areas(mesh):
    """Per-face areas of a TriMesh."""
    return mesh.face_areas


def content_hash(shape):
    """SHA-256 over geometry and keypoint bytes; stable across runs."""
    h = hashlib.sha256()
    g = shape.geometry
    h.update(np.ascontiguousarray(g.vertices).tobytes())
    if isinstance(g, TriMesh):
        h.update(np.ascontiguousarray(g.faces).tobytes())
    else:
        h.update(str(g.knn).encode())
    h.update(np.ascontiguousarray(shape.keypoints).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# parsing helpers


def _fan_split(poly, path, line):
    if len(poly) < 3:
        raise ParseError(path, f"face with {len(poly)} vertices", line)
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _tokens(path):
    """Yield (line_number, tokens) for non-empty, non-comment lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield i, line.split()


def _read_off(path):
    it = _tokens(path)
    try:
        ln, tok = next(it)
    except StopIteration:
        raise ParseError(path, "empty file") from None
    if tok[0] != "OFF":
        raise ParseError(path, f"expected OFF header, got {tok[0]!r}", ln)
    tok = tok[1:]
    if not tok:
        ln, tok = next(it, (ln, None))
        if tok is None:
            raise ParseError(path, "missing element counts", ln)
    try:
        nv, nf = int(tok[0]), int(tok[1])
    except (IndexError, ValueError):
        raise ParseError(path, f"bad element counts {' '.join(tok)!r}", ln) from None
    verts, faces = [], []
    for _ in range(nv):
        ln, tok = next(it, (ln, None))
        if tok is None or len(tok) < 3:
            raise ParseError(path, "truncated vertex list", ln)
        try:
            verts.append([float(tok[0]), float(tok[1]), float(tok[2])])
        except ValueError:
            raise ParseError(path, f"bad vertex line {' '.join(tok)!r}", ln) from None
    for _ in range(nf):
        ln, tok = next(it, (ln, None))
        if tok is None:
            raise ParseError(path, "truncated face list", ln)
        try:
            cnt = int(tok[0])
            poly = [int(t) for t in tok[1 : 1 + cnt]]
        except ValueError:
            raise ParseError(path, f"bad face line {' '.join(tok)!r}", ln) from None
        if len(poly) != cnt:
            raise ParseError(path, f"face promises {cnt} indices, has {len(poly)}", ln)
        faces.extend(_fan_split(poly, path, ln))
    return np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_ply(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
    if magic != b"ply":
        raise ParseError(path, "missing ply magic", 1)
    elements = []  # (name, count, [properties])
    header_lines = 0
    body = []
    with open(path, "r", encoding="utf-8") as fh:
        in_header = True
        for i, raw in enumerate(fh, start=1):
            line = raw.strip()
            if in_header:
                header_lines = i
                tok = line.split()
                if not tok:
                    continue
                if tok[0] == "format":
                    if tok[1] != "ascii":
                        raise ParseError(path, f"unsupported ply format {tok[1]!r}", i)
                elif tok[0] == "element":
                    elements.append((tok[1], int(tok[2]), []))
                elif tok[0] == "property":
                    if not elements:
                        raise ParseError(path, "property before element", i)
                    elements[-1][2].append(tok[1:])
                elif tok[0] == "end_header":
                    in_header = False
            else:
                if line:
                    body.append((i, line.split()))
    if in_header:
        raise ParseError(path, "unterminated header", header_lines)
    verts, faces = [], []
    cursor = 0
    for name, count, props in elements:
        rows = body[cursor : cursor + count]
        if len(rows) < count:
            raise ParseError(path, f"element {name} truncated", rows[-1][0] if rows else None)
        cursor += count
        if name == "vertex":
            names = [p[-1] for p in props]
            try:
                ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
            except ValueError:
                raise ParseError(path, "vertex element lacks x/y/z") from None
            for ln, tok in rows:
                try:
                    verts.append([float(tok[ix]), float(tok[iy]), float(tok[iz])])
                except (ValueError, IndexError):
                    raise ParseError(path, f"bad vertex line {' '.join(tok)!r}", ln) from None
        elif name == "face":
            for ln, tok in rows:
                try:
                    cnt = int(tok[0])
                    poly = [int(t) for t in tok[1 : 1 + cnt]]
                except ValueError:
                    raise ParseError(path, f"bad face line {' '.join(tok)!r}", ln) from None
                if len(poly) != cnt:
                    raise ParseError(path, f"face promises {cnt} indices, has {len(poly)}", ln)
                faces.extend(_fan_split(poly, path, ln))
    if not verts:
        raise ParseError(path, "no vertex element")
    return np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_obj(path):
    verts, faces = [], []
    for ln, tok in _tokens(path):
        if tok[0] == "v":
            try:
                verts.append([float(tok[1]), float(tok[2]), float(tok[3])])
            except (ValueError, IndexError):
                raise ParseError(path, f"bad vertex line {' '.join(tok)!r}", ln) from None
        elif tok[0] == "f":
            poly = []
            for part in tok[1:]:
                head = part.split("/")[0]
                try:
                    idx = int(head)
                except ValueError:
                    raise ParseError(path, f"bad face index {part!r}", ln) from None
                if idx <= 0:
                    raise ParseError(path, f"non-positive face index {idx}", ln)
                poly.append(idx - 1)  # OBJ indices are 1-based
            faces.extend(_fan_split(poly, path, ln))
    if not verts:
        raise ParseError(path, "no vertices found")
    return np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_xyz(path):
    pts = []
    for ln, tok in _tokens(path):
        try:
            pts.append([float(tok[0]), float(tok[1]), float(tok[2])])
        except (ValueError, IndexError):
            raise ParseError(path, f"bad point line {' '.join(tok)!r}", ln) from None
    if not pts:
        raise ParseError(path, "no points found")
    return np.array(pts)


def load_keypoints(path):
    """Read keypoints: plain text (one index per line) or JSON {"indices": [...]}."""
    path = Path(path)
    if not path.exists():
        raise ParseError(path, "keypoint file not found")
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(path, f"bad JSON: {exc}", exc.lineno) from None
        if "indices" not in obj:
            raise ParseError(path, 'JSON keypoints need an "indices" key')
        return np.ascontiguousarray(obj["indices"], dtype=np.int64)
    vals = []
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals.append(int(line))
        except ValueError:
            raise ParseError(path, f"bad keypoint index {line!r}", i) from None
    if not vals:
        raise ParseError(path, "no keypoint indices found")
    return np.array(vals, dtype=np.int64)


def _merge_duplicate_vertices(verts, faces, tol=1e-12):
    from scipy.spatial import cKDTree

    tree = cKDTree(verts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return verts, faces, np.arange(len(verts), dtype=np.int64)
    parent = np.arange(len(verts), dtype=np.int64)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(verts))])
    keep = np.unique(roots)
    new_of_old = np.full(len(verts), -1, dtype=np.int64)
    new_of_old[keep] = np.arange(len(keep))
    remap = new_of_old[roots]
    new_faces = remap[faces]
    ok = (
        (new_faces[:, 0] != new_faces[:, 1])
        & (new_faces[:, 1] != new_faces[:, 2])
        & (new_faces[:, 0] != new_faces[:, 2])
    )
    if not ok.all():
        warnings.warn(f"dropped {int((~ok).sum())} faces collapsed by vertex merge", stacklevel=3)
    return verts[keep], new_faces[ok], remap


_MESH_READERS = {".off": _read_off, ".obj": _read_obj}


def load_shape(path, keypoints_path=None, *, merge_duplicates=False, knn=8,
               check_orientation=False, label=None):
    """Load a Shape from an OFF/PLY/OBJ mesh or XYZ/PLY point file.

    Parameters
    ----------
    path : str or Path
        Geometry file; the suffix selects the format. A PLY without faces
        loads as a point cloud.
    keypoints_path : str or Path, optional
        Keypoint indices (plain text or JSON). Without it the shape gets a
        single keypoint at vertex 0, which is enough for feature dumps.
    merge_duplicates : bool
        Merge mesh vertices closer than 1e-12 (off by default).
    knn : int
        Neighborhood size stored on point clouds.
    check_orientation : bool
        Emit a warning listing directed edges traversed twice in the same
        direction (winding conflicts). Purely diagnostic.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(path, "shape file not found")
    suffix = path.suffix.lower()
    kp_remap = None
    if suffix in _MESH_READERS:
        verts, faces = _MESH_READERS[suffix](path)
        geometry, kp_remap = _build_mesh(verts, faces, path, merge_duplicates)
    elif suffix == ".ply":
        verts, faces = _read_ply(path)
        if len(faces):
            geometry, kp_remap = _build_mesh(verts, faces, path, merge_duplicates)
        else:
            geometry = PointCloud(verts, knn=knn)
            kp_remap = geometry.remap
    elif suffix == ".xyz":
        geometry = PointCloud(_read_xyz(path), knn=knn)
        kp_remap = geometry.remap
    else:
        raise ParseError(path, f"unsupported shape format {suffix!r}")
    if check_orientation and isinstance(geometry, TriMesh):
        conflicts = geometry.winding_conflicts()
        if len(conflicts):
            warnings.warn(
                f"{path}: {len(conflicts)} directed edges repeat; winding is inconsistent",
                stacklevel=2,
            )
    if keypoints_path is not None:
        kp = load_keypoints(keypoints_path)
        if kp_remap is not None:
            if kp.min() < 0 or kp.max() >= len(kp_remap):
                raise ValidationError(f"keypoint index out of range [0, {len(kp_remap)})")
            kp = kp_remap[kp]
    else:
        kp = np.array([0], dtype=np.int64)
    shape = Shape(geometry, kp, label=label if label is not None else path.stem)
    shape.source_path = str(path)
    return shape


def _build_mesh(verts, faces, path, merge_duplicates):
    remap = None
    if merge_duplicates:
        verts, faces, remap = _merge_duplicate_vertices(verts, faces)
    try:
        return TriMesh(verts, faces), remap
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_off(path, vertices, faces):
    """Raw OFF writer (no validation, repr floats for bitwise round-trips).

    Used for reconstructions too, which may legitimately contain collapsed
    triangles that TriMesh construction would reject.
    """
    lines = ["OFF", f"{len(vertices)} {len(faces)} 0"]
    lines += [" ".join(repr(float(x)) for x in v) for v in np.asarray(vertices)]
    lines += [f"3 {int(f[0])} {int(f[1])} {int(f[2])}" for f in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_xyz(path, points):
    lines = [" ".join(repr(float(x)) for x in p) for p in np.asarray(points)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_shape(shape, path, keypoints_path=None):
    """Write a Shape back to disk (OFF for meshes, XYZ for clouds).

    Floats are written with repr precision so a reload is bitwise equal.
    """
    path = Path(path)
    g = shape.geometry
    if isinstance(g, TriMesh):
        if path.suffix.lower() != ".off":
            raise ValidationError(f"meshes are saved as .off, got {path.suffix!r}")
        write_off(path, g.vertices, g.faces)
    else:
        if path.suffix.lower() != ".xyz":
            raise ValidationError(f"point clouds are saved as .xyz, got {path.suffix!r}")
        write_xyz(path, g.points)
    if keypoints_path is not None:
        Path(keypoints_path).write_text(
            "\n".join(str(i) for i in shape.keypoints) + "\n", encoding="utf-8"
        )
    return path
