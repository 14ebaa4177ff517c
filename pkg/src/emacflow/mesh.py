"""Triangular meshes: rectangle grids, the cylinder benchmark domain,
and Gmsh MSH 2.2 import.

All meshes are straight-edged. The cylinder benchmark domain is
(-30,300) x (-30,30) minus the unit disk; the cylinder is approximated
by an inscribed polygon whose vertices lie exactly on the unit circle.
Construction is deterministic, so meshes are byte-stable across runs.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# Boundary tags
OUTER = "Outer"
CYLINDER = "Cylinder"
WALL = "Wall"

# Benchmark geometry
X_MIN, X_MAX = -30.0, 300.0
Y_MIN, Y_MAX = -30.0, 30.0
NEAR_HALF = 5.0          # half side of the refinement square around the cylinder
MORPH_RADIUS = 3.0       # radius where annulus rings start morphing to the square


class MeshError(Exception):
    """Invalid mesh construction or import."""


@dataclass
class Mesh:
    """Straight-edged triangulation with tagged boundary edges.

    vertices       -- (nv, 2) float64
    triangles      -- (nt, 3) int32, counterclockwise
    boundary_edges -- (nb, 2) int32 vertex pairs
    boundary_tags  -- list of nb tag strings, parallel to boundary_edges
    region_id      -- optional (nt,) integer marker
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: list
    region_id: np.ndarray = None
    _edges: np.ndarray = field(default=None, repr=False)
    _tri_edges: np.ndarray = field(default=None, repr=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edges(self):
        """Unique mesh edges as a sorted (ne, 2) array (cached)."""
        if self._edges is None:
            self._build_edges()
        return self._edges

    def triangle_edges(self):
        """(nt, 3) indices into edges(); edge i is opposite to... local
        edges are (0,1), (1,2), (2,0)."""
        if self._tri_edges is None:
            self._build_edges()
        return self._tri_edges

    def _build_edges(self):
        t = self.triangles
        raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        raw.sort(axis=1)
        uniq, inv = np.unique(raw, axis=0, return_inverse=True)
        self._edges = uniq.astype(np.int64)
        self._tri_edges = inv.reshape(3, -1).T.copy()

    def boundary_tag_names(self):
        return sorted(set(self.boundary_tags))

    def hash(self):
        """Stable fingerprint used by checkpoint files."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype=np.int32).tobytes())
        h.update(np.ascontiguousarray(self.boundary_edges, dtype=np.int32).tobytes())
        h.update("|".join(self.boundary_tags).encode())
        return h.hexdigest()[:16]

    def dump(self, path):
        """Plain-text vertex/triangle/edge listing for debugging."""
        with open(path, "w") as f:
            f.write(f"vertices {self.num_vertices}\n")
            for x, y in self.vertices:
                f.write(f"{x!r} {y!r}\n")
            f.write(f"triangles {self.num_triangles}\n")
            for a, b, c in self.triangles:
                f.write(f"{a} {b} {c}\n")
            f.write(f"boundary_edges {len(self.boundary_tags)}\n")
            for (a, b), tag in zip(self.boundary_edges, self.boundary_tags):
                f.write(f"{a} {b} {tag}\n")


@dataclass
class MeshSpec:
    """Mesh request: built-in rectangle, cylinder benchmark, or import.

    For the benchmark, ``level`` sets the base size h_max = 8 * 2**-level;
    the side-10 square around the origin is meshed at about h_max/2 and
    the cylinder surface at h_max/100.
    """

    kind: str = "cylinder-benchmark"
    level: int = 0
    x_range: tuple = (0.0, 1.0)
    y_range: tuple = (0.0, 1.0)
    nx: int = 1
    ny: int = 1
    path: str = None
    tag_map: dict = None

    def build(self):
        if self.kind == "rect":
            return build_rect_mesh(self.x_range, self.y_range, self.nx, self.ny)
        if self.kind == "cylinder-benchmark":
            return build_cylinder_mesh(self)
        if self.kind == "import":
            return import_msh(self.path, tag_map=self.tag_map)
        raise MeshError(f"unknown mesh kind {self.kind!r}")


# ---------------------------------------------------------------------------
# validation

def validate_mesh(mesh, cylinder_tag=None):
    """Check all Mesh invariants; raise MeshError on the first violation."""
    areas = mesh.triangle_areas()
    if np.any(areas <= 0):
        bad = int(np.argmin(areas))
        raise MeshError(f"triangle {bad} has non-positive area {areas[bad]:.3e}")

    t = mesh.triangles
    raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    raw.sort(axis=1)
    uniq, counts = np.unique(raw, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge: appears in more than two triangles")

    topo_boundary = {tuple(e) for e in uniq[counts == 1]}
    tagged = {tuple(sorted(e)) for e in mesh.boundary_edges}
    if topo_boundary != tagged:
        missing = topo_boundary - tagged
        extra = tagged - topo_boundary
        raise MeshError(
            f"tagged boundary does not cover the topological boundary "
            f"({len(missing)} missing, {len(extra)} spurious edges)"
        )
    if len(mesh.boundary_tags) != len(mesh.boundary_edges):
        raise MeshError("boundary tag list length mismatch")

    if cylinder_tag is not None:
        vids = set()
        for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            if tag == cylinder_tag:
                vids.update((int(a), int(b)))
        if vids:
            pts = mesh.vertices[sorted(vids)]
            r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
            if np.max(np.abs(r2 - 1.0)) > 1e-12:
                raise MeshError("cylinder vertex off the unit circle")
    return True


# ---------------------------------------------------------------------------
# rectangle meshes

def build_rect_mesh(x_range, y_range, nx, ny, tag=WALL):
    """Structured triangulation of a rectangle, diagonals alternating by
    cell parity. All boundary edges carry ``tag``."""
    x0, x1 = map(float, x_range)
    y0, y1 = map(float, y_range)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {x_range} x {y_range}")
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    triangles = np.array(tris, dtype=np.int32)

    edges = []
    for i in range(nx):
        edges.append((vid(i, 0), vid(i + 1, 0)))
        edges.append((vid(i, ny), vid(i + 1, ny)))
    for j in range(ny):
        edges.append((vid(0, j), vid(0, j + 1)))
        edges.append((vid(nx, j), vid(nx, j + 1)))
    boundary_edges = np.array(edges, dtype=np.int32)
    mesh = Mesh(vertices, triangles, boundary_edges, [tag] * len(edges))
    validate_mesh(mesh)
    return mesh


# ---------------------------------------------------------------------------
# cylinder benchmark mesh

def _graded_steps(length, s0, s_max, growth=1.3):
    """Step sizes filling ``length``, starting near s0 and growing
    geometrically up to s_max, rescaled to fit exactly."""
    steps = []
    s = s0
    total = 0.0
    while total < length:
        steps.append(s)
        total += s
        s = min(s * growth, s_max)
    return [st * length / total for st in steps]


def _axis(inner_lo, inner_hi, outer_lo, outer_hi, s_inner, s_max):
    """1D graded coordinate array: uniform spacing s_inner on the inner
    interval, geometric growth to s_max outside. Inner endpoints are exact
    grid points."""
    n_in = max(1, round((inner_hi - inner_lo) / s_inner))
    coords = list(np.linspace(inner_lo, inner_hi, n_in + 1))
    for st in _graded_steps(outer_hi - inner_hi, s_inner, s_max):
        coords.append(coords[-1] + st)
    coords[-1] = outer_hi
    left = [inner_lo]
    for st in _graded_steps(inner_lo - outer_lo, s_inner, s_max):
        left.append(left[-1] - st)
    left[-1] = outer_lo
    coords = left[:0:-1] + coords
    return np.array(coords)


class _Builder:
    def __init__(self):
        self.vertices = []
        self.triangles = []

    def add_vertex(self, x, y):
        self.vertices.append((x, y))
        return len(self.vertices) - 1

    def add_tri(self, a, b, c):
        self.triangles.append((a, b, c))

    def quad_band(self, inner, outer):
        """Band between two closed rings with identical node counts."""
        n = len(inner)
        assert len(outer) == n
        for i in range(n):
            j = (i + 1) % n
            self.add_tri(inner[i], inner[j], outer[j])
            self.add_tri(inner[i], outer[j], outer[i])

    def halving_band(self, inner, outer):
        """Band from a ring of 2m nodes to a ring of m nodes; outer node j
        sits at the angle of inner node 2j."""
        n = len(inner)
        m = len(outer)
        assert n == 2 * m
        for j in range(m):
            f0, f1, f2 = inner[2 * j], inner[2 * j + 1], inner[(2 * j + 2) % n]
            c0, c1 = outer[j], outer[(j + 1) % m]
            self.add_tri(f0, f1, c0)
            self.add_tri(f1, f2, c1)
            self.add_tri(f1, c1, c0)

    def zipper_band(self, inner, ang_in, outer, ang_out):
        """Band between two star-shaped CCW rings with unrelated node
        counts, merged by angle."""
        na, nb = len(inner), len(outer)
        ai = np.asarray(ang_in, dtype=float)
        ao = np.asarray(ang_out, dtype=float)
        # rotate outer ring so its start is angularly closest to inner[0]
        diff = (ao - ai[0] + np.pi) % (2 * np.pi) - np.pi
        b0 = int(np.argmin(np.abs(diff)))
        outer = list(outer[b0:]) + list(outer[:b0])
        ao = np.concatenate([ao[b0:], ao[:b0]])
        # unwrap to ascending sequences anchored at the inner start
        base = ai[0]
        ai = np.unwrap(ai - base)
        ao_rel = (ao - base + np.pi) % (2 * np.pi) - np.pi
        ao = ao_rel[0] + np.concatenate([[0], np.cumsum((np.diff(ao_rel) % (2 * np.pi)))])
        a = b = 0
        while a < na or b < nb:
            next_a = ai[a + 1] if a + 1 < na else (ai[0] + 2 * np.pi if a < na else np.inf)
            next_b = ao[b + 1] if b + 1 < nb else (ao[0] + 2 * np.pi if b < nb else np.inf)
            if next_a <= next_b:
                self.add_tri(inner[a % na], inner[(a + 1) % na], outer[b % nb])
                a += 1
            else:
                self.add_tri(inner[a % na], outer[(b + 1) % nb], outer[b % nb])
                b += 1


def _next_multiple(n, m):
    return ((n + m - 1) // m) * m


def build_cylinder_mesh(spec):
    """Graded mesh of the benchmark domain.

    A ring-structured annulus around the cylinder polygon is grown
    geometrically from h_max/100, coarsening its angular resolution as
    the rings widen, morphs onto the side-10 square, and is merged with a
    graded tensor grid covering the rest of the rectangle. Sizes are
    monotone nondecreasing with distance from the cylinder center.
    """
    if isinstance(spec, int):
        spec = MeshSpec(kind="cylinder-benchmark", level=spec)
    level = spec.level
    if level not in (0, 1, 2, 3):
        log.info("cylinder mesh level %d outside the standard range 0..3", level)
    h_max = 8.0 * 2.0 ** (-level)
    h_near = h_max / 2.0
    h_cyl = h_max / 100.0
    # keep the coarsest levels fine enough for a healthy circle-square merge
    h_near_t = min(h_near, 2.5)

    b = _Builder()

    # --- outer tensor grid (rectangle minus the near square) ---------------
    xs = _axis(-NEAR_HALF, NEAR_HALF, X_MIN, X_MAX, h_near_t, h_max)
    ys = _axis(-NEAR_HALF, NEAR_HALF, Y_MIN, Y_MAX, h_near_t, h_max)
    nxv, nyv = len(xs), len(ys)
    grid = np.empty((nxv, nyv), dtype=np.int64)
    for i in range(nxv):
        for j in range(nyv):
            grid[i, j] = b.add_vertex(xs[i], ys[j])
    for i in range(nxv - 1):
        for j in range(nyv - 1):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            if abs(cx) < NEAR_HALF and abs(cy) < NEAR_HALF:
                continue
            va, vb = grid[i, j], grid[i + 1, j]
            vc, vd = grid[i + 1, j + 1], grid[i, j + 1]
            if (i + j) % 2 == 0:
                b.add_tri(va, vb, vc)
                b.add_tri(va, vc, vd)
            else:
                b.add_tri(va, vb, vd)
                b.add_tri(vb, vc, vd)

    # nodes of the tensor grid on the near-square boundary, CCW by angle
    square_ids = []
    for i in range(nxv):
        for j in range(nyv):
            if (abs(abs(xs[i]) - NEAR_HALF) < 1e-12 and abs(ys[j]) <= NEAR_HALF + 1e-12) or (
                abs(abs(ys[j]) - NEAR_HALF) < 1e-12 and abs(xs[i]) <= NEAR_HALF + 1e-12
            ):
                square_ids.append(grid[i, j])
    sq_pts = np.array([b.vertices[i] for i in square_ids])
    sq_ang = np.arctan2(sq_pts[:, 1], sq_pts[:, 0])
    order = np.argsort(sq_ang)
    square_ring = [square_ids[i] for i in order]
    square_ang = sq_ang[order]
    square_theta = square_ang  # direction of each square node from the origin
    m_sq = len(square_ring)

    # --- annulus around the cylinder ---------------------------------------
    n_cyl = _next_multiple(max(int(math.ceil(2 * math.pi / h_cyl)), 16), 16)
    angles = 2 * np.pi * np.arange(n_cyl) / n_cyl
    ring = [b.add_vertex(math.cos(a), math.sin(a)) for a in angles]
    ring_ang = angles
    cylinder_ring = list(ring)

    r = 1.0
    s = h_cyl
    growth = 1.35
    resampled = False
    while True:
        s_next = min(s * growth, h_near_t)
        r_next = r + s
        if not resampled and s >= 0.8 * (2 * np.pi * r / m_sq) and r >= 1.15:
            # switch the ring onto the angular layout of the square nodes
            new_ring = [
                b.add_vertex(r_next * math.cos(a), r_next * math.sin(a))
                for a in square_theta
            ]
            b.zipper_band(ring, ring_ang, new_ring, square_theta)
            ring, ring_ang = new_ring, square_theta
            resampled = True
        elif (
            not resampled
            and len(ring) % 2 == 0
            and len(ring) // 2 >= 16
            and 2 * np.pi * r_next / (len(ring) // 2) <= 1.45 * s_next
        ):
            half = [
                b.add_vertex(r_next * math.cos(ring_ang[2 * j]), r_next * math.sin(ring_ang[2 * j]))
                for j in range(len(ring) // 2)
            ]
            b.halving_band(ring, half)
            ring = half
            ring_ang = ring_ang[::2]
        else:
            new_ring = [
                b.add_vertex(r_next * math.cos(a), r_next * math.sin(a)) for a in ring_ang
            ]
            b.quad_band(ring, new_ring)
            ring = new_ring
        r = r_next
        s = s_next
        if resampled and r >= MORPH_RADIUS - 0.25 * s:
            break

    # --- morph the last circular ring onto the near square -----------------
    rho_sq = NEAR_HALF / np.maximum(np.abs(np.cos(square_theta)), np.abs(np.sin(square_theta)))
    mean_gap = float(np.mean(rho_sq) - r)
    layers = max(1, int(round(mean_gap / h_near_t)))
    for i in range(1, layers + 1):
        f = i / layers
        if i == layers:
            new_ring = square_ring
        else:
            rho = r + (rho_sq - r) * f
            new_ring = [
                b.add_vertex(ri * math.cos(a), ri * math.sin(a))
                for ri, a in zip(rho, square_theta)
            ]
        b.quad_band(ring, new_ring)
        ring = new_ring

    # --- finalize -----------------------------------------------------------
    vertices = np.array(b.vertices)
    triangles = np.array(b.triangles, dtype=np.int64)

    used = np.zeros(len(vertices), dtype=bool)
    used[triangles.ravel()] = True
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    vertices = vertices[used]
    triangles = remap[triangles].astype(np.int32)
    cyl_set = set(int(remap[i]) for i in cylinder_ring)

    mesh = _tag_boundary(vertices, triangles, cyl_set)
    validate_mesh(mesh, cylinder_tag=CYLINDER)
    return mesh


def _tag_boundary(vertices, triangles, cylinder_vertex_set):
    raw = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    raw.sort(axis=1)
    uniq, counts = np.unique(raw, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    tags = []
    for a, c in bnd:
        if int(a) in cylinder_vertex_set and int(c) in cylinder_vertex_set:
            tags.append(CYLINDER)
        else:
            tags.append(OUTER)
    return Mesh(vertices, triangles, bnd.astype(np.int32), tags)


# ---------------------------------------------------------------------------
# Gmsh MSH 2.2 import

def import_msh(path, tag_map=None):
    """Read a Gmsh MSH 2.2 ASCII file with triangles and tagged lines.

    ``tag_map`` maps physical group ids or names to boundary tag strings;
    unmapped groups keep their physical name (or the id as a string).
    Clockwise triangles are re-oriented with a logged notice.
    """
    with open(path) as f:
        lines = f.read().splitlines()

    def section(name):
        try:
            start = lines.index(f"${name}")
        except ValueError:
            raise MeshError(f"missing ${name} section in {path}")
        try:
            end = lines.index(f"$End{name}", start)
        except ValueError:
            raise MeshError(f"unterminated ${name} section (starts at line {start + 1})")
        return start, lines[start + 1 : end]

    _, fmt = section("MeshFormat")
    version = fmt[0].split()[0]
    if not version.startswith("2.2"):
        raise MeshError(f"unsupported MSH version {version}; only 2.2 ASCII is handled")

    phys_names = {}
    if "$PhysicalNames" in lines:
        _, body = section("PhysicalNames")
        for row in body[1:]:
            parts = row.split()
            phys_names[int(parts[1])] = parts[2].strip('"')

    start, body = section("Nodes")
    n_nodes = int(body[0])
    if len(body) - 1 != n_nodes:
        raise MeshError(f"$Nodes declares {n_nodes} nodes, found {len(body) - 1} (line {start + 2})")
    coords = np.empty((n_nodes, 2))
    node_index = {}
    for i, row in enumerate(body[1:]):
        parts = row.split()
        node_index[int(parts[0])] = i
        coords[i] = (float(parts[1]), float(parts[2]))

    start, body = section("Elements")
    n_elem = int(body[0])
    tris = []
    bedges = []
    btags = []
    flipped = 0
    for k, row in enumerate(body[1:]):
        parts = row.split()
        etype = int(parts[1])
        ntags = int(parts[2])
        phys = int(parts[3]) if ntags >= 1 else 0
        conn = [node_index[int(p)] for p in parts[3 + ntags :]]
        if etype == 1:
            name = phys_names.get(phys, str(phys))
            if tag_map:
                name = tag_map.get(phys, tag_map.get(name, name))
            bedges.append(tuple(sorted(conn)))
            btags.append(name)
        elif etype == 2:
            a, bb, c = conn
            area = _signed_area(coords, a, bb, c)
            if area == 0.0:
                raise MeshError(f"degenerate triangle at $Elements line {start + 2 + k + 1}")
            if area < 0:
                bb, c = c, bb
                flipped += 1
            tris.append((a, bb, c))
        # other element types (points etc.) are ignored
    if len(body) - 1 != n_elem:
        raise MeshError(f"$Elements declares {n_elem} elements, found {len(body) - 1}")
    if not tris:
        raise MeshError(f"no triangles found in {path}")
    if flipped:
        log.info("re-oriented %d clockwise triangles from %s", flipped, path)

    # drop duplicated boundary edges (some generators emit both directions)
    seen = {}
    for e, tag in zip(bedges, btags):
        seen[e] = tag

    mesh = Mesh(
        coords,
        np.array(tris, dtype=np.int32),
        np.array(list(seen.keys()), dtype=np.int32) if seen else np.empty((0, 2), np.int32),
        list(seen.values()),
    )
    validate_mesh(mesh)
    return mesh


def _signed_area(coords, a, b, c):
    d1 = coords[b] - coords[a]
    d2 = coords[c] - coords[a]
    return 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
