"""Conforming simplicial meshes of (0,1)^d with uniform refinement.

Supports intervals (d=1) and triangles (d=2).  All elements are affine
images of a fixed reference simplex, so the mesh carries, per element,
the affine map data (Jacobian, offset, determinant) needed by assembly
and by the width/order scaling diagnostics.

Meshes are immutable after construction and may be shared freely.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "ElementMap",
    "build_unit_mesh",
    "refine",
    "width",
    "element_map",
    "check_conforming",
    "check_nested",
    "dump_mesh",
    "load_mesh",
]

# Reference simplex measures: [0,1] for d=1, triangle (0,0),(1,0),(0,1) for d=2.
_REF_VOLUME = {1: 1.0, 2: 0.5}


class MeshError(ValueError):
    """Raised for invalid or degenerate mesh data."""


@dataclass
class Mesh:
    """Simplicial partition of a polygonal domain.

    vertices : (nv, dim) float array
    elements : (ne, dim+1) int array of vertex indices
    boundary_facets : (nb, dim) int array; vertices for d=1, edges for d=2
    boundary_markers : (nb,) int array
    level : refinement level, 0 for a freshly built mesh
    parent : the coarser mesh this one refines, or None
    parent_elements : (ne,) int array mapping each element to its parent
        element id, or None on level 0
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    boundary_markers: np.ndarray
    level: int = 0
    parent: "Mesh | None" = None
    parent_elements: np.ndarray | None = None

    # geometry caches, filled in __post_init__
    jac: np.ndarray = field(init=False, repr=False)       # DF_h, element -> reference
    inv_jac: np.ndarray = field(init=False, repr=False)   # DF_h^{-1}, reference -> element
    det_jac: np.ndarray = field(init=False, repr=False)   # det DF_h, ~ h^{-d}
    volumes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        self.boundary_facets = np.ascontiguousarray(self.boundary_facets, dtype=np.int64)
        self.boundary_markers = np.ascontiguousarray(self.boundary_markers, dtype=np.int64)
        if self.dim not in (1, 2):
            raise MeshError(f"dim must be 1 or 2, got {self.dim}")
        if self.vertices.ndim != 2 or self.vertices.shape[1] != self.dim:
            raise MeshError("vertices must have shape (nv, dim)")
        if self.elements.ndim != 2 or self.elements.shape[1] != self.dim + 1:
            raise MeshError("elements must have shape (ne, dim+1)")
        if self.elements.min(initial=0) < 0 or self.elements.max(initial=-1) >= len(self.vertices):
            raise MeshError("element vertex index out of range")

        # B has the edge vectors (v_i - v_0) as columns; F_h inverts x = v0 + B xref.
        verts = self.vertices[self.elements]                 # (ne, dim+1, dim)
        edge_vecs = verts[:, 1:, :] - verts[:, :1, :]        # (ne, dim, dim) rows are edges
        b_mats = np.swapaxes(edge_vecs, 1, 2)                # columns are edges
        det_b = np.linalg.det(b_mats)
        if np.any(np.abs(det_b) < 1e-14):
            raise MeshError("degenerate element (zero volume)")
        self.inv_jac = b_mats
        self.jac = np.linalg.inv(b_mats)
        self.det_jac = 1.0 / det_b
        self.volumes = np.abs(det_b) * _REF_VOLUME[self.dim]

        for arr in (self.vertices, self.elements, self.boundary_facets,
                    self.boundary_markers, self.jac, self.inv_jac,
                    self.det_jac, self.volumes):
            arr.flags.writeable = False

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_elements(self):
        return len(self.elements)

    def element_vertices(self, element_id):
        return self.vertices[self.elements[element_id]]


@dataclass(frozen=True)
class ElementMap:
    """Affine map F_h from one element onto the reference simplex.

    F_h(x) = affine_part @ x + offset maps the element to the reference;
    det = det(affine_part) scales like h^{-d}.  The inverse map takes
    reference coordinates back into the element.
    """

    element_id: int
    affine_part: np.ndarray
    offset: np.ndarray
    det: float

    def to_reference(self, x):
        return self.affine_part @ np.asarray(x, dtype=float) + self.offset

    def from_reference(self, xref):
        return np.linalg.solve(self.affine_part, np.asarray(xref, dtype=float) - self.offset)


def build_unit_mesh(dim, cells_per_side):
    """Mesh (0,1)^dim uniformly with `cells_per_side` cells per side.

    d=1 gives equal intervals; d=2 splits each grid square into two
    triangles along the same diagonal, so all elements are congruent
    up to reflection and the width is the diagonal length.
    """
    if dim not in (1, 2):
        raise MeshError(f"dim must be 1 or 2, got {dim}")
    n = int(cells_per_side)
    if n < 1:
        raise MeshError("cells_per_side must be >= 1")

    if dim == 1:
        vertices = np.linspace(0.0, 1.0, n + 1)[:, None]
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        facets = np.array([[0], [n]])
        markers = np.array([1, 1])
        return Mesh(1, vertices, elements, facets, markers)

    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(ix, iy):
        return ix * (n + 1) + iy

    elements = []
    for ix in range(n):
        for iy in range(n):
            v00, v10 = vid(ix, iy), vid(ix + 1, iy)
            v01, v11 = vid(ix, iy + 1), vid(ix + 1, iy + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    elements = np.array(elements)
    facets, markers = _boundary_from_elements(elements)
    return Mesh(2, vertices, elements, facets, markers)


def _boundary_from_elements(elements):
    """Facets appearing in exactly one element, with marker 1."""
    counts = {}
    for elem in elements:
        for facet in _element_facets(elem):
            counts[facet] = counts.get(facet, 0) + 1
    facets = sorted(f for f, c in counts.items() if c == 1)
    return np.array(facets, dtype=np.int64), np.ones(len(facets), dtype=np.int64)


def _element_facets(elem):
    """Sorted vertex tuples of the (d-1)-faces of one element."""
    if len(elem) == 2:
        return [(int(elem[0]),), (int(elem[1]),)]
    a, b, c = (int(v) for v in elem)
    return [tuple(sorted(p)) for p in ((a, b), (b, c), (a, c))]


def refine(mesh):
    """Uniform red refinement: bisection (d=1) or 4 congruent children (d=2).

    Vertex indices of the coarse mesh are preserved; new midpoint vertices
    are appended.  Child elements record their parent element id and the
    mesh records its parent, so nested hierarchies can be walked.
    """
    if mesh.dim == 1:
        return _refine_interval(mesh)
    return _refine_triangles(mesh)


def _refine_interval(mesh):
    nv = mesh.num_vertices
    mids = 0.5 * (mesh.vertices[mesh.elements[:, 0]] + mesh.vertices[mesh.elements[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    elements = []
    parents = []
    for eid, (a, b) in enumerate(mesh.elements):
        m = nv + eid
        elements.append((a, m))
        elements.append((m, b))
        parents.extend([eid, eid])
    return Mesh(
        1,
        vertices,
        np.array(elements),
        mesh.boundary_facets.copy(),
        mesh.boundary_markers.copy(),
        level=mesh.level + 1,
        parent=mesh,
        parent_elements=np.array(parents),
    )


def _refine_triangles(mesh):
    nv = mesh.num_vertices
    edge_mid = {}
    new_vertices = []

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        idx = edge_mid.get(key)
        if idx is None:
            idx = nv + len(new_vertices)
            edge_mid[key] = idx
            new_vertices.append(0.5 * (mesh.vertices[key[0]] + mesh.vertices[key[1]]))
        return idx

    elements = []
    parents = []
    for eid, (a, b, c) in enumerate(mesh.elements):
        mab, mbc, mac = midpoint(a, b), midpoint(b, c), midpoint(a, c)
        elements.extend([(a, mab, mac), (mab, b, mbc), (mac, mbc, c), (mab, mbc, mac)])
        parents.extend([eid] * 4)

    facets = []
    markers = []
    for (a, b), marker in zip(mesh.boundary_facets, mesh.boundary_markers):
        m = midpoint(int(a), int(b))
        facets.append(tuple(sorted((int(a), m))))
        facets.append(tuple(sorted((m, int(b)))))
        markers.extend([marker, marker])

    vertices = np.vstack([mesh.vertices, np.array(new_vertices)])
    return Mesh(
        2,
        vertices,
        np.array(elements),
        np.array(facets),
        np.array(markers),
        level=mesh.level + 1,
        parent=mesh,
        parent_elements=np.array(parents),
    )


def width(mesh):
    """Longest edge over all elements."""
    verts = mesh.vertices[mesh.elements]                    # (ne, dim+1, dim)
    if mesh.dim == 1:
        return float(np.abs(verts[:, 1, 0] - verts[:, 0, 0]).max())
    edges = np.stack([
        verts[:, 1] - verts[:, 0],
        verts[:, 2] - verts[:, 1],
        verts[:, 2] - verts[:, 0],
    ])
    return float(np.linalg.norm(edges, axis=-1).max())


def element_map(mesh, element_id):
    """Affine map data for one element.

    The forward Jacobian `affine_part` sends the element onto the
    reference simplex, so |det| ~ h^{-d} while the inverse map's
    derivative norm scales like h (the order-m scaling of the grid;
    affine maps realize it trivially, all higher derivatives vanish).
    """
    eid = int(element_id)
    if not 0 <= eid < mesh.num_elements:
        raise IndexError(f"element id {eid} out of range")
    jac = mesh.jac[eid]
    v0 = mesh.vertices[mesh.elements[eid, 0]]
    return ElementMap(eid, jac.copy(), -(jac @ v0), float(mesh.det_jac[eid]))


def check_conforming(mesh):
    """Verify the partition property: element closures meet in common faces.

    Checks, in O(ne): no duplicated vertex coordinates, no degenerate
    elements, every facet shared by at most two elements, and the facets
    owned by exactly one element coincide with the declared boundary.
    Returns True or raises MeshError describing the first violation.
    """
    seen = {}
    for i, v in enumerate(mesh.vertices):
        key = tuple(v)
        if key in seen:
            raise MeshError(f"duplicate vertex coordinates at indices {seen[key]} and {i}")
        seen[key] = i

    for eid, elem in enumerate(mesh.elements):
        if len(set(int(v) for v in elem)) != mesh.dim + 1:
            raise MeshError(f"element {eid} repeats a vertex")
    if np.any(mesh.volumes <= 0):
        raise MeshError("element with non-positive measure")

    counts = {}
    for elem in mesh.elements:
        for facet in _element_facets(elem):
            counts[facet] = counts.get(facet, 0) + 1
    for facet, c in counts.items():
        if c > 2:
            raise MeshError(f"facet {facet} shared by {c} > 2 elements")
    boundary = {f for f, c in counts.items() if c == 1}
    declared = {tuple(sorted(int(v) for v in f)) for f in mesh.boundary_facets}
    if boundary != declared:
        raise MeshError("declared boundary facets do not match facet incidence")
    return True


def check_nested(fine):
    """Verify the refinement hierarchy between `fine` and its parent.

    Each parent element must own the right number of children, children
    volumes must sum to the parent volume, and every child vertex must lie
    in the closure of its parent element (barycentric coordinates in
    [0,1] up to rounding).
    """
    coarse = fine.parent
    if coarse is None or fine.parent_elements is None:
        raise MeshError("mesh has no refinement parent")
    expected = 2 ** fine.dim
    child_counts = np.bincount(fine.parent_elements, minlength=coarse.num_elements)
    if not np.all(child_counts == expected):
        raise MeshError("parent element without exactly 2^d children")

    vol_sums = np.zeros(coarse.num_elements)
    np.add.at(vol_sums, fine.parent_elements, fine.volumes)
    if not np.allclose(vol_sums, coarse.volumes, rtol=1e-12, atol=0):
        raise MeshError("child volumes do not sum to parent volume")

    tol = 1e-12
    for eid, pid in enumerate(fine.parent_elements):
        jac = coarse.jac[pid]
        v0 = coarse.vertices[coarse.elements[pid, 0]]
        for v in fine.element_vertices(eid):
            ref = jac @ (v - v0)
            if ref.min() < -tol or ref.sum() > 1.0 + tol:
                raise MeshError(f"child {eid} vertex outside parent {pid}")
    return True


def dump_mesh(mesh, path):
    """Write the plain-text mesh format.

    One line per vertex (`v x [y]`), element (`e i0 i1 [i2]`) and boundary
    facet (`b i0 [i1] marker`).  Floats use their shortest exact decimal
    representation, so a dump/load round trip is bit-exact.
    """
    lines = []
    for v in mesh.vertices:
        lines.append("v " + " ".join(repr(float(c)) for c in v))
    for e in mesh.elements:
        lines.append("e " + " ".join(str(int(i)) for i in e))
    for f, m in zip(mesh.boundary_facets, mesh.boundary_markers):
        lines.append("b " + " ".join(str(int(i)) for i in f) + f" {int(m)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    """Read the plain-text format written by dump_mesh."""
    vertices, elements, facets, markers = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            tag, data = parts[0], parts[1:]
            if tag == "v":
                vertices.append([float(c) for c in data])
            elif tag == "e":
                elements.append([int(i) for i in data])
            elif tag == "b":
                facets.append([int(i) for i in data[:-1]])
                markers.append(int(data[-1]))
            else:
                raise MeshError(f"{path}:{lineno}: unknown record {tag!r}")
    if not vertices or not elements:
        raise MeshError(f"{path}: no vertices or elements")
    dim = len(vertices[0])
    return Mesh(dim, np.array(vertices), np.array(elements),
                np.array(facets), np.array(markers))
