"""Lagrange elements of order 1..3 on the reference simplex, quadrature
rules, and the global C^0 space with exact nodal boundary data.

The reference basis is represented in the monomial basis via an inverted
Vandermonde matrix, which is well conditioned for the orders supported
here and gives values, gradients and second derivatives at arbitrary
reference points from one table.

Global degrees of freedom are laid out structurally (vertex, edge,
interior entities), with edge dofs ordered along ascending global vertex
index so shared dofs match across elements without coordinate hashing.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .mesh import Mesh, width

__all__ = [
    "ReferenceBasis",
    "QuadRule",
    "FESpace",
    "FEFunction",
    "reference_basis",
    "quadrature_rule",
    "make_space",
    "interpolate",
    "evaluate",
    "check_inverse_estimate",
    "sample_lattice",
]

MAX_ORDER = 3

# local vertex pairs forming the reference triangle's edges, lexicographic
_TRI_EDGES = ((0, 1), (0, 2), (1, 2))


def _monomial_exponents(dim, order):
    if dim == 1:
        return [(k,) for k in range(order + 1)]
    return [(a, b) for total in range(order + 1)
            for a in range(total, -1, -1) for b in (total - a,)]


def _reference_nodes(dim, order):
    """Nodes grouped by entity: vertices, then edges (ascending local
    vertex pair, parameter t = k/order), then interior nodes."""
    if dim == 1:
        nodes = [(0.0,), (1.0,)]
        # 1d interior nodes play the role of edge nodes keyed per element
        entity = [("vertex", 0), ("vertex", 1)]
        for k in range(1, order):
            nodes.append((k / order,))
            entity.append(("interior", k - 1))
        return np.array(nodes), entity

    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [tuple(v) for v in verts]
    entity = [("vertex", i) for i in range(3)]
    for le, (a, b) in enumerate(_TRI_EDGES):
        for k in range(1, order):
            t = k / order
            nodes.append(tuple(verts[a] + t * (verts[b] - verts[a])))
            entity.append(("edge", le, k))
    if order >= 3:
        nodes.append((1.0 / 3.0, 1.0 / 3.0))
        entity.append(("interior", 0))
    return np.array(nodes), entity


@dataclass(frozen=True)
class ReferenceBasis:
    """Lagrange basis on the reference simplex.

    `coeffs[k, i]` is the coefficient of monomial k in basis function i,
    so phi_i(node_j) = delta_ij by construction.
    """

    dim: int
    order: int
    nodes: np.ndarray
    node_entities: tuple
    exponents: tuple
    coeffs: np.ndarray

    @property
    def n_local(self):
        return len(self.nodes)

    def _monomials(self, pts, dx=(0, 0)):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.empty((len(pts), len(self.exponents)))
        for k, exps in enumerate(self.exponents):
            col = np.ones(len(pts))
            for axis, e in enumerate(exps):
                d = dx[axis]
                if e < d:
                    col = np.zeros(len(pts))
                    break
                fac = 1.0
                for j in range(d):
                    fac *= e - j
                col = col * fac * pts[:, axis] ** (e - d)
            out[:, k] = col
        return out

    def values(self, pts):
        """(npts, n_local) basis values."""
        return self._monomials(pts) @ self.coeffs

    def gradients(self, pts):
        """(npts, n_local, dim) reference gradients."""
        cols = [self._monomials(pts, dx=_unit(d, self.dim)) @ self.coeffs
                for d in range(self.dim)]
        return np.stack(cols, axis=-1)

    def hessians(self, pts):
        """(npts, n_local, dim, dim) reference second derivatives."""
        npts = len(np.atleast_2d(pts))
        out = np.empty((npts, self.n_local, self.dim, self.dim))
        for a in range(self.dim):
            for b in range(a, self.dim):
                dx = [0] * self.dim
                dx[a] += 1
                dx[b] += 1
                vals = self._monomials(pts, dx=tuple(dx)) @ self.coeffs
                out[:, :, a, b] = vals
                out[:, :, b, a] = vals
        return out


def _unit(axis, dim):
    dx = [0] * dim
    dx[axis] = 1
    return tuple(dx)


_BASIS_CACHE = {}


def reference_basis(dim, order):
    key = (dim, order)
    basis = _BASIS_CACHE.get(key)
    if basis is None:
        if not 1 <= order <= MAX_ORDER:
            raise ValueError(f"order must be in 1..{MAX_ORDER}, got {order}")
        nodes, entities = _reference_nodes(dim, order)
        exponents = tuple(_monomial_exponents(dim, order))
        vand = np.empty((len(nodes), len(exponents)))
        for k, exps in enumerate(exponents):
            col = np.ones(len(nodes))
            for axis, e in enumerate(exps):
                col = col * nodes[:, axis] ** e
            vand[:, k] = col
        coeffs = np.linalg.inv(vand)
        basis = ReferenceBasis(dim, order, nodes, tuple(entities), exponents, coeffs)
        _BASIS_CACHE[key] = basis
    return basis


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadRule:
    """Positive-weight rule on the reference simplex; weights sum to |T|."""

    dim: int
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int


# Symmetric triangle rules with positive weights (Dunavant).  Orbits are
# given in barycentric form; degrees 3 and 7 are skipped because the
# classical rules of those degrees carry a negative weight.
_TRI_ORBITS = {
    1: [("center", 1.0)],
    2: [("s3", 1.0 / 6.0, 1.0 / 3.0)],
    4: [("s3", 0.445948490915965, 0.223381589678011),
        ("s3", 0.091576213509771, 0.109951743655322)],
    5: [("center", 0.225),
        ("s3", 0.470142064105115, 0.132394152788506),
        ("s3", 0.101286507323456, 0.125939180544827)],
    6: [("s3", 0.249286745170910, 0.116786275726379),
        ("s3", 0.063089014491502, 0.050844906370207),
        ("s6", 0.310352451033785, 0.053145049844816, 0.082851075618374)],
    8: [("center", 0.14431560767776097),
        ("s3", 0.4592925882927089, 0.09509163426729944),
        ("s3", 0.1705693077517449, 0.10321737053472559),
        ("s3", 0.05054722831703234, 0.03245849762320077),
        ("s6", 0.26311282963468774, 0.008394777409931537, 0.027230314174426944)],
}


def _triangle_rule(degree):
    table_deg = min((d for d in _TRI_ORBITS if d >= degree), default=None)
    if table_deg is None:
        return _collapsed_triangle_rule(degree)
    points, weights = [], []
    for orbit in _TRI_ORBITS[table_deg]:
        kind = orbit[0]
        if kind == "center":
            points.append((1 / 3, 1 / 3))
            weights.append(orbit[1])
        elif kind == "s3":
            a, w = orbit[1], orbit[2]
            b = 1.0 - 2.0 * a
            for bary in ((a, a, b), (a, b, a), (b, a, a)):
                points.append((bary[1], bary[2]))
                weights.append(w)
        else:  # s6
            a, b, w = orbit[1], orbit[2], orbit[3]
            c = 1.0 - a - b
            for bary in ((a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)):
                points.append((bary[1], bary[2]))
                weights.append(w)
    return QuadRule(2, np.array(points), 0.5 * np.array(weights), table_deg)


def _collapsed_triangle_rule(degree):
    """Gauss product rule under the Duffy map; positive but not symmetric.

    Only used beyond the tabulated symmetric degrees.
    """
    n = (degree + 3) // 2
    x, wx = leggauss(n)
    u, wu = 0.5 * (x + 1.0), 0.5 * wx
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu, wu) * (1.0 - uu)
    pts = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
    return QuadRule(2, pts, ww.ravel(), degree)


def quadrature_rule(dim, degree):
    """Smallest available rule integrating total degree `degree` exactly."""
    degree = max(int(degree), 1)
    if dim == 1:
        n = (degree + 2) // 2
        x, w = leggauss(n)
        return QuadRule(1, (0.5 * (x + 1.0))[:, None], 0.5 * w, 2 * n - 1)
    if dim == 2:
        return _triangle_rule(degree)
    raise ValueError(f"dim must be 1 or 2, got {dim}")


def sample_lattice(dim, resolution=None):
    """Dense reference lattice used for sup-norm estimates (>= 10^d points)."""
    if dim == 1:
        n = resolution or 16
        return np.linspace(0.0, 1.0, n)[:, None]
    n = resolution or 13  # (n+1)(n+2)/2 = 105 points
    pts = [(i / n, j / n) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(pts)


# ---------------------------------------------------------------------------
# global space


@dataclass
class FESpace:
    """Global order-m Lagrange space on a mesh, with nodal boundary data.

    dof_coords : (ndof, dim) coordinates of the Lagrange nodes
    elem_dofs : (ne, n_local) local-to-global dof map
    boundary_dofs : sorted indices of dofs on the Dirichlet boundary
    boundary_values : prescribed values at those dofs
    """

    mesh: Mesh
    order: int
    basis: ReferenceBasis
    dof_coords: np.ndarray
    elem_dofs: np.ndarray
    boundary_dofs: np.ndarray
    boundary_values: np.ndarray
    quad: QuadRule = field(repr=False)

    def __post_init__(self):
        for arr in (self.dof_coords, self.elem_dofs, self.boundary_dofs,
                    self.boundary_values):
            arr.flags.writeable = False

    @property
    def dim(self):
        return int(self.dof_coords.shape[0])

    @property
    def interior_mask(self):
        mask = np.ones(self.dim, dtype=bool)
        mask[self.boundary_dofs] = False
        return mask

    def zero_function(self):
        return FEFunction(self, np.zeros(self.dim))

    def with_boundary_values(self, interior=0.0):
        """Coefficient vector carrying the boundary data, `interior` elsewhere."""
        coeffs = np.full(self.dim, float(interior))
        coeffs[self.boundary_dofs] = self.boundary_values
        return FEFunction(self, coeffs)


@dataclass
class FEFunction:
    """Coefficient vector over an FESpace."""

    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dim,):
            raise ValueError("coefficient vector does not match space dimension")

    def copy(self):
        return FEFunction(self.space, self.coeffs.copy())


def make_space(mesh, order, boundary_fn=0.0, quad_degree=None):
    """Build the global C^0 Lagrange space of the given order.

    boundary_fn may be a callable of a coordinate array or a constant;
    its nodal values become the prescribed boundary data (the boundary
    trace is assumed exactly representable at the Lagrange nodes).

    Default quadrature integrates total degree max(2*order + 2, 8): the
    extra exactness over 2m+2 keeps the quadrature error of smooth
    non-polynomial data (forcing, potential terms) below solver tolerance
    even on coarse meshes, so integrated-orthogonality identities between
    nested discrete minimizers hold at solver precision.
    """
    order = int(order)
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}, got {order}")
    basis = reference_basis(mesh.dim, order)

    nv = mesh.num_vertices
    dof_coords = [mesh.vertices]
    next_dof = nv

    edge_base = {}
    if mesh.dim == 2 and order >= 2:
        per_edge = order - 1
        edges = sorted({tuple(sorted(p)) for elem in mesh.elements
                        for p in ((elem[0], elem[1]), (elem[0], elem[2]), (elem[1], elem[2]))})
        edge_coords = np.empty((len(edges) * per_edge, mesh.dim))
        for i, (a, b) in enumerate(edges):
            edge_base[(a, b)] = next_dof + i * per_edge
            va, vb = mesh.vertices[a], mesh.vertices[b]
            for k in range(1, order):
                edge_coords[i * per_edge + k - 1] = va + (k / order) * (vb - va)
        dof_coords.append(edge_coords)
        next_dof += len(edges) * per_edge

    n_interior = _interior_count(mesh.dim, order)
    interior_base = next_dof
    if n_interior:
        coords = _interior_coords(mesh, order)
        dof_coords.append(coords)
        next_dof += mesh.num_elements * n_interior

    dof_coords = np.vstack(dof_coords)

    elem_dofs = np.empty((mesh.num_elements, basis.n_local), dtype=np.int64)
    for eid, elem in enumerate(mesh.elements):
        for l, ent in enumerate(basis.node_entities):
            if ent[0] == "vertex":
                elem_dofs[eid, l] = elem[ent[1]]
            elif ent[0] == "edge":
                a, b = elem[_TRI_EDGES[ent[1]][0]], elem[_TRI_EDGES[ent[1]][1]]
                k = ent[2]
                if a > b:
                    a, b = b, a
                    k = order - k
                elem_dofs[eid, l] = edge_base[(a, b)] + k - 1
            else:  # interior
                elem_dofs[eid, l] = interior_base + eid * n_interior + ent[1]

    bdofs = set()
    for facet in mesh.boundary_facets:
        for v in facet:
            bdofs.add(int(v))
        if mesh.dim == 2 and order >= 2:
            a, b = sorted(int(v) for v in facet)
            base = edge_base[(a, b)]
            bdofs.update(range(base, base + order - 1))
    boundary_dofs = np.array(sorted(bdofs), dtype=np.int64)

    fn = boundary_fn if callable(boundary_fn) else (lambda x, c=float(boundary_fn): np.full(len(x), c))
    boundary_values = np.asarray(fn(dof_coords[boundary_dofs]), dtype=float).reshape(-1)

    quad = quadrature_rule(mesh.dim, quad_degree or max(2 * order + 2, 8))
    return FESpace(mesh, order, basis, dof_coords, elem_dofs,
                   boundary_dofs, boundary_values, quad)


def _interior_count(dim, order):
    if dim == 1:
        return max(order - 1, 0)
    return 1 if order >= 3 else 0


def _interior_coords(mesh, order):
    verts = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        # element-private nodes at k/order in the element's own orientation
        a, b = verts[:, 0], verts[:, 1]
        cols = [a + (k / order) * (b - a) for k in range(1, order)]
        return np.stack(cols, axis=1).reshape(-1, 1)
    return verts.mean(axis=1)


def interpolate(space, g):
    """Nodal interpolant of g; reproduces polynomials up to the space order."""
    vals = np.asarray(g(space.dof_coords), dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise ValueError(f"non-finite value at node {bad}, coord {space.dof_coords[bad]}")
    return FEFunction(space, vals)


def evaluate(f, element_id, ref_point):
    """Value and physical gradient of f at a reference point of one element."""
    space = f.space
    pt = np.atleast_2d(np.asarray(ref_point, dtype=float))
    local = f.coeffs[space.elem_dofs[element_id]]
    value = float(space.basis.values(pt)[0] @ local)
    ref_grad = np.einsum("lk,l->k", space.basis.gradients(pt)[0], local)
    grad = space.mesh.jac[element_id].T @ ref_grad
    return value, grad


def element_values(f, pts_ref):
    """Values of f on all elements at shared reference points: (ne, npts)."""
    table = f.space.basis.values(pts_ref)
    return f.coeffs[f.space.elem_dofs] @ table.T


def element_gradients(f, pts_ref):
    """Physical gradients on all elements at shared reference points:
    (ne, npts, dim)."""
    table = f.space.basis.gradients(pts_ref)          # (npts, nloc, dim)
    local = f.coeffs[f.space.elem_dofs]               # (ne, nloc)
    ref = np.einsum("el,qlk->eqk", local, table)
    return np.einsum("eki,eqk->eqi", f.space.mesh.jac, ref)


def check_inverse_estimate(space, trials, seed=0):
    """Largest observed ratio ||v||_{W^{1,inf}(T)} / (h^{-d/2} ||v||_{W^{1,2}(T)})
    over random discrete functions and all elements.

    The sup norm is sampled on a dense reference lattice; the W^{1,2} norm
    uses the space's quadrature.  The ratio is bounded uniformly in h for
    shape-regular meshes, which the level-stability tests verify.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    mesh = space.mesh
    d = mesh.dim
    h = width(mesh)
    lattice = sample_lattice(d)
    qpts, qw = space.quad.points, space.quad.weights

    max_ratio = 0.0
    for _ in range(trials):
        v = FEFunction(space, rng.standard_normal(space.dim))
        vals_l = element_values(v, lattice)
        grads_l = element_gradients(v, lattice)
        sup = np.maximum(np.abs(vals_l).max(axis=1),
                         np.linalg.norm(grads_l, axis=2).max(axis=1))

        vals_q = element_values(v, qpts)
        grads_q = element_gradients(v, qpts)
        dens = vals_q**2 + np.einsum("eqi,eqi->eq", grads_q, grads_q)
        w12 = np.sqrt(np.abs(mesh.det_jac) ** -1 * (dens @ qw))

        ratio = sup / (h ** (-d / 2) * w12)
        max_ratio = max(max_ratio, float(ratio.max()))
    return max_ratio
