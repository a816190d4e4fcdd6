"""Quadrature assembly of the energy, its first three variations, Gram
operators, and broken Sobolev norms.

All element loops are chunked and vectorized; contributions are summed
in element-index order, so assembled values are bitwise reproducible.
Dirichlet conditions are imposed by identity-masking boundary rows and
columns, which keeps the operators symmetric on the constrained space.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .felement import FEFunction, quadrature_rule, sample_lattice

__all__ = [
    "SparseOperator",
    "NormReport",
    "energy_value",
    "assemble_residual",
    "assemble_hessian",
    "apply_third_variation",
    "assemble_gram_l2",
    "assemble_gram_h1",
    "norms",
    "lq_norm",
    "integrate",
    "bilinear_value",
]

CHUNK = 16384


class AssemblyError(RuntimeError):
    """Raised when an integrand evaluates to a non-finite value."""


@dataclass
class SparseOperator:
    """Symmetric sparse operator in CSR storage."""

    matrix: sp.csr_matrix

    @property
    def dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def toarray(self):
        return self.matrix.toarray()

    def max_asymmetry(self):
        d = self.matrix - self.matrix.T
        return float(np.abs(d.data).max()) if d.nnz else 0.0

    def diagonal(self):
        return self.matrix.diagonal()


@dataclass(frozen=True)
class NormReport:
    """Broken-norm bundle of a difference f - g."""

    l2: float
    h1_semi: float
    w1q: float
    w1inf: float
    q: float
    broken_h2: float | None = None

    @property
    def h1(self):
        return float(np.hypot(self.l2, self.h1_semi))


def _chunks(n, size=None):
    size = size or CHUNK
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _element_data(space, rule):
    """Shared reference tables and per-element geometry."""
    phi = space.basis.values(rule.points)          # (nq, nloc)
    gref = space.basis.gradients(rule.points)      # (nq, nloc, d)
    mesh = space.mesh
    vol = np.abs(mesh.det_jac) ** -1               # |det DF_h^{-1}| = |T_h|/|T|
    return phi, gref, mesh, vol


def _phys_points(mesh, sl, pts):
    v0 = mesh.vertices[mesh.elements[sl, 0]]
    return v0[:, None, :] + np.einsum("eij,qj->eqi", mesh.inv_jac[sl], pts)


def _values_grads(space, coeffs, sl, phi, gref):
    local = coeffs[space.elem_dofs[sl]]
    vals = local @ phi.T
    grads = np.einsum("el,qlk,eki->eqi", local, gref, space.mesh.jac[sl])
    return vals, grads


def energy_value(model, v, quad=None):
    """Total energy of a discrete function by element-wise quadrature."""
    space = v.space
    rule = quad or space.quad
    phi, gref, mesh, vol = _element_data(space, rule)
    total = 0.0
    for sl in _chunks(mesh.num_elements):
        vals, grads = _values_grads(space, v.coeffs, sl, phi, gref)
        x = _phys_points(mesh, sl, rule.points)
        n, nq, d = x.shape
        dens = model.eval(grads.reshape(-1, d), vals.ravel(), x.reshape(-1, d))
        total += float(vol[sl] @ (dens.reshape(n, nq) @ rule.weights))
    return total


def assemble_residual(model, v, quad=None, mask=True):
    """First-variation vector; boundary test entries are masked to zero."""
    space = v.space
    rule = quad or space.quad
    phi, gref, mesh, vol = _element_data(space, rule)
    out = np.zeros(space.dim)
    for sl in _chunks(mesh.num_elements):
        vals, grads = _values_grads(space, v.coeffs, sl, phi, gref)
        x = _phys_points(mesh, sl, rule.points)
        n, nq, d = x.shape
        flat = (grads.reshape(-1, d), vals.ravel(), x.reshape(-1, d))
        dldp = model.dL_dp(*flat).reshape(n, nq, d)
        dldz = model.dL_dz(*flat).reshape(n, nq)
        if not (np.all(np.isfinite(dldp)) and np.all(np.isfinite(dldz))):
            raise AssemblyError("non-finite density derivative during residual assembly")
        pulled = np.einsum("eqi,eki->eqk", dldp, mesh.jac[sl])
        r_loc = (np.einsum("q,eqk,qlk->el", rule.weights, pulled, gref)
                 + np.einsum("q,eq,ql->el", rule.weights, dldz, phi))
        np.add.at(out, space.elem_dofs[sl], vol[sl][:, None] * r_loc)
    if mask:
        out[space.boundary_dofs] = 0.0
    return out


def assemble_hessian(model, v, quad=None, mask=True):
    """Second-variation operator at state v, all four derivative blocks."""
    space = v.space
    rule = quad or space.quad
    phi, gref, mesh, vol = _element_data(space, rule)
    nloc = space.basis.n_local
    rows, cols, data = [], [], []
    for sl in _chunks(mesh.num_elements):
        vals, grads = _values_grads(space, v.coeffs, sl, phi, gref)
        x = _phys_points(mesh, sl, rule.points)
        n, nq, d = x.shape
        flat = (grads.reshape(-1, d), vals.ravel(), x.reshape(-1, d))
        d2pp = model.d2L_dpp(*flat).reshape(n, nq, d, d)
        d2pz = model.d2L_dpz(*flat).reshape(n, nq, d)
        d2zz = model.d2L_dzz(*flat).reshape(n, nq)
        if not np.all(np.isfinite(d2pp)):
            raise AssemblyError("non-finite density derivative during hessian assembly")

        jac = mesh.jac[sl]
        kpp = np.einsum("eai,eqij,ebj->eqab", jac, d2pp, jac)
        loc = np.einsum("q,qla,eqab,qkb->elk", rule.weights, gref, kpp, gref)
        mixed = np.einsum("eai,eqi->eqa", jac, d2pz)
        t = np.einsum("qla,eqa->eql", gref, mixed)
        m1 = np.einsum("q,eql,qk->elk", rule.weights, t, phi)
        loc += m1 + np.swapaxes(m1, 1, 2)
        loc += np.einsum("q,eq,ql,qk->elk", rule.weights, d2zz, phi, phi)
        loc *= vol[sl][:, None, None]

        ed = space.elem_dofs[sl]
        rows.append(np.repeat(ed, nloc, axis=1).ravel())
        cols.append(np.tile(ed, (1, nloc)).ravel())
        data.append(loc.ravel())

    ndof = space.dim
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof)).tocsr()
    if mask:
        mat = _mask_dirichlet(mat, space.boundary_dofs, ndof)
    return SparseOperator(mat)


def _mask_dirichlet(mat, boundary_dofs, ndof):
    keep = np.ones(ndof)
    keep[boundary_dofs] = 0.0
    proj = sp.diags(keep)
    lift = sp.diags(1.0 - keep)
    return (proj @ mat @ proj + lift).tocsr()


def apply_third_variation(model, v, fu, fv, fw, quad=None):
    """Third variation at v applied to three discrete directions.

    Every derivative block is evaluated (never skipped via the structural
    flags), so substituting a model with zeroed blocks genuinely probes
    whether those blocks vanish.
    """
    space = v.space
    for g in (fu, fv, fw):
        if g.space is not space:
            raise ValueError("third-variation arguments must share the state's space")
    rule = quad or space.quad
    phi, gref, mesh, vol = _element_data(space, rule)
    total = 0.0
    for sl in _chunks(mesh.num_elements):
        vals, grads = _values_grads(space, v.coeffs, sl, phi, gref)
        x = _phys_points(mesh, sl, rule.points)
        n, nq, d = x.shape
        p = grads.reshape(-1, d)
        z = vals.ravel()
        xx = x.reshape(-1, d)

        vu, gu = _values_grads(space, fu.coeffs, sl, phi, gref)
        vv, gv = _values_grads(space, fv.coeffs, sl, phi, gref)
        vw, gw = _values_grads(space, fw.coeffs, sl, phi, gref)
        vu, vv, vw = vu.ravel(), vv.ravel(), vw.ravel()
        gu, gv, gw = (g.reshape(-1, d) for g in (gu, gv, gw))

        s = model.d3L_dppp(p, z, xx, gu, gv, gw)
        s = s + (model.d3L_dppz(p, z, xx, gu, gv) * vw
                 + model.d3L_dppz(p, z, xx, gu, gw) * vv
                 + model.d3L_dppz(p, z, xx, gv, gw) * vu)
        s = s + (model.d3L_dpzz(p, z, xx, gu) * vv * vw
                 + model.d3L_dpzz(p, z, xx, gv) * vu * vw
                 + model.d3L_dpzz(p, z, xx, gw) * vu * vv)
        s = s + model.d3L_dzzz(p, z, xx) * vu * vv * vw
        total += float(vol[sl] @ (s.reshape(n, nq) @ rule.weights))
    return total


def _geometric_local(space, rule, with_stiffness):
    phi, gref, mesh, vol = _element_data(space, rule)
    mass = np.einsum("q,ql,qk->lk", rule.weights, phi, phi)
    loc = np.broadcast_to(mass, (mesh.num_elements,) + mass.shape).copy()
    if with_stiffness:
        kgeo = np.einsum("eai,ebi->eab", mesh.jac, mesh.jac)
        loc += np.einsum("q,qla,eab,qkb->elk", rule.weights, gref, kgeo, gref)
    return loc * vol[:, None, None]


def _scatter(space, loc):
    nloc = space.basis.n_local
    ed = space.elem_dofs
    mat = sp.coo_matrix(
        (loc.ravel(),
         (np.repeat(ed, nloc, axis=1).ravel(), np.tile(ed, (1, nloc)).ravel())),
        shape=(space.dim, space.dim)).tocsr()
    return SparseOperator(mat)


def assemble_gram_l2(space, quad=None):
    """Unmasked mass matrix; row sums reproduce the basis integrals."""
    return _scatter(space, _geometric_local(space, quad or space.quad, False))


def assemble_gram_h1(space, quad=None):
    """Unmasked H^1 Gram (mass plus Laplace stiffness)."""
    return _scatter(space, _geometric_local(space, quad or space.quad, True))


def bilinear_value(op, u, v):
    """u^T A v for coefficient vectors or FE functions."""
    uc = u.coeffs if isinstance(u, FEFunction) else np.asarray(u, dtype=float)
    vc = v.coeffs if isinstance(v, FEFunction) else np.asarray(v, dtype=float)
    return float(uc @ op.apply(vc))


def lq_norm(v, q):
    """Plain L^q norm of an FE function (no gradient part), q finite."""
    space = v.space
    rule = space.quad
    phi, gref, mesh, vol = _element_data(space, rule)
    acc = 0.0
    for sl in _chunks(mesh.num_elements):
        vals, _ = _values_grads(space, v.coeffs, sl, phi, gref)
        acc += float(np.sum(vol[sl][:, None] * rule.weights * np.abs(vals) ** q))
    return acc ** (1.0 / q)


def integrate(mesh, fn, degree=6):
    """Integral of a pointwise callable over the mesh."""
    rule = quadrature_rule(mesh.dim, degree)
    vol = np.abs(mesh.det_jac) ** -1
    total = 0.0
    for sl in _chunks(mesh.num_elements):
        x = _phys_points(mesh, sl, rule.points)
        n, nq, d = x.shape
        vals = np.asarray(fn(x.reshape(-1, d)), dtype=float).reshape(n, nq)
        total += float(vol[sl] @ (vals @ rule.weights))
    return total


# ---------------------------------------------------------------------------
# norms


def norms(f, g, q=2, include_broken_h2=False, quad=None):
    """Broken norms of the difference f - g.

    f may be an exact solution (value/gradient/hessian callables), another
    FE function on the same space, or None (plain norms of g).  The sup
    norms are sampled on a dense per-element lattice, a documented
    approximation; everything else is quadrature on g's space.
    """
    space = g.space
    mesh = space.mesh
    rule = quad or space.quad
    if not (q == np.inf or q >= 1):
        raise ValueError("q must be >= 1 or inf")
    if include_broken_h2 and space.order < 2:
        raise ValueError("broken H2 norm needs order >= 2 (second derivatives of "
                         "P1 functions vanish identically inside elements)")
    if isinstance(f, FEFunction):
        if f.space is not space:
            raise ValueError("FE functions must share a space; embed first")
        return _norms_core(_fe_diff_eval(f, g), space, rule, q, include_broken_h2)
    return _norms_core(_exact_diff_eval(f, g), space, rule, q, include_broken_h2)


def _fe_diff_eval(f, g):
    diff = FEFunction(g.space, f.coeffs - g.coeffs)

    def at(sl, pts, phi, gref, want_hess):
        vals, grads = _values_grads(g.space, diff.coeffs, sl, phi, gref)
        hess = _fe_hessians(g.space, diff.coeffs, sl, pts) if want_hess else None
        return vals, grads, hess

    return at


def _exact_diff_eval(f, g):
    def at(sl, pts, phi, gref, want_hess):
        vals, grads = _values_grads(g.space, g.coeffs, sl, phi, gref)
        hess = _fe_hessians(g.space, g.coeffs, sl, pts) if want_hess else None
        if f is not None:
            x = _phys_points(g.space.mesh, sl, pts)
            n, nq, d = x.shape
            flat = x.reshape(-1, d)
            vals = f.value(flat).reshape(n, nq) - vals
            grads = f.gradient(flat).reshape(n, nq, d) - grads
            if want_hess:
                hess = f.hessian(flat).reshape(n, nq, d, d) - hess
        else:
            vals, grads = -vals, -grads
            if want_hess:
                hess = -hess
        return vals, grads, hess

    return at


def _fe_hessians(space, coeffs, sl, pts):
    href = space.basis.hessians(pts)               # (nq, nloc, d, d)
    local = coeffs[space.elem_dofs[sl]]
    ref = np.einsum("el,qlab->eqab", local, href)
    jac = space.mesh.jac[sl]
    return np.einsum("eai,eqab,ebj->eqij", jac, ref, jac)


def _norms_core(diff_at, space, rule, q, include_broken_h2):
    mesh = space.mesh
    phi = space.basis.values(rule.points)
    gref = space.basis.gradients(rule.points)
    lattice = sample_lattice(mesh.dim)
    phi_lat = space.basis.values(lattice)
    gref_lat = space.basis.gradients(lattice)
    vol = np.abs(mesh.det_jac) ** -1

    acc_l2 = acc_h1 = acc_vq = acc_gq = acc_h2 = 0.0
    sup = 0.0
    q_finite = q != np.inf
    for sl in _chunks(mesh.num_elements):
        vals, grads, hess = diff_at(sl, rule.points, phi, gref, include_broken_h2)
        w = vol[sl][:, None] * rule.weights
        gnorm2 = np.einsum("eqi,eqi->eq", grads, grads)
        acc_l2 += float(np.sum(w * vals**2))
        acc_h1 += float(np.sum(w * gnorm2))
        if q_finite and q != 2:
            acc_vq += float(np.sum(w * np.abs(vals) ** q))
            acc_gq += float(np.sum(w * gnorm2 ** (q / 2)))
        if include_broken_h2:
            acc_h2 += float(np.sum(w * np.einsum("eqij,eqij->eq", hess, hess)))

        lv, lg, _ = diff_at(sl, lattice, phi_lat, gref_lat, False)
        sup = max(sup, float(np.abs(lv).max()),
                  float(np.linalg.norm(lg, axis=2).max()))

    l2 = np.sqrt(acc_l2)
    h1_semi = np.sqrt(acc_h1)
    if not q_finite:
        w1q = sup
    elif q == 2:
        w1q = float(np.hypot(l2, h1_semi))
    else:
        w1q = float((acc_vq + acc_gq) ** (1.0 / q))
    broken = np.sqrt(acc_h2) if include_broken_h2 else None
    return NormReport(float(l2), float(h1_semi), w1q, sup, q, broken)
