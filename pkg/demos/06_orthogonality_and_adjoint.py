"""Integrated Galerkin orthogonality and the linearized adjoint problem.

For nested discrete minimizers, the first-order conditions integrate to
an orthogonality relation whose defect is zero up to solver tolerance;
this is the nonlinear substitute for subtracting the two variational
equations.  The adjoint problem turns an L^2 right-hand side into a
test function whose approximation quality yields the extra power of h;
its H^2-regularity ratio stays bounded under reference refinement.
"""

from nitschelab import (NewtonOptions, build_problem, build_unit_mesh,
                        galerkin_defect, make_space, minimize, refine)
from nitschelab.analysis import adjoint_identity_check

problem = build_problem("quartic", 1)

print("orthogonality defect between consecutive nested minimizers:")
mesh = build_unit_mesh(1, 16)
prev = None
for level in range(4):
    space = make_space(mesh, 1, problem.boundary_fn)
    u_h, log = minimize(problem.model, space, NewtonOptions())
    if prev is not None:
        defect = galerkin_defect(problem.model, u_h, prev)
        print(f"  levels {level - 1} -> {level}: defect {defect:.3e} "
              f"(solver tolerances 1e-12)")
    prev = u_h
    mesh = refine(mesh)

print("\nthe defect sees an unconverged coarse solve immediately:")
loose_space = make_space(build_unit_mesh(1, 16), 1, problem.boundary_fn)
u_loose, log = minimize(problem.model, loose_space,
                        NewtonOptions(residual_tol=1e-3))
fine_space = make_space(refine(loose_space.mesh), 1, problem.boundary_fn)
u_fine, _ = minimize(problem.model, fine_space)
print(f"  residual at return {log.residual_norms[-1]:.3e} -> "
      f"defect {galerkin_defect(problem.model, u_fine, u_loose):.3e}")

print("\nduality identity residual and H^2 ratio vs reference depth:")
space = make_space(build_unit_mesh(1, 16), 1, problem.boundary_fn)
u_h, _ = minimize(problem.model, space)
for finer in (1, 2, 3):
    chk = adjoint_identity_check(problem, u_h, levels_finer=finer)
    print(f"  reference {finer} level(s) finer: identity residual "
          f"{chk.identity_residual:.3e}, H2 ratio {chk.regularity_ratio:.5f}")
