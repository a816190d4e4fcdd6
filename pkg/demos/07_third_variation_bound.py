"""The mixed-norm bound on the third variation.

An energy qualifies for the improved L^2 rate when its third variation
satisfies |d3J(u)(U,V,V)| <= C ||U||_{W^{2,2}} ||V||_{W^{1,2}} ||V||_{W^{o,r}}.
For a quadratic energy the third variation vanishes identically; for the
semilinear quartic potential the sampled ratio stays level-stable; for
the quasilinear minimal-surface energy the gradient-heavy blocks are
structurally nonzero and the same bound is not guaranteed.
"""

from nitschelab import (NewtonOptions, build_problem, build_unit_mesh,
                        estimate_pq_constant, make_space, minimize, refine)

for name in ("linear", "quartic"):
    problem = build_problem(name, 1)
    print(f"{name}: sampled |d3J| ratio with (o, r) = (1, 2)")
    mesh = build_unit_mesh(1, 8)
    for level in range(3):
        space = make_space(mesh, 2, problem.boundary_fn)
        u_h, _ = minimize(problem.model, space, NewtonOptions())
        est = estimate_pq_constant(problem.model, u_h, norm_pair=(1, 2),
                                   samples=6, seed=0)
        print(f"  level {level}: max ratio {est.max_ratio:.6f}")
        mesh = refine(mesh)
    print()

print("minimal surface on the square (rough directions included; the")
print("sampled ratio is reported for comparison, growth is permitted):")
problem = build_problem("minimal_surface", 2)
mesh = build_unit_mesh(2, 4)
for level in range(3):
    space = make_space(mesh, 2, problem.boundary_fn)
    u_h, _ = minimize(problem.model, space, NewtonOptions())
    est = estimate_pq_constant(problem.model, u_h, samples=4, seed=0)
    print(f"  level {level}: max ratio {est.max_ratio:.6f}")
    mesh = refine(mesh)
