"""Nodal interpolation orders and the inverse estimate.

For the smooth sine-product target, nodal interpolation onto order-m
Lagrange spaces converges like h^{m+1} in L^2 and h^m in the H^1
seminorm.  The second table shows the inverse-estimate ratio
||v||_{W^{1,inf}} / (h^{-d/2} ||v||_{W^{1,2}}) over random discrete
functions staying bounded as the mesh is refined.
"""

from nitschelab import (build_problem, build_unit_mesh, check_inverse_estimate,
                        estimate_rate, interpolate, make_space, norms, refine,
                        width)

exact = build_problem("linear", 2).exact

for order in (1, 2, 3):
    mesh = build_unit_mesh(2, 4)
    rows = []
    for _ in range(4):
        space = make_space(mesh, order, 0.0)
        rep = norms(exact, interpolate(space, exact.value))
        rows.append((width(mesh), rep.l2, rep.h1_semi))
        mesh = refine(mesh)
    slope_l2 = estimate_rate([(h, e) for h, e, _ in rows]).slope
    slope_h1 = estimate_rate([(h, e) for h, _, e in rows]).slope
    print(f"order {order}:")
    for h, e2, e1 in rows:
        print(f"  h = {h:8.5f}   L2 err = {e2:10.3e}   H1 err = {e1:10.3e}")
    print(f"  fitted slopes: L2 {slope_l2:.3f} (expect {order + 1}), "
          f"H1 {slope_h1:.3f} (expect {order})\n")

print("inverse-estimate ratio, order 2 on the square (level-stable):")
mesh = build_unit_mesh(2, 4)
for level in range(4):
    space = make_space(mesh, 2, 0.0)
    ratio = check_inverse_estimate(space, trials=10, seed=7)
    print(f"  level {level}: max ratio {ratio:.5f}")
    mesh = refine(mesh)
