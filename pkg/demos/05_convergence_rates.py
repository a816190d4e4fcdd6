"""The headline experiment: H^1 rate m and L^2 rate m+1.

Runs manufactured-solution studies for the semilinear quartic benchmark
on the square with orders 1 and 2 and prints the per-level errors with
fitted slopes.  The L^2 order exceeding the H^1 order by one is the
duality-argument gain that the rest of the diagnostics dissect.
"""

from nitschelab import StudyOptions, build_problem, convergence_study

problem = build_problem("quartic", 2)

for order in (1, 2):
    report = convergence_study(problem, order, 4, StudyOptions(coarse_cells=8))
    print(f"order m = {order}:")
    print(f"  {'level':>5} {'h':>9} {'dofs':>7} {'L2 error':>12} "
          f"{'H1 error':>12} {'iters':>6}")
    for lr in report.levels:
        print(f"  {lr.level:5d} {lr.h:9.5f} {lr.dofs:7d} {lr.err_l2:12.4e} "
              f"{lr.err_h1:12.4e} {lr.newton_iters:6d}")
    print(f"  fitted H1 slope {report.rate_h1.slope:.4f} (expect {order}),  "
          f"L2 slope {report.rate_l2.slope:.4f} (expect {order + 1})\n")

print("the same study through the command line:")
print("  nitschelab run study.yaml   # with problem: quartic, dim: 2, ...")
print("  nitschelab plot out/rates.csv")
