"""Z-shaped interface problem: S-AFEM with Gauss-Seidel smoothing.

Runs the adaptive loop with L = 5, K = 5 and prints the solve levels, then
fits the convergence rate against dofs and against cumulative cost.
Expect both slopes near -1/2 (optimal for P1).
"""

from safem import SafemConfig, fit_rate, make_problem, run_safem

problem, _ = make_problem("zshape_interface")
config = SafemConfig(theta=0.5, lam=0.1, L=5, K=5, smoother="gauss_seidel", max_dofs=50_000)
log = run_safem(problem, config)

print(f"{'level':>5} {'dofs':>8} {'k':>3} {'eta':>11} {'cost':>10}")
for s in log.solve_levels():
    print(f"{s.level:5d} {s.num_dofs:8d} {s.k_final:3d} {s.estimator:11.4e} {s.cost:10d}")

by_dofs = fit_rate(log, "estimator", "dofs")
by_cost = fit_rate(log, "estimator", "cost")
print(f"slope vs dofs {by_dofs.slope:.3f}, vs cost {by_cost.slope:.3f}")
