"""Quasi-error diagnostics with the Galerkin oracle switched on.

The oracle solves every level exactly (outside the timed sections), so the
log carries the algebraic error and eta(u*).  We check tail summability of
the quasi-error and how close eta(u^k) stays to eta(u*) for small lambda.
"""

from safem import SafemConfig, make_problem, run_safem
from safem.analysis import estimator_equivalence_check, tail_summability

problem, _ = make_problem("zshape_interface")

log = run_safem(problem, SafemConfig(L=5, K=5, max_dofs=20_000, oracle_tracking=True))
rep = tail_summability(log)
print("quasi-errors:", " ".join(f"{h:.3e}" for h in log.column("quasi_error")))
print(f"tail ratios max {rep.max_ratio:.3f}, fitted factor per solve level {rep.q_hat:.3f}")

for lam in (1e-3, 0.1, 1.0):
    log = run_safem(problem, SafemConfig(lam=lam, L=5, K=5, max_dofs=20_000, oracle_tracking=True))
    eq = estimator_equivalence_check(log, lam)
    print(f"lambda={lam:g}: eta(u^k)/eta(u*) in [{eq['min']:.4f}, {eq['max']:.4f}]")
