"""Convection-diffusion on the L-shape with Zarantonello symmetrization.

The form is not symmetric, so CG cannot be used directly.  Both the solver
(two inner PCG steps) and the smoother (four inner PCG steps) wrap the
symmetric part in a damped Zarantonello iteration.
"""

from safem import SafemConfig, fit_rate, make_problem, run_safem

problem, _ = make_problem("lshape_convection_diffusion")
config = SafemConfig(
    L=5, K=5, max_dofs=50_000,
    smoother={"kind": "zarantonello", "delta": 0.5, "J": 4, "inner": "pcg_jacobi_step"},
    solver={"kind": "zarantonello_pcg", "delta": 0.5, "inner_iters": 2},
)
log = run_safem(problem, config)
iters = [s.k_final for s in log.solve_levels()]
print("solver iterations per solve level:", iters)
print(f"final dofs {log.levels[-1].num_dofs}, eta {log.levels[-1].estimator:.3e}")
print(f"rate vs dofs {fit_rate(log, 'estimator', 'dofs').slope:.3f}")
