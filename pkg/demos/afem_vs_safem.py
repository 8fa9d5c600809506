"""Standard AFEM (L = 1) against S-AFEM on the Z-shape, to the same tolerance.

Prints final cost, algebraic work (iterations x dofs) and the wall-clock
speed-up factor of S-AFEM relative to the AFEM reference.  Timings are the
median of three runs.
"""

import statistics

from safem import SafemConfig, make_problem, run_safem, speedup_factor

problem, _ = make_problem("zshape_interface")
tol = 1.5e-2


def median_run(config):
    logs = [run_safem(problem, config) for _ in range(3)]
    times = [lg.levels[-1].cumulative_time for lg in logs]
    return logs[times.index(statistics.median_low(times))]


reference = median_run(SafemConfig(L=1, estimator_tol=tol / 2))
for L, K in ((3, 2), (5, 5)):
    log = median_run(SafemConfig(L=L, K=K, smoother="gauss_seidel", estimator_tol=tol))
    last = log.solve_levels()[-1]
    s = speedup_factor(reference, log)
    print(f"L={L} K={K}: dofs {last.num_dofs}, cost {last.cost}, work {last.work}, "
          f"time {last.cumulative_time:.3f}s, speed-up {s['speedup'][-1]:.2f}")

last = next(s for s in reference.solve_levels() if s.estimator <= tol)
print(f"AFEM at eta <= {tol}: dofs {last.num_dofs}, cost {last.cost}, work {last.work}, "
      f"time {last.cumulative_time:.3f}s")
