"""Seeded benchmark harness: repeated trials, geometric aggregates, CSV.

Runs a small low-rank recovery experiment (two trials per algorithm) and
prints the aggregate report exactly as the benchmark CSV emits it.
"""

from salsa_tt.testbed import ExperimentSpec, report_csv, run_experiment

spec = ExperimentSpec(
    target="random_tt",
    d=4,
    n=8,
    c_sf=6,
    r_p=3,
    r_lim=5,
    k=3,
    trials=2,
    seed=7,
    algorithms=("salsa", "greedy_als"),
    max_iters=300,
)

records, rows = run_experiment(
    spec,
    on_trial=lambda rec: print(
        "trial seed %-5d %-10s relC %.2e ranks %s (%s)"
        % (rec.seed, rec.algorithm, rec.rel_c,
           "x".join(map(str, rec.ranks)), rec.verdict)
    ),
)

print("\nreport:")
print(report_csv(rows))
