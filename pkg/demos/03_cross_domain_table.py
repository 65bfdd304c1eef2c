"""A small leave-one-domain-out comparison of the four training regimes.

Uses five seeds so it finishes quickly; the acceptance tests use thirty.
Run with ``python3 demos/03_cross_domain_table.py``.
"""

from fedsim.harness import ExperimentSpec, format_summary, run_experiment, summarize

# %% Every domain takes a turn as the unseen user.
spec = ExperimentSpec(scenario="table2", seeds=list(range(5)))
rows = run_experiment(spec)
print(f"{len(rows)} rows over {len(spec.seeds)} seeds and users {spec.users}\n")

# %% Means per method, then which pairs are ordered by AUC.
summary = summarize(rows)
print(format_summary(summary))
print()
for pair, holds in summary["ordering"].items():
    print(f"{pair:>20}: {holds}")

# %% Growing the federation: K = 2, 3, 4 centers for a fixed user.
sweep = run_experiment(ExperimentSpec(scenario="sweep-centers", seeds=list(range(5)), max_centers=4))
print()
print(format_summary(summarize(sweep)))
