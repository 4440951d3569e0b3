"""
A small coverage study
======================

Selective inference (SIR), data splitting (DS) and naive inference on
repeated draws from scale-free graphs. Ten replications keep this quick;
the acceptance suite runs the full-size versions.
"""

from selgraph.sim import harness

config = harness.ScenarioConfig(p=30, n=500, replications=10, bootstrap_draws=2000, master_seed=1)


def progress(done, total):
    print(f"  replication {done}/{total}", end="\r")


records = harness.run_scenario(config, progress)
rows = harness.aggregate(records)
print()
print(harness.format_table(rows))

###############################################################################
# The same rows are available as CSV for plotting elsewhere.

print(harness.rows_to_csv(rows)[:400])
