"""A test mass orbits a known central body while two unseen masses tug on it.

Seven orbits are chosen from 300 candidates on an annulus, and the GP learns the
extra acceleration. Both selection rules are scored against the size of the
hidden pull itself.
"""

from misdyn import bench

system, cfg = bench.scenario_gravity()
report = bench.run_comparison(cfg, ["design", "random"], realizations=10, budgets=[7], system=system)

print(f"hidden acceleration, integrated magnitude: {report.correction_energy:.3f}")
for method in ("design", "random"):
    print(f"{method:>7}: {report.mean_error(method, 7):.3f} +- {report.std_error(method, 7):.3f}")
