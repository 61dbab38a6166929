"""Swap the exact GP for a random-feature ridge model and time a query.

The ridge model costs O(D) per query regardless of how many observations were
used for training, so it suits long rollouts.
"""

import time

import numpy as np

from misdyn import bench
from misdyn.rff import emulate_query, emulate_trajectory, fit_ridge, sample_features

system, cfg = bench.scenario_linear_quadratic()
seeds = np.random.default_rng(0).uniform(-1, 1, (40, 2))
obs = bench.observe(cfg, system, seeds, range(40), noise_seed=0)
gp = bench.fit_correction(cfg, system, obs)

grid = np.random.default_rng(1).uniform(-1, 1, (2000, 2))
for D in (1024, 4096, 16384):
    model = fit_ridge(obs, sample_features(cfg.kernel_config, 2, D, seed=0))
    t = time.perf_counter()
    for q in grid[:1000]:
        emulate_query(model, q)
    per_query = (time.perf_counter() - t) / 1000
    gap = np.max(np.abs(model.mean(grid) - gp.mean(grid)))
    print(f"D={D:>6}: max gap to GP mean {gap:.2e}, {per_query * 1e6:.0f} us/query")

start = [0.5, -0.5]
ridge = fit_ridge(obs, sample_features(cfg.kernel_config, 2, 4096, seed=0))
rff_end = emulate_trajectory(system, ridge, start, cfg.grid).states[-1]
gp_end = emulate_trajectory(system, gp, start, cfg.grid).states[-1]
print("endpoint from", start, "ridge:", rff_end.round(5), "GP:", gp_end.round(5))
