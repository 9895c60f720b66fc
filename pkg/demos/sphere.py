"""
Reconstructing a noisy sphere
=============================

Sample a unit sphere, jitter the points, reconstruct with the default
settings and look at the result.
"""

import numpy as np

from smoothrecon import synthetic
from smoothrecon.meshing import euler_characteristic, is_watertight
from smoothrecon.metrics import curvature_stats, rms_distance
from smoothrecon.pipeline import reconstruct

# 20k oriented samples with a little positional noise
samples = synthetic.sample_primitive(synthetic.Sphere(1.0), 20_000, seed=1)
samples = synthetic.corrupt(samples, noise_sigma=0.005, seed=2)

# second-order energy with mixed terms, lambda 0.2, 64^3 grid, 3 levels
mesh, info = reconstruct(samples)
print("gamma %.4f, %.1f s" % (info.gamma, info.seconds))
for level in info.levels:
    print("  level %(level)d dims %(dims)s sweeps %(sweeps)d" % level)

cell = info.transform.scale
print("triangles:", mesh.n_triangles)
print("watertight:", is_watertight(mesh), " euler:", euler_characteristic(mesh))
print("rms: %.5f (%.3f cells)" % (rms_distance(samples, mesh), rms_distance(samples, mesh) / cell))

# mean curvature should sit near 1/r = 1
c = curvature_stats(mesh)
print("avg |H| %.3f  avg K %.3f" % (c.avg_mean, c.avg_gauss))
print("radius range:", np.ptp(np.linalg.norm(mesh.vertices, axis=1)))
