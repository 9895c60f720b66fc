"""
Coarse normals, uneven density and holes
========================================

The flux data term only needs roughly consistent normals, so the same
pipeline copes with inputs that would trouble a local method.
"""

import numpy as np

from smoothrecon import synthetic
from smoothrecon.meshing import euler_characteristic, is_watertight
from smoothrecon.pipeline import reconstruct

sphere = synthetic.sample_primitive(synthetic.Sphere(1.0), 20_000, seed=1)


def show(name, samples):
    # a wider empty margin than the default 6 cells: without data to pin it
    # down, the field can bulge past a hole or an orientation seam and reach
    # the grid face before it drops below the isovalue
    mesh, info = reconstruct(samples, margin=12)
    r = np.linalg.norm(mesh.vertices, axis=1)
    print("%-22s n=%6d watertight=%s euler=%d radius %.3f..%.3f"
          % (name, len(samples), is_watertight(mesh), euler_characteristic(mesh), r.min(), r.max()))


# one normal per hemisphere, as if each half had been scanned from one side
show("two view directions",
     synthetic.coarsen_orientation(sphere, "half_space", (1, 0, 0), (-1, 0, 0)))

# keep 2% of the +x half and add 2% outliers
show("50:1 density + outliers",
     synthetic.corrupt(sphere, outlier_fraction=0.02,
                       density_split=synthetic.DensitySplit((1, 0, 0), 0.0, 0.02), seed=3))

# cut a 30 degree cap off the top
show("30 degree hole",
     synthetic.corrupt(sphere, holes=[synthetic.Hole((0, 0, 1), np.radians(30))], seed=3))
