"""
Comparing smoothness energies
=============================

Reconstruct the sphere/box/cylinder scene with the membrane, second-order
and mixed second-order energies and print a metrics table.
"""

from smoothrecon import synthetic
from smoothrecon.metrics import format_table, report
from smoothrecon.pipeline import reconstruct

scene = synthetic.primitive_scene()
samples = synthetic.corrupt(synthetic.sample_primitive(scene, 20_000, seed=1),
                            noise_sigma=0.005, seed=2)

rows = []
for model, name in [(1, "membrane"), (3, "second"), (4, "mixed")]:
    mesh, info = reconstruct(samples, energy=model)
    rows.append((name, mesh, samples))

# the max columns come from the noisiest vertex; read them with care
print(format_table(report(rows), units="world units"))
