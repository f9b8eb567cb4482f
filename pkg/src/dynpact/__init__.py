"""Dynamic photoacoustic tomography reconstruction with low-rank
spatiotemporal estimates.

Subpackages and modules:

- geometry: voxel grids, transducer arcs, rotating-gantry scan poses
- operator: per-frame forward projection and exact adjoint
- lowrank: factored images, randomized SVD, nuclear-norm prox
- phantoms: dynamic test objects and measurement simulation
- solver: ordered-subsets accelerated proximal-gradient reconstruction
- baseline: universal back-projection and speed-of-sound sweep
- metrics: error and objective reporting
- container, config, cli: persistence and the command-line surface
"""

__version__ = "0.1.0"
