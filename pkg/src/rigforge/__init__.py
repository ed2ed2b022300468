"""rigforge: automatic rigging for articulated character meshes.

Given a triangle mesh, the pipeline predicts an animation skeleton (joints,
tree connectivity, root) and per-vertex skinning weights, deforms meshes via
linear blend skinning, and scores rigs against references with a metric
suite.  All numerics run on a small float64 reverse-mode tape engine, so
every stage is trainable at desk scale.
"""

__version__ = "0.1.0"
