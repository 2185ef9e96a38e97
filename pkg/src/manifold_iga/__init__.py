"""Smooth manifold basis functions on unstructured quad meshes and an
isogeometric FEM built on them (Poisson, Kirchhoff-Love plates and shells).
"""

from .quadmesh import (ControlMesh, MeshError, RingPatch, extract_ring,
                       reflect_ghosts, catmull_clark_refine, load_obj,
                       save_obj)

__all__ = [
    "ControlMesh", "MeshError", "RingPatch", "extract_ring",
    "reflect_ghosts", "catmull_clark_refine", "load_obj", "save_obj",
]
