"""Structured scene-command language toolkit.

Submodules:

* ``lang``     — command data model, text format, validation, normalization
* ``geom``     — interpretation into corners, boxes, and triangle meshes
* ``tokens``   — bijective token encoding, grammar mask, token accuracy
* ``metrics``  — layout F1, oriented-box IoU, detection F1, voxel IoU
* ``generate`` — procedural scenes and simulated point clouds
* ``model``    — point-cloud encoder, transformer decoder, training, decoding
* ``cli``      — command-line front door
"""

from . import errors, lang

__version__ = "0.1.0"

__all__ = ["errors", "lang", "__version__"]
