"""Peduncle detection for robotic sweet-pepper harvesting.

Two per-point scoring systems (color+geometry features with an SVM, and a
small inception-style patch CNN) feed a shared 3D region-of-interest and
filtering stage. A precision-recall harness and a synthetic RGB-D scene
generator support desk-scale verification.
"""

from . import classifiers, cloud, evaluate, features, minicnn, pipeline, scenegen, workflows
from .errors import PeduncleError

__all__ = [
    "classifiers",
    "cloud",
    "evaluate",
    "features",
    "minicnn",
    "pipeline",
    "scenegen",
    "workflows",
    "PeduncleError",
]

__version__ = "0.1.0"
