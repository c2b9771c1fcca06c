"""Coronary artery occlusion localisation from 12-lead ECG pulses.

Subpackages cover signal conditioning, synthetic data, pulse extraction, a
small numpy network library, the two-stage cascade and its evaluation.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
