"""Seismic moment-tensor inversion on variable station sets.

Synthetic data engine (layered-earth ray simulator + physics-structured
randomization), a permutation-invariant set-transformer regressor, the
two-stage training curriculum, and evaluation/interpretability tooling.
"""

__version__ = "0.1.0"
