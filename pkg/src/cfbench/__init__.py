"""cfbench: calibration and evaluation toolkit for shuttle car-following models.

Pipeline: ingest raw leader/follower trajectories, clean and smooth them,
segment into car-following episodes, calibrate physics-based and learned
models on one-step acceleration, roll every model out in closed loop, and
rank the roster with a cross-model Z-score framework.
"""

__version__ = "0.1.0"

__all__ = [
    "dataio",
    "smoothing",
    "models",
    "learners",
    "calibration",
    "simulation",
    "metrics",
    "scoring",
    "cli",
]
