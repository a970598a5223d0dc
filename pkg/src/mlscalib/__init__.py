"""Boresight self-calibration for mobile LiDAR by minimising local scatter."""

from .calib import CalibrationResult, CoverageError, GridSpec, WindowTooLongError, calibrate, score_candidate
from .geom import OutOfSpanError, Rotation3, Trajectory, chord_displacement, compose, rotation_from_euler
from .georef import MountConfig, RawReturn, ReturnStream, georeference_return, georeference_stream, split_scans
from .scatter import DegenerateInputError, GeoPointCloud, average_scatter, knn, local_scatter
from .simscene import default_scanner, simulate, standard_calibration_run, street_canyon_scene

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult",
    "CoverageError",
    "DegenerateInputError",
    "GeoPointCloud",
    "GridSpec",
    "MountConfig",
    "OutOfSpanError",
    "RawReturn",
    "ReturnStream",
    "Rotation3",
    "Trajectory",
    "WindowTooLongError",
    "average_scatter",
    "calibrate",
    "chord_displacement",
    "compose",
    "default_scanner",
    "georeference_return",
    "georeference_stream",
    "knn",
    "local_scatter",
    "rotation_from_euler",
    "score_candidate",
    "simulate",
    "split_scans",
    "standard_calibration_run",
    "street_canyon_scene",
]
