"""Instrument-tracking analysis for bimanual surgical simulation trials.

Two-camera 6-DOF pose streams become global tip trajectories, motion, time
and bimanual-coordination metrics, and group comparisons.
"""

from .calibration import PivotCalibration, ReferenceCalibration, pivot_calibrate, reference_calibrate, rotation_coverage
from .chain import ChainSpec, chain_consistency, resolve_tip_trajectory
from .errors import KinemetricsError
from .intervals import Interval, IntervalSet, difference, duration, intersect, tracked_intervals, union
from .metrics import (
    BimanualMetrics,
    MetricsReport,
    MotionMetrics,
    TimeMetrics,
    bimanual_metrics,
    motion_metrics,
    normalized_path_length,
    time_metrics,
)
from .pose import PoseSample, PoseTrack, RigidTransform, Trajectory, compose, invert, resample_uniform, transform_point
from .stats import aggregate_participants, one_way_anova, studentized_range_cdf, tukey_hsd
from .sync import AnnotationSet, SyncOffset, apply_offset, detect_contact_sync

__version__ = "0.1.0"
