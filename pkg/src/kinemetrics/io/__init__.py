"""External data contracts: text file formats, the binary wire codec and stream capture."""

from .capture import CaptureSession, CaptureSummary, capture_stream, scan_stream
from .files import (
    SCHEMA,
    PoseLog,
    TrialManifest,
    load_manifest,
    read_annotations,
    read_pivot_calibration,
    read_pose_log,
    read_reference_calibration,
    write_annotations,
    write_pivot_calibration,
    write_pose_log,
    write_reference_calibration,
)
from .wire import WireMessage, decode_frame, decode_wire, encode_wire
