"""Exception hierarchy.

Every family carries an ``exit_code`` so the CLI can map failures to
distinct process exit statuses without a lookup table per command.
"""

from __future__ import annotations


class KinemetricsError(Exception):
    exit_code = 1


# pose-core
class EmptyTrack(KinemetricsError):
    exit_code = 10


# calibration
class CalibrationError(KinemetricsError):
    exit_code = 20


class TooFewSamples(CalibrationError):
    exit_code = 21


class DegenerateRotations(CalibrationError):
    exit_code = 22


class NoPairs(CalibrationError):
    exit_code = 23


# transform chain
class ChainError(KinemetricsError):
    exit_code = 30


class MissingReferenceCalibration(ChainError):
    exit_code = 31


class NoOverlap(ChainError):
    exit_code = 32


# intervals / synchronization
class SyncError(KinemetricsError):
    exit_code = 40


class NoContactDetected(SyncError):
    exit_code = 41


class UnderflowBeforeEpoch(SyncError):
    exit_code = 42


# metrics
class MetricsError(KinemetricsError):
    exit_code = 50


class ZeroDuration(MetricsError):
    exit_code = 51


class InsufficientSamples(MetricsError):
    exit_code = 52


# statistics
class StatsError(KinemetricsError):
    exit_code = 60


class TooFewGroups(StatsError):
    exit_code = 61


class TooFewObservations(StatsError):
    exit_code = 62


class DegenerateVariance(StatsError):
    exit_code = 63

    def __init__(self, message: str, table=None):
        super().__init__(message)
        self.table = table


# files and manifests
class IngestError(KinemetricsError):
    exit_code = 70


class ParseError(IngestError):
    exit_code = 71

    def __init__(self, message: str, path=None, line: int | None = None, column: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
                if column is not None:
                    where += f":{column}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
        self.column = column


class MissingFile(IngestError):
    exit_code = 72

    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = path


class SchemaVersionMismatch(IngestError):
    exit_code = 73


class ManifestError(IngestError):
    exit_code = 74


class IoFailure(IngestError):
    exit_code = 75


# simulator
class InvalidConfig(KinemetricsError):
    exit_code = 80
