"""Text file formats.

Every file starts with a schema tag (``kinemetrics/1``). Delimited files put
it on a leading ``#`` comment line; JSON documents carry it under
``"schema"``. Floats are written with 17 significant digits so they read
back bit-exact.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ..calibration import PivotCalibration, ReferenceCalibration
from ..errors import ManifestError, MissingFile, ParseError, SchemaVersionMismatch
from ..intervals import IntervalSet
from ..pose import NS_PER_S, PoseTrack, RigidTransform
from ..stats import GROUP_ORDER
from ..sync import INSTRUMENTS, AnnotationSet

SCHEMA = "kinemetrics/1"
_UMASK = os.umask(0)
os.umask(_UMASK)
POSE_COLUMNS = ("t_ns", "body_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "visible")
ANNOTATION_COLUMNS = ("instrument", "start_s", "end_s")
MAX_BODY_ID = 16
QUAT_NORM_TOL = 1e-6


class AnnotationOverlapWarning(UserWarning):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    return path.read_text(encoding="utf-8").splitlines()


def _check_tag(path, first: str | None, kind: str) -> None:
    if first is None:
        raise ParseError("empty file", path, 1)
    parts = first.lstrip("#").split()
    if not first.startswith("#") or len(parts) != 2:
        raise ParseError(f"expected '# {SCHEMA} {kind}' header", path, 1)
    if parts[0] != SCHEMA:
        if parts[0].startswith("kinemetrics/"):
            raise SchemaVersionMismatch(f"{path}: schema {parts[0]}, expected {SCHEMA}")
        raise ParseError(f"expected '# {SCHEMA} {kind}' header", path, 1)
    if parts[1] != kind:
        raise ParseError(f"expected a {kind} file, found {parts[1]}", path, 1)


def _header_fields(path, lines: list[str], columns: tuple[str, ...]) -> tuple[dict[str, str], int]:
    """Parse ``# key=value`` lines after the tag; returns them and the data start."""
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, value = lines[i][1:].strip().partition("=")
        if not sep:
            raise ParseError("header lines must be '# key=value'", path, i + 1)
        meta[key.strip()] = value.strip()
        i += 1
    if i >= len(lines) or tuple(c.strip() for c in lines[i].split(",")) != columns:
        raise ParseError(f"expected column row {','.join(columns)}", path, i + 1)
    return meta, i + 1


def _number(text: str, path, line: int, col: int, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", path, line, col) from None
    return value


# ---------------------------------------------------------------------------
# pose logs


@dataclass
class PoseLog:
    tracks: dict[str, PoseTrack]
    camera_id: str = ""
    epoch_ns: int = 0


_ROW = "%d,%s," + ",".join(["%.17g"] * 7) + ",%d"


def write_pose_log(path, tracks: Iterable[PoseTrack], camera_id: str | None = None, epoch_ns: int = 0) -> None:
    tracks = list(tracks)
    if camera_id is None:
        camera_id = tracks[0].camera_id if tracks else ""
    rows = []
    for order, tr in enumerate(tracks):
        if not tr.body_id or len(tr.body_id) > MAX_BODY_ID or "," in tr.body_id:
            raise ValueError(f"body id {tr.body_id!r} must be 1-{MAX_BODY_ID} chars without commas")
        body = tr.body_id
        for t, q, p, vis in zip(tr.t.tolist(), tr.q.tolist(), tr.p.tolist(), tr.visible.tolist()):
            rows.append((t, order, _ROW % (t, body, *q, *p, vis)))
    rows.sort(key=lambda r: (r[0], r[1]))
    head = [f"# {SCHEMA} pose-log", f"# epoch_ns={int(epoch_ns)}", f"# camera_id={camera_id}", ",".join(POSE_COLUMNS)]
    atomic_write_text(path, "\n".join(head + [r[2] for r in rows]) + "\n")


def _parse_pose_rows(path, lines: list[str], start: int):
    """Per-line parse with precise error locations."""
    cols: dict[str, list] = {}
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        f = line.split(",")
        if len(f) != len(POSE_COLUMNS):
            raise ParseError(f"expected {len(POSE_COLUMNS)} fields, got {len(f)}", path, lineno)
        t = _number(f[0], path, lineno, 1, int)
        if t < 0:
            raise ParseError("negative timestamp", path, lineno, 1)
        body = f[1]
        if not body or len(body) > MAX_BODY_ID:
            raise ParseError(f"body id must be 1-{MAX_BODY_ID} characters", path, lineno, 2)
        nums = [_number(f[k], path, lineno, k + 1) for k in range(2, 9)]
        for k, v in enumerate(nums, start=3):
            if not math.isfinite(v):
                raise ParseError("non-finite value", path, lineno, k)
        if f[9] not in ("0", "1"):
            raise ParseError("visible must be 0 or 1", path, lineno, 10)
        vis = f[9] == "1"
        if vis:
            norm = math.sqrt(sum(v * v for v in nums[:4]))
            if abs(norm - 1.0) > QUAT_NORM_TOL:
                raise ParseError(f"quaternion norm {norm:.9g} is not 1", path, lineno, 3)
        c = cols.setdefault(body, [[], [], [], []])
        if c[0] and t <= c[0][-1]:
            raise ParseError(f"timestamps of {body!r} are not increasing", path, lineno, 1)
        c[0].append(t)
        c[1].append(nums[:4])
        c[2].append(nums[4:])
        c[3].append(vis)
    return {b: (np.array(t, dtype=np.int64), np.array(q), np.array(p), np.array(v, dtype=bool))
            for b, (t, q, p, v) in cols.items()}


def _parse_pose_rows_fast(lines: list[str], start: int):
    """Bulk parse; returns None whenever anything looks off so the careful path can report it."""
    data = [ln for ln in lines[start:] if ln.strip()]
    if not data:
        return {}
    fields = [ln.split(",") for ln in data]
    if any(len(f) != len(POSE_COLUMNS) for f in fields):
        return None
    try:
        t = np.array([int(f[0]) for f in fields], dtype=np.int64)
        nums = np.array([f[2:9] for f in fields], dtype=float)
    except (ValueError, OverflowError):
        return None
    vis_txt = [f[9] for f in fields]
    if any(v not in ("0", "1") for v in vis_txt) or np.any(t < 0) or not np.all(np.isfinite(nums)):
        return None
    vis = np.array([v == "1" for v in vis_txt])
    norms = np.linalg.norm(nums[:, :4], axis=1)
    if np.any(vis & (np.abs(norms - 1.0) > QUAT_NORM_TOL)):
        return None
    bodies = [f[1] for f in fields]
    out = {}
    order = list(dict.fromkeys(bodies))
    if any(not b or len(b) > MAX_BODY_ID for b in order):
        return None
    body_arr = np.array(bodies)
    for b in order:
        m = body_arr == b
        tb = t[m]
        if len(tb) > 1 and np.any(np.diff(tb) <= 0):
            return None
        out[b] = (tb, nums[m, :4], nums[m, 4:], vis[m])
    return out


def read_pose_log(path) -> PoseLog:
    lines = _read_lines(path)
    _check_tag(path, lines[0] if lines else None, "pose-log")
    meta, start = _header_fields(path, lines, POSE_COLUMNS)
    epoch = _number(meta.get("epoch_ns", "0"), path, 2, 1, int)
    cols = _parse_pose_rows_fast(lines, start)
    if cols is None:
        cols = _parse_pose_rows(path, lines, start)

    camera = meta.get("camera_id", "")
    tracks = {}
    for body, (t, q, p, vis) in cols.items():
        q = q.copy()
        # poses of invisible samples are ignored, but must still normalise
        q[~np.any(q != 0, axis=1)] = (1.0, 0.0, 0.0, 0.0)
        tracks[body] = PoseTrack(body, camera, t, q, p, vis)
    return PoseLog(tracks, camera, epoch)


# ---------------------------------------------------------------------------
# annotations


def read_annotations(path) -> AnnotationSet:
    """Instrument usage on the video timeline; overlapping rows are merged with a warning."""
    lines = _read_lines(path)
    _check_tag(path, lines[0] if lines else None, "annotations")
    _, start = _header_fields(path, lines, ANNOTATION_COLUMNS)
    raw: dict[str, list[tuple[int, int]]] = {}
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        f = [x.strip() for x in line.split(",")]
        if len(f) != 3:
            raise ParseError(f"expected 3 fields, got {len(f)}", path, lineno)
        name = f[0]
        if name not in INSTRUMENTS:
            raise ParseError(f"unknown instrument {name!r}", path, lineno, 1)
        a = _number(f[1], path, lineno, 2)
        b = _number(f[2], path, lineno, 3)
        if not (math.isfinite(a) and math.isfinite(b)) or b <= a:
            raise ParseError("need finite start_s < end_s", path, lineno, 2)
        raw.setdefault(name, []).append((int(round(a * NS_PER_S)), int(round(b * NS_PER_S))))

    usage = {}
    for name, items in raw.items():
        items.sort()
        for (a0, b0), (a1, _) in zip(items, items[1:]):
            if a1 < b0:
                warnings.warn(
                    f"{path}: overlapping {name} annotations merged", AnnotationOverlapWarning, stacklevel=2
                )
                break
        usage[name] = IntervalSet(items)
    return AnnotationSet(usage)


def write_annotations(path, ann: AnnotationSet) -> None:
    out = [f"# {SCHEMA} annotations", ",".join(ANNOTATION_COLUMNS)]
    for name in ann.instruments():
        for a, b in ann[name]:
            out.append(f"{name},{fmt(a / NS_PER_S)},{fmt(b / NS_PER_S)}")
    atomic_write_text(path, "\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# JSON documents


def dump_json(path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_json(path, kind: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno, e.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("expected a JSON object", path, 1)
    schema = doc.get("schema")
    if schema != SCHEMA:
        raise SchemaVersionMismatch(f"{path}: schema {schema!r}, expected {SCHEMA!r}")
    if doc.get("kind") != kind:
        raise ParseError(f"expected kind {kind!r}, found {doc.get('kind')!r}", path)
    return doc


def _vector(doc: dict, key: str, n: int, path) -> np.ndarray:
    v = doc.get(key)
    if not isinstance(v, list) or len(v) != n or not all(isinstance(x, (int, float)) for x in v):
        raise ParseError(f"{key} must be a list of {n} numbers", path)
    return np.array(v, dtype=float)


def pivot_to_doc(cal: PivotCalibration, body_id: str = "") -> dict:
    return {
        "schema": SCHEMA,
        "kind": "pivot-calibration",
        "body_id": body_id,
        "tip_offset": [float(v) for v in cal.tip_offset],
        "pivot_point": [float(v) for v in cal.pivot_point],
        "rms_residual": cal.rms_residual,
        "sample_count": cal.sample_count,
        "rotation_coverage_deg": cal.rotation_coverage_deg,
    }


def write_pivot_calibration(path, cal: PivotCalibration, body_id: str = "") -> None:
    dump_json(path, pivot_to_doc(cal, body_id))


def read_pivot_calibration(path) -> PivotCalibration:
    doc = load_json(path, "pivot-calibration")
    return PivotCalibration(
        _vector(doc, "tip_offset", 3, path),
        _vector(doc, "pivot_point", 3, path),
        float(doc.get("rms_residual", 0.0)),
        int(doc.get("sample_count", 0)),
        float(doc.get("rotation_coverage_deg", 0.0)),
    )


def reference_to_doc(cal: ReferenceCalibration) -> dict:
    return {
        "schema": SCHEMA,
        "kind": "reference-calibration",
        "left_to_right": {
            "rotation": [float(v) for v in cal.left_to_right.rotation],
            "translation": [float(v) for v in cal.left_to_right.translation],
        },
        "rms_residual": cal.rms_residual,
        "pair_count": cal.pair_count,
    }


def write_reference_calibration(path, cal: ReferenceCalibration) -> None:
    dump_json(path, reference_to_doc(cal))


def read_reference_calibration(path) -> ReferenceCalibration:
    doc = load_json(path, "reference-calibration")
    lr = doc.get("left_to_right")
    if not isinstance(lr, dict):
        raise ParseError("left_to_right must be an object", path)
    pose = RigidTransform(_vector(lr, "rotation", 4, path), _vector(lr, "translation", 3, path))
    return ReferenceCalibration(pose, float(doc.get("rms_residual", 0.0)), int(doc.get("pair_count", 1)))


# ---------------------------------------------------------------------------
# trial manifest


@dataclass(frozen=True)
class InstrumentEntry:
    pose_log: Path
    camera: str
    pivot_calibration: Path
    body_id: str | None = None


@dataclass(frozen=True)
class TrialManifest:
    path: Path
    participant: str
    group: str
    dominant_hand: str
    trial: int
    instruments: Mapping[str, InstrumentEntry]
    reference_logs: Mapping[str, Path]
    annotations: Path
    video_contact_s: float | None = None
    reference_calibration: Path | None = None
    sync_offset_s: float | None = None
    reference_bodies: Mapping[str, str] = field(default_factory=dict)


def _require(doc: dict, key: str, kinds, path):
    if key not in doc:
        raise ManifestError(f"{path}: missing field {key!r}")
    value = doc[key]
    if not isinstance(value, kinds):
        raise ManifestError(f"{path}: field {key!r} has the wrong type")
    return value


def load_manifest(path) -> TrialManifest:
    """Load and fully validate a trial manifest; relative paths resolve against its folder."""
    path = Path(path)
    doc = load_json(path, "trial-manifest")
    base = path.parent

    def existing(rel) -> Path:
        if not isinstance(rel, str) or not rel:
            raise ManifestError(f"{path}: expected a file path, got {rel!r}")
        p = (base / rel).resolve()
        if not p.is_file():
            raise MissingFile(p)
        return p

    participant = str(_require(doc, "participant", (str, int), path))
    group = _require(doc, "group", str, path)
    if group not in GROUP_ORDER:
        raise ManifestError(f"{path}: group {group!r} is not one of {GROUP_ORDER}")
    hand = _require(doc, "dominant_hand", str, path)
    if hand not in ("right", "left"):
        raise ManifestError(f"{path}: dominant_hand must be 'right' or 'left'")
    trial = _require(doc, "trial", int, path)

    inst_doc = _require(doc, "instruments", dict, path)
    if not inst_doc:
        raise ManifestError(f"{path}: no instruments listed")
    instruments = {}
    for name, entry in inst_doc.items():
        if name not in INSTRUMENTS:
            raise ManifestError(f"{path}: unknown instrument {name!r}")
        if not isinstance(entry, dict):
            raise ManifestError(f"{path}: instrument {name!r} must be an object")
        camera = entry.get("camera")
        if camera not in ("right", "left"):
            raise ManifestError(f"{path}: instrument {name!r} camera must be 'right' or 'left'")
        instruments[name] = InstrumentEntry(
            existing(entry.get("pose_log")),
            camera,
            existing(entry.get("pivot_calibration")),
            entry.get("body_id"),
        )

    ref_doc = _require(doc, "reference_logs", dict, path)
    ref_logs = {}
    for side in sorted({e.camera for e in instruments.values()}):
        if side not in ref_doc:
            raise ManifestError(f"{path}: no reference log for the {side} camera")
        ref_logs[side] = existing(ref_doc[side])
    ref_bodies = doc.get("reference_bodies", {})
    if not isinstance(ref_bodies, dict):
        raise ManifestError(f"{path}: reference_bodies must be an object")

    refcal = None
    if any(e.camera == "left" for e in instruments.values()):
        if not doc.get("reference_calibration"):
            raise ManifestError(f"{path}: left-camera instruments need a reference_calibration")
    if doc.get("reference_calibration"):
        refcal = existing(doc["reference_calibration"])

    contact = doc.get("video_contact_s")
    if contact is not None and (not isinstance(contact, (int, float)) or not math.isfinite(contact)):
        raise ManifestError(f"{path}: video_contact_s must be a number")
    offset = doc.get("sync_offset_s")
    if offset is not None and (not isinstance(offset, (int, float)) or not math.isfinite(offset)):
        raise ManifestError(f"{path}: sync_offset_s must be a number")

    return TrialManifest(
        path=path.resolve(),
        participant=participant,
        group=group,
        dominant_hand=hand,
        trial=trial,
        instruments=instruments,
        reference_logs=ref_logs,
        annotations=existing(_require(doc, "annotations", str, path)),
        video_contact_s=None if contact is None else float(contact),
        reference_calibration=refcal,
        sync_offset_s=None if offset is None else float(offset),
        reference_bodies=dict(ref_bodies),
    )


# ---------------------------------------------------------------------------
# flat metrics report

ID_COLUMNS = ("participant", "group", "trial", "row_type", "subject")
INSTRUMENT_METRICS = (
    "t_usage", "t_track", "t_capt", "pct_captured",
    "avg_velocity", "avg_acceleration", "avg_jerk",
    "path_length", "npl_annotated", "npl_captured",
)
PAIR_METRICS = ("asd", "bit_usage", "bit_track", "bit_capt", "coord_idx", "efficiency_idx")
METRIC_COLUMNS = INSTRUMENT_METRICS + PAIR_METRICS
REPORT_COLUMNS = ID_COLUMNS + METRIC_COLUMNS + ("flags",)


def _cell(v) -> str:
    return "" if v is None else fmt(v)


def report_rows(report) -> list[dict]:
    """Flatten a metrics report: one row per instrument and one per pair.

    An empty cell means the metric is undefined for that row.
    """
    rows = []
    base = {"participant": report.participant, "group": report.group, "trial": report.trial}
    for name, m in report.instruments.items():
        t, mo = m.time, m.motion
        values = dict(
            t_usage=t.t_usage, t_track=t.t_track, t_capt=t.t_capt, pct_captured=t.pct_captured,
            avg_velocity=mo.avg_velocity, avg_acceleration=mo.avg_acceleration, avg_jerk=mo.avg_jerk,
            path_length=mo.path_length, npl_annotated=mo.npl_annotated, npl_captured=mo.npl_captured,
        )
        rows.append({**base, "row_type": "instrument", "subject": name, **values, "flags": mo.flags + t.flags})
    for (a, b), m in report.pairs.items():
        values = dict(
            asd=m.asd, bit_usage=m.bit_usage, bit_track=m.bit_track, bit_capt=m.bit_capt,
            coord_idx=m.coord_idx, efficiency_idx=m.efficiency_idx,
        )
        rows.append({**base, "row_type": "pair", "subject": f"{a}+{b}", **values, "flags": m.flags})
    return rows


def format_report(reports) -> str:
    out = [f"# {SCHEMA} metrics-report", ",".join(REPORT_COLUMNS)]
    for report in reports:
        for row in report_rows(report):
            cells = [str(row["participant"]), row["group"], str(row["trial"]), row["row_type"], row["subject"]]
            cells += [_cell(row.get(c)) for c in METRIC_COLUMNS]
            cells.append(";".join(row["flags"]))
            out.append(",".join(cells))
    return "\n".join(out) + "\n"


def write_report(path, reports) -> None:
    atomic_write_text(path, format_report(reports))


def read_report(path) -> list[dict]:
    """Rows as dicts; metric cells are floats or None."""
    lines = _read_lines(path)
    _check_tag(path, lines[0] if lines else None, "metrics-report")
    _, start = _header_fields(path, lines, REPORT_COLUMNS)
    rows = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        f = line.split(",")
        if len(f) != len(REPORT_COLUMNS):
            raise ParseError(f"expected {len(REPORT_COLUMNS)} fields, got {len(f)}", path, lineno)
        row = dict(zip(ID_COLUMNS, f[: len(ID_COLUMNS)]))
        row["trial"] = _number(row["trial"], path, lineno, 3, int)
        for k, c in enumerate(METRIC_COLUMNS, start=len(ID_COLUMNS)):
            row[c] = None if f[k] == "" else _number(f[k], path, lineno, k + 1)
        row["flags"] = tuple(x for x in f[-1].split(";") if x)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# statistics results

ANOVA_COLUMNS = (
    "metric", "subject", "groups", "df_between", "df_within",
    "ss_between", "ss_within", "ss_total", "ms_between", "ms_within", "F", "p",
)
TUKEY_COLUMNS = ("metric", "subject", "group_a", "group_b", "mean_diff", "ci_low", "ci_high", "q_stat", "p_adj")


def format_anova(rows) -> str:
    """``rows``: iterable of (metric, subject, AnovaTable)."""
    out = [f"# {SCHEMA} anova", ",".join(ANOVA_COLUMNS)]
    for metric, subject, t in rows:
        out.append(",".join([
            metric, subject, ";".join(t.groups), str(t.df_between), str(t.df_within),
            fmt(t.ss_between), fmt(t.ss_within), fmt(t.ss_total), fmt(t.ms_between), fmt(t.ms_within),
            fmt(t.F), fmt(t.p),
        ]))
    return "\n".join(out) + "\n"


def format_tukey(rows) -> str:
    """``rows``: iterable of (metric, subject, TukeyComparison)."""
    out = [f"# {SCHEMA} tukey", ",".join(TUKEY_COLUMNS)]
    for metric, subject, c in rows:
        out.append(",".join([
            metric, subject, c.group_a, c.group_b,
            fmt(c.mean_diff), fmt(c.ci_low), fmt(c.ci_high), fmt(c.q_stat), fmt(c.p_adj),
        ]))
    return "\n".join(out) + "\n"


def read_table(path, kind: str, columns: tuple[str, ...]) -> list[dict]:
    """Generic reader for the statistics tables; numeric-looking cells become floats."""
    lines = _read_lines(path)
    _check_tag(path, lines[0] if lines else None, kind)
    _, start = _header_fields(path, lines, columns)
    rows = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        f = line.split(",")
        if len(f) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, got {len(f)}", path, lineno)
        row = {}
        for c, v in zip(columns, f):
            try:
                row[c] = float(v) if c not in ("metric", "subject", "groups", "group_a", "group_b") else v
            except ValueError:
                raise ParseError(f"{c} is not a number: {v!r}", path, lineno) from None
        rows.append(row)
    return rows
