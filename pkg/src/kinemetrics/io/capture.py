"""Record a live pose stream into per-body pose logs.

The recorder scans for the magic marker, decodes one message at a time and
resynchronises on the next marker after anything it cannot decode. Malformed
input is counted, never fatal. Several sources may feed one session
concurrently: each body log has its own writer lock and the session summary
is updated under a single mutex.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import tempfile
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence, Union

from ..errors import IoFailure
from ..pose import matrix_to_quat
from .files import POSE_COLUMNS, SCHEMA, atomic_write_text, fmt
from .wire import KEEPALIVE, MAGIC, Truncated, WireError, WireMessage, decode_frame, MESSAGE_SIZES

log = logging.getLogger(__name__)

CHUNK = 1 << 16
MAX_MESSAGE = max(MESSAGE_SIZES.values())
Source = Union[bytes, bytearray, memoryview, BinaryIO, socket.socket, Iterable[bytes]]


@dataclass
class CaptureSummary:
    counts: dict[str, int] = field(default_factory=dict)
    visible: dict[str, int] = field(default_factory=dict)
    dropped: int = 0
    keepalives: int = 0
    out_of_order: int = 0
    epoch_ns: int | None = None

    def visibility_ratio(self, body: str) -> float | None:
        n = self.counts.get(body, 0)
        return self.visible.get(body, 0) / n if n else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = SCHEMA
        d["kind"] = "capture-summary"
        d["visibility_ratio"] = {b: self.visibility_ratio(b) for b in sorted(self.counts)}
        d["counts"] = dict(sorted(self.counts.items()))
        d["visible"] = dict(sorted(self.visible.items()))
        return d


class _BodyWriter:
    """Streams rows of one body to a temporary file, renamed into place on close."""

    def __init__(self, path: Path, body: str, camera_id: str, epoch_ns: int):
        self.path = path
        self.lock = threading.Lock()
        self.last_t: int | None = None
        fd, self.tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        self.fh = os.fdopen(fd, "w", encoding="utf-8", newline="\n")
        self.fh.write(f"# {SCHEMA} pose-log\n# epoch_ns={epoch_ns}\n# camera_id={camera_id}\n")
        self.fh.write(",".join(POSE_COLUMNS) + "\n")

    def write(self, t_rel: int, body: str, msg: WireMessage) -> None:
        if msg.visible:
            q = matrix_to_quat(msg.rotation)
            p = msg.translation
        else:
            q, p = (1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
        vis = "1" if msg.visible else "0"
        self.fh.write(",".join([str(t_rel), body, *map(fmt, q), *map(fmt, p), vis]) + "\n")

    def close(self) -> None:
        self.fh.close()
        os.replace(self.tmp, self.path)

    def abort(self) -> None:
        self.fh.close()
        try:
            os.unlink(self.tmp)
        except FileNotFoundError:
            pass


class CaptureSession:
    """One recording: a folder with a pose log per body plus ``summary.json``."""

    def __init__(self, session_path, camera_id: str = ""):
        self.path = Path(session_path)
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoFailure(f"cannot create session folder {self.path}: {e}") from e
        self.camera_id = camera_id
        self.summary = CaptureSummary()
        self._mutex = threading.Lock()
        self._writers: dict[str, _BodyWriter] = {}

    def _writer(self, body: str) -> _BodyWriter:
        with self._mutex:
            w = self._writers.get(body)
            if w is None:
                w = _BodyWriter(self.path / f"{body}.csv", body, self.camera_id, self.summary.epoch_ns)
                self._writers[body] = w
            return w

    def record(self, msg: WireMessage) -> None:
        with self._mutex:
            if self.summary.epoch_ns is None:
                self.summary.epoch_ns = msg.t_ns
            epoch = self.summary.epoch_ns
            if msg.msg_type == KEEPALIVE:
                self.summary.keepalives += 1
                return
        body = msg.device_name
        if not body or "," in body:
            self.drop()
            return
        t_rel = msg.t_ns - epoch
        w = self._writer(body)
        with w.lock:
            if t_rel < 0 or (w.last_t is not None and t_rel <= w.last_t):
                accepted = False
            else:
                try:
                    w.write(t_rel, body, msg)
                except OSError as e:
                    raise IoFailure(f"writing {w.path}: {e}") from e
                w.last_t = t_rel
                accepted = True
        with self._mutex:
            if not accepted:
                self.summary.out_of_order += 1
                return
            self.summary.counts[body] = self.summary.counts.get(body, 0) + 1
            self.summary.visible[body] = self.summary.visible.get(body, 0) + int(msg.visible)

    def drop(self, n: int = 1) -> None:
        with self._mutex:
            self.summary.dropped += n

    def close(self) -> CaptureSummary:
        try:
            for w in self._writers.values():
                w.close()
            atomic_write_text(self.path / "summary.json", json.dumps(self.summary.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as e:
            raise IoFailure(f"finalising session {self.path}: {e}") from e
        return self.summary

    def abort(self) -> None:
        for w in self._writers.values():
            w.abort()


def _chunks(source: Source) -> Iterator[bytes]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        yield bytes(source)
        return
    try:
        if isinstance(source, socket.socket):
            while chunk := source.recv(CHUNK):
                yield chunk
        elif hasattr(source, "read"):
            while chunk := source.read(CHUNK):
                yield chunk
        else:
            for chunk in source:
                yield bytes(chunk)
    except OSError as e:
        raise IoFailure(f"reading pose stream: {e}") from e


def _declared_size(buf, k: int) -> int:
    """Length claimed by the header at ``k`` when it is self-consistent, else 0."""
    if len(buf) - k < 10:
        return 0
    size = MESSAGE_SIZES.get(buf[k + 5], 0)
    return size if int.from_bytes(buf[k + 6 : k + 10], "big") == size else 0


def scan_stream(chunks: Iterable[bytes], on_message, on_drop) -> None:
    """Frame and decode a byte stream, resynchronising on the magic marker.

    Drop accounting: every failed decode at a marker is one drop, except a
    marker lying inside the declared extent of a message that already
    failed. A run of stray bytes counts as one drop unless it directly
    follows a failed decode.
    """
    buf = bytearray()
    shadow = 0  # end of the declared extent of the last failed message
    counted = False  # stray bytes since the last good message are accounted for
    eof = False
    it = iter(chunks)
    while not eof:
        chunk = next(it, None)
        if chunk is None:
            eof = True
        else:
            buf += chunk
        pos = 0
        while True:
            k = buf.find(MAGIC, pos)
            if k < 0:
                # keep a possible partial marker at the tail
                tail = len(buf) if eof else max(pos, len(buf) - (len(MAGIC) - 1))
                if tail > pos and not counted:
                    on_drop()
                    counted = True
                pos = tail
                break
            if k > pos and not counted:
                on_drop()
                counted = True
            try:
                msg, size = decode_frame(bytes(buf[k : k + MAX_MESSAGE]))
            except Truncated:
                if not eof:
                    pos = k
                    break
                if k >= shadow:
                    on_drop()
                counted = True
                pos = len(buf)
                continue
            except WireError:
                if k >= shadow:
                    on_drop()
                shadow = max(shadow, k + max(_declared_size(buf, k), len(MAGIC)))
                counted = True
                pos = k + 1
                continue
            on_message(msg)
            pos = k + size
            counted = False
        del buf[:pos]
        shadow = max(0, shadow - pos)


def capture_stream(sources: Source | Sequence[Source], session_path, camera_id: str = "") -> CaptureSummary:
    """Record one or more wire streams into ``session_path``.

    A list of sources is read concurrently, one thread per source.
    """
    if isinstance(sources, (list, tuple)):
        srcs = list(sources)
    else:
        srcs = [sources]
    session = CaptureSession(session_path, camera_id)
    errors: list[BaseException] = []

    def run(src):
        try:
            scan_stream(_chunks(src), session.record, session.drop)
        except BaseException as e:  # re-raised on the calling thread
            errors.append(e)

    try:
        if len(srcs) == 1:
            scan_stream(_chunks(srcs[0]), session.record, session.drop)
        else:
            threads = [threading.Thread(target=run, args=(s,), daemon=True) for s in srcs]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if errors:
                raise errors[0]
    except BaseException:
        session.abort()
        raise
    summary = session.close()
    log.info("captured %s messages, %d dropped", sum(summary.counts.values()), summary.dropped)
    return summary


def connect(host: str, port: int, timeout: float = 10.0) -> socket.socket:
    try:
        return socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise IoFailure(f"cannot connect to {host}:{port}: {e}") from e
