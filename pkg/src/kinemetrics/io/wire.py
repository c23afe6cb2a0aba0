"""Binary pose-stream messages.

Layout, big-endian throughout::

    offset  size  field
    0       4     magic "PSTR"
    4       1     version (1)
    5       1     msg_type (1 TRANSFORM, 2 KEEPALIVE)
    6       4     total message length in bytes, CRC included
    10      16    device name, ASCII, NUL padded
    26      8     t_ns, u64
    34      1     status (0 OK, 1 NOT_VISIBLE)
    35      96    TRANSFORM only: 12 x f64, rotation rows (9) then translation (3)
    131     4     CRC-32 (IEEE) of every preceding byte

A TRANSFORM is 135 bytes, a KEEPALIVE 39.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import KinemetricsError
from ..pose import RigidTransform

MAGIC = b"PSTR"
VERSION = 1
TRANSFORM = 1
KEEPALIVE = 2
STATUS_OK = 0
STATUS_NOT_VISIBLE = 1
NAME_SIZE = 16

_HEADER = struct.Struct(">4sBBI16sQB")
_PAYLOAD = struct.Struct(">12d")
_CRC = struct.Struct(">I")
HEADER_SIZE = _HEADER.size
TRANSFORM_SIZE = HEADER_SIZE + _PAYLOAD.size + _CRC.size
KEEPALIVE_SIZE = HEADER_SIZE + _CRC.size
MESSAGE_SIZES = {TRANSFORM: TRANSFORM_SIZE, KEEPALIVE: KEEPALIVE_SIZE}
ORTHONORMAL_TOL = 1e-6


class WireError(KinemetricsError):
    exit_code = 90


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class UnknownMessageType(WireError):
    pass


class BadLength(WireError):
    pass


class Truncated(WireError):
    pass


class CrcMismatch(WireError):
    pass


class MalformedPayload(WireError):
    pass


@dataclass(frozen=True)
class WireMessage:
    msg_type: int
    device_name: str
    t_ns: int
    status: int = STATUS_OK
    matrix: tuple[float, ...] = ()

    @classmethod
    def transform(cls, device_name: str, t_ns: int, pose: RigidTransform, visible: bool = True) -> WireMessage:
        values = tuple(float(v) for v in pose.rotation_matrix.ravel()) + tuple(float(v) for v in pose.translation)
        return cls(TRANSFORM, device_name, t_ns, STATUS_OK if visible else STATUS_NOT_VISIBLE, values)

    @classmethod
    def keepalive(cls, device_name: str, t_ns: int) -> WireMessage:
        return cls(KEEPALIVE, device_name, t_ns)

    @property
    def visible(self) -> bool:
        return self.status == STATUS_OK

    @property
    def rotation(self) -> np.ndarray:
        return np.array(self.matrix[:9]).reshape(3, 3)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.matrix[9:12])

    def pose(self) -> RigidTransform:
        m = np.zeros((3, 4))
        m[:, :3] = self.rotation
        m[:, 3] = self.translation
        return RigidTransform.from_matrix(m)


def _check_rotation(values) -> None:
    r = np.array(values[:9]).reshape(3, 3)
    if np.max(np.abs(r)) > 1.0 + ORTHONORMAL_TOL:
        raise MalformedPayload("rotation entries exceed 1 in magnitude")
    if np.max(np.abs(r @ r.T - np.eye(3))) > ORTHONORMAL_TOL or np.linalg.det(r) < 0:
        raise MalformedPayload("rotation block is not orthonormal")


def _validate(msg: WireMessage) -> bytes:
    if msg.msg_type not in MESSAGE_SIZES:
        raise UnknownMessageType(f"unknown message type {msg.msg_type}")
    try:
        name = msg.device_name.encode("ascii")
    except UnicodeEncodeError:
        raise MalformedPayload(f"device name {msg.device_name!r} is not ASCII") from None
    if len(name) > NAME_SIZE or b"\0" in name:
        raise MalformedPayload(f"device name {msg.device_name!r} does not fit {NAME_SIZE} bytes")
    if not 0 <= msg.t_ns < 2**64:
        raise MalformedPayload(f"timestamp {msg.t_ns} outside u64")
    if msg.status not in (STATUS_OK, STATUS_NOT_VISIBLE):
        raise MalformedPayload(f"unknown status {msg.status}")
    if msg.msg_type == TRANSFORM:
        if len(msg.matrix) != 12:
            raise MalformedPayload("TRANSFORM payload needs 12 values")
        if not all(math.isfinite(v) for v in msg.matrix):
            raise MalformedPayload("TRANSFORM payload has non-finite values")
        if msg.status == STATUS_OK:
            _check_rotation(msg.matrix)
    elif msg.matrix:
        raise MalformedPayload("KEEPALIVE carries no payload")
    return name


def encode_wire(msg: WireMessage) -> bytes:
    name = _validate(msg)
    size = MESSAGE_SIZES[msg.msg_type]
    body = _HEADER.pack(MAGIC, VERSION, msg.msg_type, size, name, msg.t_ns, msg.status)
    if msg.msg_type == TRANSFORM:
        body += _PAYLOAD.pack(*msg.matrix)
    return body + _CRC.pack(zlib.crc32(body))


def decode_frame(data: bytes) -> tuple[WireMessage, int]:
    """Decode the message at the start of ``data``; returns it and its length.

    Never looks past the declared message length.
    """
    data = memoryview(data)
    n = len(data)
    if n < 4:
        if bytes(data) == MAGIC[:n]:
            raise Truncated(f"{n} bytes, header needs {HEADER_SIZE}")
        raise BadMagic("bad magic")
    if bytes(data[:4]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(data[:4])!r}")
    if n < 5:
        raise Truncated("missing version")
    if data[4] != VERSION:
        raise UnsupportedVersion(f"version {data[4]} is not supported")
    if n < 6:
        raise Truncated("missing message type")
    msg_type = data[5]
    if msg_type not in MESSAGE_SIZES:
        raise UnknownMessageType(f"unknown message type {msg_type}")
    if n < 10:
        raise Truncated("missing length")
    size = int.from_bytes(data[6:10], "big")
    if size != MESSAGE_SIZES[msg_type]:
        raise BadLength(f"declared length {size}, type {msg_type} is {MESSAGE_SIZES[msg_type]} bytes")
    if n < size:
        raise Truncated(f"{n} of {size} bytes")
    (crc,) = _CRC.unpack_from(data, size - 4)
    if zlib.crc32(data[: size - 4]) != crc:
        raise CrcMismatch("CRC mismatch")

    _, _, _, _, raw_name, t_ns, status = _HEADER.unpack_from(data, 0)
    name = raw_name.rstrip(b"\0")
    if b"\0" in name:
        raise MalformedPayload("device name has embedded NUL")
    try:
        device = name.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedPayload("device name is not ASCII") from None
    if status not in (STATUS_OK, STATUS_NOT_VISIBLE):
        raise MalformedPayload(f"unknown status {status}")
    matrix: tuple[float, ...] = ()
    if msg_type == TRANSFORM:
        matrix = _PAYLOAD.unpack_from(data, HEADER_SIZE)
        if not all(math.isfinite(v) for v in matrix):
            raise MalformedPayload("TRANSFORM payload has non-finite values")
        if status == STATUS_OK:
            _check_rotation(matrix)
    return WireMessage(msg_type, device, t_ns, status, matrix), size


def decode_wire(data: bytes) -> WireMessage:
    return decode_frame(data)[0]
