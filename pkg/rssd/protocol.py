"""Length-prefixed message framing shared by the vault server and its clients.

Every message on the stream is ``length u32 | body``.

Requests
    0x01 | frame bytes            ingest an offload frame
    0x02 | JSON {"op": ..., ...}  query / fetch / detector request

Responses
    0x00 | segment_id u64         ACK (ingest)
    0x00 | JSON                   OK (query)
    0x01 | reason u8 | detail u64 NACK (ingest)
    0x02 | JSON {"error", "message", "seq"}  ERROR
"""
import enum
import json
import struct
from dataclasses import dataclass

from . import exceptions

_LENGTH = struct.Struct('>I')
_ACK = struct.Struct('>BQ')
_NACK = struct.Struct('>BBQ')
MAX_MESSAGE = 1 << 30

OP_INGEST = 0x01
OP_QUERY = 0x02

STATUS_OK = 0x00
STATUS_NACK = 0x01
STATUS_ERROR = 0x02


class NackReason(enum.IntEnum):
    AUTH_FAILED = 1
    OUT_OF_ORDER = 2
    CHAIN_MISMATCH = 3
    DIGEST_MISMATCH = 4
    MALFORMED = 5
    SEGMENT_REUSED = 6
    VERSION_ORDER = 7


@dataclass(frozen=True)
class IngestReply:
    acked: bool
    segment_id: int = 0
    reason: NackReason = None
    detail: int = 0

    @classmethod
    def ack(cls, segment_id):
        return cls(True, segment_id)

    @classmethod
    def nack(cls, reason, detail=0):
        return cls(False, reason=NackReason(reason), detail=detail)

    def __str__(self):
        if self.acked:
            return f"Ack({self.segment_id})"
        return f"Nack({self.reason.name}, {self.detail})"


# Errors that may be re-raised on the client side of the query interface.
_REMOTE_ERRORS = {cls.__name__: cls for cls in (
    exceptions.UnknownSegment,
    exceptions.BadIndex,
    exceptions.UnknownDetector,
    exceptions.OutOfRange,
    exceptions.VaultError,
)}


class ProtocolError(exceptions.VaultError):
    pass


def send_message(sock, body):
    sock.sendall(_LENGTH.pack(len(body)) + body)


def _recv_exact(sock, size):
    chunks = []
    while size:
        chunk = sock.recv(min(size, 1 << 20))
        if not chunk:
            return None
        chunks.append(chunk)
        size -= len(chunk)
    return b''.join(chunks)


def recv_message(sock):
    """Next message body, or None when the peer closed the stream cleanly."""
    head = _recv_exact(sock, _LENGTH.size)
    if head is None:
        return None
    (length,) = _LENGTH.unpack(head)
    if length > MAX_MESSAGE:
        raise ProtocolError(f"message of {length} bytes exceeds limit")
    body = _recv_exact(sock, length)
    if body is None:
        raise ProtocolError("stream closed mid-message")
    return body


def encode_ingest_request(frame):
    return bytes([OP_INGEST]) + frame


def encode_query(op, **params):
    return bytes([OP_QUERY]) + json.dumps({'op': op, **params}, sort_keys=True).encode()


def encode_ingest_reply(reply):
    if reply.acked:
        return _ACK.pack(STATUS_OK, reply.segment_id)
    return _NACK.pack(STATUS_NACK, int(reply.reason), reply.detail)


def decode_ingest_reply(body):
    status = body[0] if body else None
    if status == STATUS_OK and len(body) == _ACK.size:
        return IngestReply.ack(_ACK.unpack(body)[1])
    if status == STATUS_NACK and len(body) == _NACK.size:
        _, reason, detail = _NACK.unpack(body)
        return IngestReply.nack(reason, detail)
    if status == STATUS_ERROR:
        raise_remote_error(body)
    raise ProtocolError("malformed ingest reply")


def encode_ok(payload):
    return bytes([STATUS_OK]) + json.dumps(payload, sort_keys=True).encode()


def encode_error(exc):
    return bytes([STATUS_ERROR]) + json.dumps({
        'error': type(exc).__name__,
        'message': str(exc),
        'seq': getattr(exc, 'seq', None),
    }).encode()


def decode_response(body):
    if not body:
        raise ProtocolError("empty response")
    if body[0] == STATUS_OK:
        return json.loads(body[1:])
    if body[0] == STATUS_ERROR:
        raise_remote_error(body)
    raise ProtocolError(f"unexpected response status {body[0]}")


def raise_remote_error(body):
    payload = json.loads(body[1:])
    name, message, seq = payload.get('error'), payload.get('message', ''), payload.get('seq')
    if name == 'DigestMismatch':
        raise exceptions.DigestMismatch(seq, message)
    if name == 'TamperDetected':
        raise exceptions.TamperDetected(seq, message)
    raise _REMOTE_ERRORS.get(name, exceptions.VaultError)(message)
