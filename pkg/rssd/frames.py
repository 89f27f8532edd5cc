"""Compressed, authenticated-encrypted wire frames for offload segments.

    magic "RSSD" | version u8 | segment_id u64 | nonce 12B | ciphertext_len u64 | ciphertext | tag 16B

The plaintext is ``algorithm_id u8 | body`` where body is the canonical
segment serialization, stored (0) or zlib-compressed (1). AES-256-GCM with
nonce = 4 zero bytes || segment_id and associated data = magic || version || segment_id.
"""
import hashlib
import secrets
import struct
import zlib

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .exceptions import AuthenticationFailed, FrameFormatError
from .segments import check_well_formed, parse_segment, serialize_segment

MAGIC = b'RSSD'
FRAME_VERSION = 1
TAG_SIZE = 16
MAX_CIPHERTEXT = 1 << 31

_HEAD = struct.Struct('>4sBQ12sQ')
_AAD = struct.Struct('>4sBQ')

COMPRESSION_NONE = 0
COMPRESSION_ZLIB = 1
COMPRESSORS = {
    'none': COMPRESSION_NONE,
    'zlib': COMPRESSION_ZLIB,
}


class DeviceKey:
    """256-bit symmetric key shared by the device and the vault operator."""

    def __init__(self, raw):
        if len(raw) != 32:
            raise ValueError("device key must be 32 bytes")
        self._raw = bytes(raw)

    @classmethod
    def generate(cls):
        return cls(AESGCM.generate_key(bit_length=256))

    @classmethod
    def from_hex(cls, text):
        return cls(bytes.fromhex(text.strip()))

    @property
    def fingerprint(self):
        return hashlib.sha256(self._raw).hexdigest()[:16]

    def hex(self):
        return self._raw.hex()

    def aead(self):
        return AESGCM(self._raw)

    def __repr__(self):
        return f"DeviceKey({self.fingerprint})"

    def __eq__(self, other):
        return isinstance(other, DeviceKey) and secrets.compare_digest(self._raw, other._raw)

    def __hash__(self):
        return hash(self.fingerprint)


def nonce_for(segment_id):
    return bytes(4) + struct.pack('>Q', segment_id)


def _aad(segment_id):
    return _AAD.pack(MAGIC, FRAME_VERSION, segment_id)


def compress(body, algorithm):
    if algorithm == COMPRESSION_NONE:
        return bytes([COMPRESSION_NONE]) + body
    if algorithm == COMPRESSION_ZLIB:
        return bytes([COMPRESSION_ZLIB]) + zlib.compress(body, 6)
    raise ValueError(f"unknown compression algorithm {algorithm}")


def decompress(payload):
    if not payload:
        raise FrameFormatError("empty plaintext")
    algorithm, body = payload[0], payload[1:]
    if algorithm == COMPRESSION_NONE:
        return body
    if algorithm == COMPRESSION_ZLIB:
        try:
            return zlib.decompress(body)
        except zlib.error as exc:
            raise FrameFormatError(f"bad zlib stream: {exc}") from exc
    raise FrameFormatError(f"unknown compression algorithm {algorithm}")


def encode_frame(segment, key, compression=COMPRESSION_ZLIB):
    check_well_formed(segment)
    plaintext = compress(serialize_segment(segment), compression)
    nonce = nonce_for(segment.segment_id)
    sealed = key.aead().encrypt(nonce, plaintext, _aad(segment.segment_id))
    ciphertext, tag = sealed[:-TAG_SIZE], sealed[-TAG_SIZE:]
    head = _HEAD.pack(MAGIC, FRAME_VERSION, segment.segment_id, nonce, len(ciphertext))
    return head + ciphertext + tag


def frame_segment_id(frame):
    if len(frame) < _HEAD.size:
        raise FrameFormatError("frame shorter than its header")
    magic, version, segment_id, _, _ = _HEAD.unpack_from(frame)
    if magic != MAGIC:
        raise FrameFormatError("bad magic")
    if version != FRAME_VERSION:
        raise FrameFormatError(f"unsupported frame version {version}")
    return segment_id


def decode_frame(frame, key):
    """Verify, decrypt and decompress a frame; returns (segment, canonical bytes)."""
    segment_id = frame_segment_id(frame)
    _, _, _, nonce, length = _HEAD.unpack_from(frame)
    if length > MAX_CIPHERTEXT or len(frame) != _HEAD.size + length + TAG_SIZE:
        raise FrameFormatError("ciphertext length does not match frame size")
    if nonce != nonce_for(segment_id):
        raise AuthenticationFailed("nonce is not bound to the segment id")
    try:
        plaintext = key.aead().decrypt(nonce, bytes(frame[_HEAD.size:]), _aad(segment_id))
    except InvalidTag as exc:
        raise AuthenticationFailed("frame failed authentication") from exc
    raw = decompress(plaintext)
    segment = parse_segment(raw)
    if segment.segment_id != segment_id:
        raise FrameFormatError("segment id in header and payload differ")
    check_well_formed(segment)
    return segment, raw
