"""Device-side and analyst-side handles on a vault.

All links expose the same calls; offload only ever uses send_frame, while
recovery and the commands use the query side.
"""
import base64
import logging
import socket
import threading

from .detectors import DetectionReport, LoggedOp
from .exceptions import VaultUnreachable
from .frames import frame_segment_id
from .oplog import LogEntry
from .protocol import (
    IngestReply, ProtocolError, decode_ingest_reply, decode_response, encode_ingest_request, encode_query,
    recv_message, send_message,
)
from .vault import FetchedPage, VaultStatus, VaultVersion

logger = logging.getLogger(__name__)


class LocalVaultLink:
    """In-process vault, used by tests and the vault_mode=local runs."""

    def __init__(self, store):
        self.store = store

    def send_frame(self, frame):
        return self.store.ingest(frame)

    def query_versions(self, lpa, time_range=None):
        return self.store.query_versions(lpa, time_range)

    def query_log_history(self, lpa, time_range=None):
        return self.store.query_log_history(lpa, time_range)

    def fetch_page(self, segment_id, record_index):
        return self.store.fetch_page(segment_id, record_index)

    def fetch_log_entries(self, first_seq, last_seq):
        return self.store.fetch_log_entries(first_seq, last_seq)

    def run_detector(self, name, seq_window=None, **params):
        return self.store.run_detector(name, seq_window, **params)

    def status(self):
        return self.store.status()

    def close(self):
        pass


class SocketVaultLink:
    """Length-prefixed request/response over one TCP connection, reopened on demand."""

    def __init__(self, host, port, timeout=5.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock = None
        self._lock = threading.Lock()

    def __getstate__(self):
        return {'host': self.host, 'port': self.port, 'timeout': self.timeout}

    def __setstate__(self, state):
        self.__init__(**state)

    def _roundtrip(self, body):
        with self._lock:
            try:
                if self._sock is None:
                    self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
                send_message(self._sock, body)
                reply = recv_message(self._sock)
            except (OSError, ProtocolError) as exc:
                self._drop()
                raise VaultUnreachable(f"vault at {self.host}:{self.port}: {exc}") from exc
            if reply is None:
                self._drop()
                raise VaultUnreachable(f"vault at {self.host}:{self.port} closed the connection")
            return reply

    def _drop(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def _query(self, op, **params):
        return decode_response(self._roundtrip(encode_query(op, **params)))

    def send_frame(self, frame):
        return decode_ingest_reply(self._roundtrip(encode_ingest_request(frame)))

    def query_versions(self, lpa, time_range=None):
        return [VaultVersion.from_dict(v) for v in self._query('query_versions', lpa=lpa, time_range=time_range)]

    def query_log_history(self, lpa, time_range=None):
        return [LoggedOp.from_dict(e) for e in self._query('query_log_history', lpa=lpa, time_range=time_range)]

    def fetch_page(self, segment_id, record_index):
        page = self._query('fetch_page', segment_id=segment_id, record_index=record_index)
        return FetchedPage(page['lpa'], page['write_seq'], base64.b64decode(page['data']))

    def fetch_log_entries(self, first_seq, last_seq):
        entries = self._query('fetch_log_entries', first_seq=first_seq, last_seq=last_seq)
        return [LogEntry.from_bytes(bytes.fromhex(e)) for e in entries]

    def run_detector(self, name, seq_window=None, **params):
        window = list(seq_window) if seq_window else None
        return DetectionReport.from_dict(self._query('run_detector', name=name, seq_window=window, params=params))

    def status(self):
        return VaultStatus.from_dict(self._query('status'))

    def close(self):
        with self._lock:
            self._drop()


class FaultyLink:
    """Wraps another link and misbehaves on send_frame according to a script.

    Script actions, consumed one per send_frame call (then 'pass' forever):
        'pass'       deliver normally
        'drop'       lose the frame, raise VaultUnreachable
        'lose-ack'   deliver, then raise VaultUnreachable as if the reply was lost
        'duplicate'  deliver twice, return the second reply
        'swallow'    pretend the vault acknowledged without delivering
    Setting down=True makes every call fail with VaultUnreachable.
    """

    def __init__(self, inner, script=()):
        self.inner = inner
        self.script = list(script)
        self.down = False
        self.delivered = []

    def __getattr__(self, name):
        if name == 'inner':
            raise AttributeError(name)
        attr = getattr(self.inner, name)
        if not callable(attr):
            return attr

        def call(*args, **kwargs):
            self._check()
            return attr(*args, **kwargs)
        return call

    def _check(self):
        if self.down:
            raise VaultUnreachable("vault link is down")

    def send_frame(self, frame):
        self._check()
        action = self.script.pop(0) if self.script else 'pass'
        if action == 'drop':
            raise VaultUnreachable("frame lost in transit")
        if action == 'swallow':
            return IngestReply.ack(frame_segment_id(frame))
        reply = self.inner.send_frame(frame)
        self.delivered.append(frame)
        if action == 'duplicate':
            reply = self.inner.send_frame(frame)
        elif action == 'lose-ack':
            raise VaultUnreachable("reply lost in transit")
        logger.debug("faulty link %s -> %s", action, reply)
        return reply
