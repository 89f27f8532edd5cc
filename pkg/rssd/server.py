"""TCP front end of the vault: one thread per connection, one request at a time per connection."""
import base64
import json
import logging
import socketserver

from django.db import close_old_connections

from .exceptions import BindFailed, RSSDError, VaultError
from .protocol import (
    OP_INGEST, OP_QUERY, ProtocolError, encode_error, encode_ingest_reply, encode_ok, recv_message,
    send_message,
)

logger = logging.getLogger(__name__)


def _time_range(request):
    value = request.get('time_range')
    return tuple(value) if value is not None else None


def handle_query(store, request):
    """Run one JSON query against store and return the JSON-able payload."""
    op = request.get('op')
    if op == 'query_versions':
        return [v.to_dict() for v in store.query_versions(request['lpa'], _time_range(request))]
    if op == 'query_log_history':
        return [e.to_dict() for e in store.query_log_history(request['lpa'], _time_range(request))]
    if op == 'fetch_page':
        page = store.fetch_page(request['segment_id'], request['record_index'])
        return {'lpa': page.lpa, 'write_seq': page.write_seq,
                'data': base64.b64encode(page.data).decode('ascii')}
    if op == 'fetch_log_entries':
        entries = store.fetch_log_entries(request['first_seq'], request['last_seq'])
        return [e.to_bytes().hex() for e in entries]
    if op == 'run_detector':
        window = request.get('seq_window')
        report = store.run_detector(request['name'], tuple(window) if window else None,
                                    **request.get('params', {}))
        return report.to_dict()
    if op == 'status':
        return store.status().to_dict()
    raise VaultError(f"unknown query op {op!r}")


class VaultRequestHandler(socketserver.BaseRequestHandler):

    def handle(self):
        close_old_connections()
        peer = '%s:%s' % self.client_address[:2]
        logger.debug("connection from %s", peer)
        try:
            while True:
                body = recv_message(self.request)
                if body is None:
                    break
                send_message(self.request, self.server.dispatch(body))
        except (ProtocolError, OSError) as exc:
            logger.warning("dropping connection from %s: %s", peer, exc)
        finally:
            close_old_connections()


class VaultServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, store):
        self.store = store
        try:
            super().__init__(address, VaultRequestHandler)
        except OSError as exc:
            raise BindFailed(f"cannot listen on {address[0]}:{address[1]}: {exc}") from exc

    @property
    def port(self):
        return self.server_address[1]

    def dispatch(self, body):
        if not body:
            return encode_error(ProtocolError("empty request"))
        op, payload = body[0], body[1:]
        try:
            if op == OP_INGEST:
                return encode_ingest_reply(self.store.ingest(payload))
            if op == OP_QUERY:
                return encode_ok(handle_query(self.store, json.loads(payload)))
            raise ProtocolError(f"unknown request type {op}")
        except (RSSDError, KeyError, TypeError, ValueError) as exc:
            if not isinstance(exc, RSSDError):
                exc = ProtocolError(f"bad request: {exc}")
            logger.warning("request failed: %s", exc)
            return encode_error(exc)
