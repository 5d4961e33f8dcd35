"""Black-box victim API over HTTP/JSON, and the matching attacker-side client.

Endpoints (all require an ``X-Api-Key`` header)::

    POST /v1/predict    {"nodes": [int, ...]}   -> {"probs": [[str, ...], ...]}
    GET  /v1/neighbors?node=&hops=              -> {"hops": [[int, ...], ...]}
    GET  /v1/features?node=                     -> {"x": [str, ...]}
    GET  /v1/budget                             -> {"remaining": int, "spent": int}

Prediction and neighborhood requests cost one unit each, whatever the
batch size (at most 32 nodes).  Reals travel as 17-significant-digit
strings so they round-trip exactly.  Errors are ``{"code", "message"}``.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .attack import MAX_BATCH, _hop_lists, gather_partial_knowledge
from .errors import ArgumentError, AuthError, BudgetError, TransportError, ValidationError


def encode_reals(a):
    return [format(float(v), ".17g") for v in np.ravel(a)]


def decode_reals(a):
    return np.array([float(v) for v in a], dtype=float)


@dataclass(eq=False)
class ServerState:
    """Immutable model outputs plus the mutable per-key budget table."""

    probabilities: np.ndarray
    neighbor_graph: object
    features: np.ndarray = None
    budgets: dict = field(default_factory=dict)
    expose_features: bool = True
    expose_neighbors_hops: int = 2

    def __post_init__(self):
        P = np.array(self.probabilities, dtype=float)
        P.setflags(write=False)
        self.probabilities = P
        if self.features is not None:
            X = np.array(self.features, dtype=float)
            X.setflags(write=False)
            self.features = X
        if any(v < 0 for v in self.budgets.values()):
            raise ArgumentError("budgets must be non-negative")
        self.budgets = dict(self.budgets)
        self.spent = {k: 0 for k in self.budgets}
        self._lock = threading.Lock()

    @property
    def num_nodes(self):
        return self.probabilities.shape[0]

    def charge(self, key):
        """Atomically take one unit from ``key``; False when none is left."""
        with self._lock:
            if self.budgets[key] <= 0:
                return False
            self.budgets[key] -= 1
            self.spent[key] += 1
            return True

    def remaining(self, key):
        with self._lock:
            return self.budgets[key], self.spent[key]


class _ApiError(Exception):
    def __init__(self, status, code, message):
        super().__init__(message)
        self.status, self.code, self.message = status, code, message


def _make_handler(state: ServerState):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _send(self, status, doc):
            body = json.dumps(doc).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _key(self):
            key = self.headers.get("X-Api-Key")
            if key is None or key not in state.budgets:
                raise _ApiError(401, "auth", "missing or unknown API key")
            return key

        def _node(self, raw):
            try:
                v = int(raw)
            except (TypeError, ValueError):
                raise _ApiError(400, "bad_request", f"node must be an integer, got {raw!r}") from None
            if not 0 <= v < state.num_nodes:
                raise _ApiError(404, "unknown_node", f"unknown node {v}")
            return v

        def _charge(self, key):
            if not state.charge(key):
                raise _ApiError(429, "budget_exhausted", "query budget exhausted")

        def _dispatch(self, method):
            url = urllib.parse.urlsplit(self.path)
            qs = urllib.parse.parse_qs(url.query)
            one = lambda name: qs.get(name, [None])[0]
            key = self._key()
            if method == "POST" and url.path == "/v1/predict":
                length = int(self.headers.get("Content-Length") or 0)
                try:
                    doc = json.loads(self.rfile.read(length) or b"{}")
                    raw = doc["nodes"]
                    if not isinstance(raw, list):
                        raise TypeError
                except (ValueError, KeyError, TypeError):
                    raise _ApiError(400, "bad_request", "body must be {\"nodes\": [int, ...]}") from None
                if not 1 <= len(raw) <= MAX_BATCH:
                    raise _ApiError(400, "batch_size", f"batch must hold 1 to {MAX_BATCH} nodes")
                nodes = [self._node(v) for v in raw]
                self._charge(key)
                return {"probs": [encode_reals(state.probabilities[v]) for v in nodes]}
            if method == "GET" and url.path == "/v1/neighbors":
                node = self._node(one("node"))
                try:
                    hops = int(one("hops") or 1)
                except ValueError:
                    raise _ApiError(400, "bad_request", "hops must be an integer") from None
                if hops < 0 or hops > state.expose_neighbors_hops:
                    raise _ApiError(403, "policy", "hops exceeds policy")
                self._charge(key)
                return {"hops": _hop_lists(state.neighbor_graph.adjacency, node, hops)}
            if method == "GET" and url.path == "/v1/features":
                node = self._node(one("node"))
                if not state.expose_features or state.features is None:
                    raise _ApiError(404, "features_disabled", "feature requests are disabled")
                return {"x": encode_reals(state.features[node])}
            if method == "GET" and url.path == "/v1/budget":
                remaining, spent = state.remaining(key)
                return {"remaining": remaining, "spent": spent}
            raise _ApiError(404, "not_found", f"no route {method} {url.path}")

        def _handle(self, method):
            try:
                self._send(200, self._dispatch(method))
            except _ApiError as exc:
                self._send(exc.status, {"code": exc.code, "message": exc.message})

        def do_GET(self):
            self._handle("GET")

        def do_POST(self):
            self._handle("POST")

    return Handler


class RunningServer:
    def __init__(self, httpd, thread):
        self.httpd, self.thread = httpd, thread

    @property
    def url(self):
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(state: ServerState, host="127.0.0.1", port=0, block=False):
    """Start the API.  ``port=0`` picks a free port.

    With ``block=False`` the server runs on a daemon thread and a
    :class:`RunningServer` handle is returned; otherwise this call blocks.
    """
    try:
        httpd = ThreadingHTTPServer((host, port), _make_handler(state))
    except OSError as exc:
        raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
    httpd.daemon_threads = True
    if block:
        try:
            httpd.serve_forever()
        finally:
            httpd.server_close()
        return None
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    return RunningServer(httpd, t)


# ---------------------------------------------------------------- client

class RemoteOracle:
    """Client with the same interface as :class:`trendlab.attack.LocalOracle`.

    ``spent`` counts requests the server acknowledged as charged.
    """

    def __init__(self, base_url, api_key, timeout=10.0, retries=3, backoff=0.05):
        self.base = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.spent = 0

    def _request(self, method, path, params=None, body=None):
        url = self.base + path
        if params:
            url += "?" + urllib.parse.urlencode(params)
        data = None if body is None else json.dumps(body).encode()
        attempt = 0
        while True:
            req = urllib.request.Request(url, data=data, method=method,
                                         headers={"X-Api-Key": self.api_key,
                                                  "Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read())
            except urllib.error.HTTPError as exc:
                try:
                    doc = json.loads(exc.read())
                except ValueError:
                    doc = {"code": "http", "message": str(exc)}
                self._raise(exc.code, doc)
            except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
                if attempt >= self.retries:
                    raise TransportError(f"{method} {url} failed: {exc}", retries=attempt) from exc
                attempt += 1
                time.sleep(self.backoff * 2 ** (attempt - 1))

    @staticmethod
    def _raise(status, doc):
        code, msg = doc.get("code", ""), doc.get("message", "")
        if status == 401:
            raise AuthError(msg)
        if status == 429:
            raise BudgetError(msg)
        if code == "unknown_node":
            raise ValidationError(msg)
        if code == "features_disabled":
            raise _FeaturesDisabled(msg)
        if code in ("policy", "batch_size", "bad_request"):
            raise ArgumentError(msg)
        raise TransportError(f"unexpected response {status}: {code} {msg}")

    def predict(self, nodes):
        nodes = [int(v) for v in nodes]
        if not nodes or len(nodes) > MAX_BATCH:
            raise ArgumentError(f"batch size must be between 1 and {MAX_BATCH}")
        doc = self._request("POST", "/v1/predict", body={"nodes": nodes})
        self.spent += 1
        return np.stack([decode_reals(p) for p in doc["probs"]])

    def neighbors(self, node, hops=1):
        doc = self._request("GET", "/v1/neighbors", params={"node": int(node), "hops": int(hops)})
        self.spent += 1
        return [list(map(int, level)) for level in doc["hops"]]

    def features(self, node):
        try:
            doc = self._request("GET", "/v1/features", params={"node": int(node)})
        except _FeaturesDisabled:
            return None
        return decode_reals(doc["x"])

    def budget(self):
        return self._request("GET", "/v1/budget")


class _FeaturesDisabled(Exception):
    pass


def remote_gather(client: RemoteOracle, query, k):
    """Gather partial knowledge over the wire; identical to the local path."""
    return gather_partial_knowledge(query, client, k)
