"""Small JSON HTTP service answering questions over one loaded graph."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .graph import FORMAT_VERSION, SentenceGraph
from .llm import ChatClient, ProviderError
from .pipeline import PipelineConfig, answer_query, answer_to_json
from .retrieval import Ranker

__all__ = ["QueryServer", "make_server"]

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


class QueryServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, graph: SentenceGraph, ranker: Ranker, llm: ChatClient, config: PipelineConfig):
        self.graph = graph
        self.ranker = ranker
        self.llm = llm
        self.config = config
        super().__init__(address, _Handler)


class _Handler(BaseHTTPRequestHandler):
    server: QueryServer
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: str):
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _send_json(self, status: int, payload: dict):
        self._send(status, json.dumps({**payload, "version": FORMAT_VERSION}, sort_keys=True, separators=(",", ":")))

    def _error(self, status: int, kind: str, message: str):
        self._send_json(status, {"error": kind, "message": message})

    def do_GET(self):
        if self.path == "/healthz":
            self._send_json(HTTPStatus.OK, {"status": "ok"})
        elif self.path == "/graph/stats":
            self._send_json(HTTPStatus.OK, self.server.graph.stats())
        else:
            self._error(HTTPStatus.NOT_FOUND, "not_found", f"no route for GET {self.path}")

    def do_POST(self):
        if self.path != "/query":
            self._error(HTTPStatus.NOT_FOUND, "not_found", f"no route for POST {self.path}")
            return
        try:
            length = int(self.headers.get("Content-Length") or 0)
        except ValueError:
            length = -1
        if length < 0 or length > MAX_BODY:
            self._error(HTTPStatus.BAD_REQUEST, "bad_request", "missing or invalid Content-Length")
            return
        try:
            body = json.loads(self.rfile.read(length) or b"null")
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            self._error(HTTPStatus.BAD_REQUEST, "bad_request", f"invalid JSON: {exc}")
            return
        problem = _check_query_body(body)
        if problem:
            self._error(HTTPStatus.BAD_REQUEST, "bad_request", problem)
            return

        config = self.server.config
        if body.get("k") is not None:
            config = replace(config, k_anchors=body["k"])
        try:
            answer = answer_query(body["question"], self.server.graph, self.server.ranker, self.server.llm, config)
        except ProviderError as exc:
            self._error(HTTPStatus.BAD_GATEWAY, exc.kind, str(exc))
            return
        self._send(HTTPStatus.OK, answer_to_json(answer, include_trace=bool(body.get("trace", False))))


def _check_query_body(body) -> str | None:
    if not isinstance(body, dict):
        return "body must be a JSON object"
    unknown = set(body) - {"question", "k", "trace"}
    if unknown:
        return f"unknown fields: {sorted(unknown)}"
    if not isinstance(body.get("question"), str) or not body["question"].strip():
        return "'question' must be a nonempty string"
    k = body.get("k")
    if k is not None and (isinstance(k, bool) or not isinstance(k, int) or k < 1):
        return "'k' must be a positive integer"
    if "trace" in body and not isinstance(body["trace"], bool):
        return "'trace' must be a boolean"
    return None


def make_server(
    graph: SentenceGraph,
    ranker: Ranker,
    llm: ChatClient,
    config: PipelineConfig,
    host: str = "127.0.0.1",
    port: int = 8080,
) -> QueryServer:
    return QueryServer((host, port), graph.freeze(), ranker, llm, config)
