"""JSON-lines decode server.

Every request line gets exactly one response line. Malformed requests get an
``{"id", "error"}`` response and the loop continues. Transports: stdio, TCP
(one task per connection, requests answered in order) and HTTP via aiohttp.
"""

import asyncio
import base64
import binascii
import json
import sys
from typing import Any, Dict, Optional, TextIO

import numpy as np
from aiohttp import web

from .decoding import DecodeRequest, FilterSpec, KeepSpec, decode_step
from .errors import ProtocolError, ValidationError
from .logging import LogCategory, get_logger
from .neighbors import NeighborTable
from .vocab import VocabPartition

logger = get_logger("server")

# ValidationError.field_name raised while building a request -> wire code
FIELD_CODES = {
    "logits": "non_finite_logits",
    "logits_len": "bad_logits_len",
    "temperature": "bad_temperature",
    "filter": "bad_filter",
    "keep": "bad_keep",
    "select": "bad_select",
    "seed": "missing_seed",
}


def _number(obj: Dict[str, Any], key: str, code: str, default: Any = None) -> Any:
    value = obj.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(f"{key} must be a number", code=code)
    return value


def _parse_filter(obj: Any) -> FilterSpec:
    if not isinstance(obj, dict):
        raise ProtocolError("filter must be an object", code="bad_filter")
    kind = obj.get("type")
    if kind == "top_p":
        return FilterSpec.top_p(float(_number(obj, "p", "bad_filter")))
    if kind == "top_m":
        m = obj.get("m")
        if isinstance(m, bool) or not isinstance(m, int):
            raise ProtocolError("top_m needs an integer m", code="bad_filter")
        return FilterSpec.top_m(m)
    raise ProtocolError(f"unknown filter type {kind!r}", code="bad_filter")


def _parse_keep(obj: Any) -> KeepSpec:
    if not isinstance(obj, dict):
        raise ProtocolError("keep must be an object", code="bad_keep")
    kind = obj.get("type")
    if kind == "k_prime":
        k_prime = obj.get("k_prime")
        if isinstance(k_prime, bool) or not isinstance(k_prime, int):
            raise ProtocolError("k_prime keep needs an integer k_prime", code="bad_keep")
        return KeepSpec.top_k_prime(k_prime)
    if kind == "threshold":
        return KeepSpec.threshold(float(_number(obj, "t", "bad_keep")))
    raise ProtocolError(f"unknown keep type {kind!r}", code="bad_keep")


def parse_request(obj: Dict[str, Any], v_emb: int) -> DecodeRequest:
    """Build a DecodeRequest from a decoded wire object.

    Raises:
        ProtocolError: with the wire error code.
    """
    request_id = obj.get("id")
    try:
        if not isinstance(request_id, str):
            raise ProtocolError("id must be a string", code="bad_request")
        payload = obj.get("logits_b64")
        if not isinstance(payload, str):
            raise ProtocolError("logits_b64 must be a string", code="bad_request")
        try:
            raw = base64.b64decode(payload, validate=True)
        except (binascii.Error, ValueError) as e:
            raise ProtocolError(f"invalid base64: {e}", code="bad_base64", cause=e)
        if len(raw) != 4 * v_emb:
            raise ProtocolError(f"logits payload is {len(raw)} bytes, expected {4 * v_emb}",
                                code="bad_logits_len")
        logits = np.frombuffer(raw, dtype="<f4")

        seed = obj.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
            raise ProtocolError("seed must be an integer", code="bad_request")

        return DecodeRequest(
            logits=logits,
            temperature=float(_number(obj, "temperature", "bad_temperature")),
            filter=_parse_filter(obj.get("filter")),
            keep=_parse_keep(obj.get("keep")),
            select=obj.get("select", "argmax"),
            seed=seed,
            score_temperature=float(_number(obj, "score_temperature", "bad_temperature", 1.0)),
            request_id=request_id,
        )
    except ProtocolError as e:
        e.request_id = request_id if isinstance(request_id, str) else None
        raise
    except ValidationError as e:
        code = FIELD_CODES.get(e.field_name, "bad_request")
        if e.field_name == "seed" and obj.get("seed") is not None:
            code = "bad_request"
        raise ProtocolError(e.message, code=code,
                            request_id=request_id if isinstance(request_id, str) else None, cause=e)


class DecodeServer:
    """Answers decode requests against a read-only table and partition."""

    def __init__(self, table: NeighborTable, partition: VocabPartition):
        self.table = table
        self.partition = partition

    def handle_object(self, obj: Any) -> Dict[str, Any]:
        if not isinstance(obj, dict):
            return {"id": None, "error": "bad_request"}
        try:
            req = parse_request(obj, self.partition.v_emb)
            outcome = decode_step(req, self.table, self.partition)
            return outcome.to_dict(req.request_id)
        except ProtocolError as e:
            logger.debug(f"Rejected request: {e.message}", LogCategory.PROTOCOL,
                         {"code": e.code}, correlation_id=e.request_id)
            return {"id": e.request_id, "error": e.code}
        except ValidationError as e:
            request_id = obj.get("id") if isinstance(obj.get("id"), str) else None
            return {"id": request_id, "error": FIELD_CODES.get(e.field_name, "bad_request")}
        except Exception as e:
            request_id = obj.get("id") if isinstance(obj.get("id"), str) else None
            logger.error(f"Internal error while decoding: {e}", LogCategory.PROTOCOL,
                         {"error_type": type(e).__name__}, correlation_id=request_id)
            return {"id": request_id, "error": "internal"}

    def handle_line(self, line: str) -> str:
        """One request line in, one response line out (no trailing newline)."""
        try:
            obj = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError):
            return json.dumps({"id": None, "error": "bad_json"})
        return json.dumps(self.handle_object(obj), separators=(",", ":"))

    def serve_stdio(self, stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None) -> int:
        """Serve until EOF; returns the number of requests answered."""
        stdin = stdin or sys.stdin
        stdout = stdout or sys.stdout
        answered = 0
        logger.info("Serving on stdio", LogCategory.PROTOCOL)
        for line in stdin:
            if not line.strip():
                continue
            stdout.write(self.handle_line(line) + "\n")
            stdout.flush()
            answered += 1
        return answered

    async def _handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = writer.get_extra_info("peername")
        logger.debug("Connection opened", LogCategory.PROTOCOL, {"peer": str(peer)})
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                text = line.decode("utf-8", errors="replace")
                response = await asyncio.to_thread(self.handle_line, text)
                writer.write(response.encode("utf-8") + b"\n")
                await writer.drain()
        except ConnectionError as e:
            logger.warning(f"Connection dropped: {e}", LogCategory.PROTOCOL, {"peer": str(peer)})
        finally:
            writer.close()

    async def start_tcp(self, host: str, port: int) -> asyncio.AbstractServer:
        """Start the JSON-lines TCP listener; port 0 picks a free port."""
        server = await asyncio.start_server(self._handle_connection, host, port)
        bound = server.sockets[0].getsockname()
        logger.info("Serving JSON lines over TCP", LogCategory.PROTOCOL,
                    {"host": bound[0], "port": bound[1]})
        return server

    async def serve_tcp(self, host: str, port: int) -> None:
        server = await self.start_tcp(host, port)
        async with server:
            await server.serve_forever()

    def build_http_app(self) -> web.Application:
        """aiohttp app: ``POST /step`` takes one request object, ``GET /health``."""
        app = web.Application()

        async def step(request: web.Request) -> web.Response:
            body = await request.text()
            response = await asyncio.to_thread(self.handle_line, body)
            return web.Response(text=response, content_type="application/json")

        async def health(request: web.Request) -> web.Response:
            return web.json_response({
                "status": "ok",
                "v_emb": self.partition.v_emb,
                "n_content": self.partition.n_content,
                "k": self.table.k,
            })

        app.router.add_post("/step", step)
        app.router.add_get("/health", health)
        return app

    async def serve_http(self, host: str, port: int) -> None:
        runner = web.AppRunner(self.build_http_app())
        await runner.setup()
        site = web.TCPSite(runner, host, port)
        await site.start()
        logger.info("Serving HTTP", LogCategory.PROTOCOL, {"host": host, "port": port})
        try:
            await asyncio.Event().wait()
        finally:
            await runner.cleanup()

